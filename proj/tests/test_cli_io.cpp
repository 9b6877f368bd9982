#include <doctest.h>

#include "helpers.hpp"

using namespace blocktraj;

TEST_CASE("run config round-trips through json and hashes stably") {
    RunConfig a;
    a.network_path = "net.json";
    a.d_model = 96;
    a.train.lr = 5e-4;
    a.cfg_w = 0.25;
    a.seed = 42;
    RunConfig b = RunConfig::from_json(a.to_json());
    CHECK(b.network_path == "net.json");
    CHECK(b.d_model == 96);
    CHECK(b.train.lr == 5e-4);
    CHECK(b.cfg_w == 0.25);
    CHECK(a.hash() == b.hash());
    b.seed = 43;
    CHECK(a.hash() != b.hash());
}

TEST_CASE("flag-style overrides merge over config fields") {
    RunConfig base;
    base.d_model = 64;
    base.decoder = "block";
    nlohmann::json overrides{{"model", {{"d_model", 128}}}};
    RunConfig merged = RunConfig::from_json(base.merged(overrides));
    CHECK(merged.d_model == 128);
    CHECK(merged.decoder == "block");
}

TEST_CASE("named sub-streams are independent and stable") {
    CHECK(stream_seed(1, "data") == stream_seed(1, "data"));
    CHECK(stream_seed(1, "data") != stream_seed(1, "gumbel"));
    CHECK(stream_seed(1, "data") != stream_seed(2, "data"));
    CHECK(stream_seed(1, "request", 0) != stream_seed(1, "request", 1));
}

TEST_CASE("checkpoints restore parameters bit-exactly with metadata") {
    const auto dir = testutil::temp_dir("ckpt");
    ParamStore params;
    Rng rng(5);
    Tensor w(7, 3);
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.normal();
    params.add("layer.w", w);
    params.add("layer.b", Tensor(1, 3, 0.125));
    save_checkpoint(dir / "p.ckpt", params, {{"custom", "meta"}});

    ParamStore loaded;
    nlohmann::json meta = load_checkpoint(dir / "p.ckpt", loaded);
    CHECK(meta["custom"] == "meta");
    CHECK(loaded.value("layer.w").storage() == params.value("layer.w").storage());
    CHECK(loaded.value("layer.b").storage() == params.value("layer.b").storage());
}

TEST_CASE("model checkpoints verify the network identity") {
    const auto dir = testutil::temp_dir("ckpt_net");
    auto net = generate_city(testutil::small_city_spec(3, 3));
    ModelBundle m = testutil::tiny_model(net, 8, 1);
    save_model(dir / "m.ckpt", m, net, {{"bins_hash", "0"}});

    ModelBundle restored = load_model(dir / "m.ckpt", net);
    CHECK(restored.params.value("dn.out_b").storage() == m.params.value("dn.out_b").storage());
    CHECK(restored.dcfg.d_model == m.dcfg.d_model);

    auto other = generate_city(testutil::small_city_spec(3, 4));
    CHECK_THROWS_AS(load_model(dir / "m.ckpt", other), IntegrityError);
}

TEST_CASE("generated trajectory files round-trip with their stats") {
    const auto dir = testutil::temp_dir("gen_io");
    std::vector<GeneratedRecord> records(2);
    records[0].segments = {1, 2, 3};
    records[0].stats.nfe = 16;
    records[0].stats.dest_reached = true;
    records[1].segments = {4};
    records[1].stats.dead_ends = 1;
    save_generated(dir / "g.jsonl", records);
    auto loaded = load_generated(dir / "g.jsonl");
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].segments == records[0].segments);
    CHECK(loaded[0].stats.nfe == 16);
    CHECK(loaded[0].stats.dest_reached);
    CHECK(loaded[1].stats.dead_ends == 1);
}

TEST_CASE("checkpoint header rejects foreign files") {
    const auto dir = testutil::temp_dir("ckpt_bad");
    write_text_file(dir / "bad.ckpt", "{\"magic\": \"something-else\"}\n");
    ParamStore p;
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt", p), IntegrityError);
}

TEST_CASE("tiny ring network used by grad-check is well formed") {
    RoadNetwork net = tiny_ring_network();
    CHECK(net.size() == 6);
    for (SegmentId i = 0; i < net.size(); ++i) CHECK(net.out_neighbors(i).size() == 2);
    PenaltyMatrix p = build_penalty(net);
    int valid = 0;
    for (double v : p.values)
        if (v == 0.0) ++valid;
    CHECK(valid == 12);
}
