#include "blocktraj/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

namespace blocktraj {

using nlohmann::json;

// ----------------------------------------------------------------------
// RunConfig
// ----------------------------------------------------------------------

json RunConfig::to_json() const {
    json j;
    j["paths"] = {{"network", network_path},     {"corpus_prefix", corpus_prefix},
                  {"bins", bins_path},           {"checkpoint", checkpoint_path},
                  {"requests", requests_path},   {"generated", generated_path},
                  {"out", out_path}};
    j["city"] = {{"rows", rows}, {"cols", cols}, {"block_len_m", block_len_m},
                 {"edge_drop_prob", edge_drop_prob}};
    j["data"] = {{"n_records", n_records}, {"min_len", min_len}, {"max_len", max_len}};
    j["model"] = {{"d_model", d_model},   {"n_layers", n_layers}, {"n_heads", n_heads},
                  {"ffn_mult", ffn_mult}, {"use_rne", use_rne},   {"rne_dim", rne_dim},
                  {"rne_layers", rne_layers}, {"rne_proj_hidden", rne_proj_hidden}};
    j["train"] = train.to_json();
    j["sample"] = {{"decoder", decoder},       {"tcs", tcs},
                   {"cfg_w", cfg_w},           {"temperature", temperature},
                   {"steps", sample_steps},    {"block_len", sample_block_len},
                   {"blocks", sample_blocks},  {"limit", sample_limit}};
    j["eval"] = {{"eps", eval_eps}};
    j["seed"] = seed;
    j["deterministic"] = deterministic;
    j["workers"] = workers;
    return j;
}

json RunConfig::merged(const json& overrides) const {
    json base = to_json();
    base.merge_patch(overrides);
    return base;
}

RunConfig RunConfig::from_json(const json& j) {
    RunConfig c;
    if (j.contains("paths")) {
        const auto& p = j["paths"];
        c.network_path = p.value("network", c.network_path);
        c.corpus_prefix = p.value("corpus_prefix", c.corpus_prefix);
        c.bins_path = p.value("bins", c.bins_path);
        c.checkpoint_path = p.value("checkpoint", c.checkpoint_path);
        c.requests_path = p.value("requests", c.requests_path);
        c.generated_path = p.value("generated", c.generated_path);
        c.out_path = p.value("out", c.out_path);
    }
    if (j.contains("city")) {
        const auto& p = j["city"];
        c.rows = p.value("rows", c.rows);
        c.cols = p.value("cols", c.cols);
        c.block_len_m = p.value("block_len_m", c.block_len_m);
        c.edge_drop_prob = p.value("edge_drop_prob", c.edge_drop_prob);
    }
    if (j.contains("data")) {
        const auto& p = j["data"];
        c.n_records = p.value("n_records", c.n_records);
        c.min_len = p.value("min_len", c.min_len);
        c.max_len = p.value("max_len", c.max_len);
    }
    if (j.contains("model")) {
        const auto& p = j["model"];
        c.d_model = p.value("d_model", c.d_model);
        c.n_layers = p.value("n_layers", c.n_layers);
        c.n_heads = p.value("n_heads", c.n_heads);
        c.ffn_mult = p.value("ffn_mult", c.ffn_mult);
        c.use_rne = p.value("use_rne", c.use_rne);
        c.rne_dim = p.value("rne_dim", c.rne_dim);
        c.rne_layers = p.value("rne_layers", c.rne_layers);
        c.rne_proj_hidden = p.value("rne_proj_hidden", c.rne_proj_hidden);
    }
    if (j.contains("train")) c.train = TrainConfig::from_json(j["train"]);
    if (j.contains("sample")) {
        const auto& p = j["sample"];
        c.decoder = p.value("decoder", c.decoder);
        c.tcs = p.value("tcs", c.tcs);
        c.cfg_w = p.value("cfg_w", c.cfg_w);
        c.temperature = p.value("temperature", c.temperature);
        c.sample_steps = p.value("steps", c.sample_steps);
        c.sample_block_len = p.value("block_len", c.sample_block_len);
        c.sample_blocks = p.value("blocks", c.sample_blocks);
        c.sample_limit = p.value("limit", c.sample_limit);
    }
    if (j.contains("eval")) c.eval_eps = j["eval"].value("eps", c.eval_eps);
    c.seed = j.value("seed", c.seed);
    c.deterministic = j.value("deterministic", c.deterministic);
    c.workers = j.value("workers", c.workers);
    return c;
}

// ----------------------------------------------------------------------
// gen-city / gen-data
// ----------------------------------------------------------------------

void run_gen_city(const RunConfig& cfg) {
    if (cfg.out_path.empty()) throw UsageError("gen-city: --out is required");
    GridCitySpec spec;
    spec.rows = cfg.rows;
    spec.cols = cfg.cols;
    spec.block_len_m = cfg.block_len_m;
    spec.seed = cfg.seed;
    spec.edge_drop_prob = cfg.edge_drop_prob;
    const RoadNetwork net = generate_city(spec);
    save_network(cfg.out_path, net, hash_hex(cfg.hash()));
}

void run_gen_data(const RunConfig& cfg) {
    if (cfg.network_path.empty() || cfg.corpus_prefix.empty())
        throw UsageError("gen-data: --network and --corpus-prefix are required");
    const RoadNetwork net = load_network(cfg.network_path);
    std::vector<TripRecord> records =
        synthesize_corpus(net, cfg.n_records, cfg.seed, cfg.min_len, cfg.max_len);
    CorpusSplit split = split_corpus(std::move(records), cfg.seed);
    save_corpus(cfg.corpus_prefix + ".train", split.train);
    save_corpus(cfg.corpus_prefix + ".val", split.val);
    save_corpus(cfg.corpus_prefix + ".test", split.test);
    const BinTable bins = fit_bins(split.train);
    const std::string bins_path =
        cfg.bins_path.empty() ? cfg.corpus_prefix + ".bins.json" : cfg.bins_path;
    save_bins(bins_path, bins, cfg.hash());
    json meta{{"config_hash", hash_hex(cfg.hash())},
              {"network_hash", hash_hex(net.identity_hash())},
              {"n_train", split.train.size()},
              {"n_val", split.val.size()},
              {"n_test", split.test.size()},
              {"bins", bins_path}};
    write_text_file(cfg.corpus_prefix + ".meta.json", meta.dump(2) + "\n");
}

// ----------------------------------------------------------------------
// train
// ----------------------------------------------------------------------

namespace {

std::string default_bins_path(const RunConfig& cfg) {
    return cfg.bins_path.empty() ? cfg.corpus_prefix + ".bins.json" : cfg.bins_path;
}

std::size_t max_route_len(const std::vector<TripRecord>& a, const std::vector<TripRecord>& b) {
    std::size_t m = 1;
    for (const auto& r : a) m = std::max(m, r.segments.size());
    for (const auto& r : b) m = std::max(m, r.segments.size());
    return m;
}

}  // namespace

TrainSummary run_train(const RunConfig& cfg) {
    if (cfg.network_path.empty() || cfg.corpus_prefix.empty() || cfg.checkpoint_path.empty())
        throw UsageError("train: --network, --corpus-prefix and --checkpoint are required");
    const RoadNetwork net = load_network(cfg.network_path);
    const std::vector<TripRecord> train_recs = load_corpus(cfg.corpus_prefix + ".train");
    const std::vector<TripRecord> val_recs = load_corpus(cfg.corpus_prefix + ".val");
    const BinTable bins = load_bins(default_bins_path(cfg));

    TrainConfig tcfg = cfg.train;
    tcfg.seed = cfg.seed;

    DenoiserConfig dcfg;
    dcfg.d_model = cfg.d_model;
    dcfg.n_layers = cfg.n_layers;
    dcfg.n_heads = cfg.n_heads;
    dcfg.ffn_mult = cfg.ffn_mult;
    dcfg.use_rne = cfg.use_rne;
    const std::size_t lmax = max_route_len(train_recs, val_recs);
    const std::size_t max_blocks = (lmax + 1 + tcfg.l_prime - 1) / tcfg.l_prime;
    dcfg.max_positions = kPromptLen + max_blocks * tcfg.l_prime;

    RneConfig rcfg;
    rcfg.dim = cfg.rne_dim;
    rcfg.n_layers = cfg.rne_layers;
    rcfg.proj_hidden = cfg.rne_proj_hidden;

    ModelBundle model = make_model(net, dcfg, rcfg, cfg.seed);

    const std::string csv_path = cfg.checkpoint_path + ".metrics.csv";
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw DataError("cannot write metrics log: " + csv_path);
    csv << "step,train_loss,val_loss,lr,wall_ms\n";

    json meta{{"config_hash", hash_hex(cfg.hash())},
              {"bins_hash", hash_hex(bins_hash(bins))},
              {"train", tcfg.to_json()}};

    auto save_tag = [&](const std::string& path, std::size_t step) {
        json m = meta;
        m["step"] = step;
        save_model(path, model, net, m);
    };

    TrainResult result = train(
        model, train_recs, val_recs, bins, tcfg,
        [&](const TrainLogRow& row) {
            char line[160];
            std::snprintf(line, sizeof(line), "%zu,%.10g,%.10g,%.10g,%.3f\n", row.step,
                          row.train_loss, row.val_loss, row.lr,
                          cfg.deterministic ? 0.0 : row.wall_ms);
            csv << line;
            csv.flush();
            std::cerr << "step " << row.step << " train " << row.train_loss << " val "
                      << row.val_loss << " lr " << row.lr << "\n";
        },
        [&](std::size_t step) { save_tag(cfg.checkpoint_path, step); },
        [&](std::size_t step) { save_tag(cfg.checkpoint_path + ".last", step); });

    TrainSummary summary;
    summary.steps = result.steps;
    summary.best_val = result.best_val;
    summary.final_masked_ce =
        eval_masked_ce(model, val_recs.empty() ? train_recs : val_recs, bins, tcfg.l_prime,
                       tcfg.t_min, cfg.seed, 512);
    summary.checkpoint = cfg.checkpoint_path;
    summary.metrics_csv = csv_path;
    return summary;
}

// ----------------------------------------------------------------------
// sample / bench
// ----------------------------------------------------------------------

std::vector<GeneratedRecord> generate_batch(const TrajectorySampler& sampler,
                                            const std::vector<TripRecord>& requests,
                                            const RunConfig& cfg, const std::string& decoder,
                                            std::size_t l_prime, std::size_t n_blocks) {
    std::vector<GeneratedRecord> results(requests.size());
    auto work = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            GenerationRequest req;
            req.cond = conditioning_of(requests[i]);
            req.n_blocks = n_blocks;
            req.l_prime = l_prime;
            req.steps = cfg.sample_steps;
            req.cfg_w = cfg.cfg_w;
            req.temperature = cfg.temperature;
            req.tcs = cfg.tcs;
            req.seed = stream_seed(cfg.seed, "request", i);
            const GenerationResult r = sampler.run(decoder, req);
            results[i] = {r.segments, r.stats};
        }
    };
    const std::size_t n_workers = std::max<std::size_t>(1, cfg.workers);
    if (n_workers == 1 || requests.size() < 2) {
        work(0, requests.size());
    } else {
        std::vector<std::thread> threads;
        const std::size_t chunk = (requests.size() + n_workers - 1) / n_workers;
        for (std::size_t w = 0; w < n_workers; ++w) {
            const std::size_t lo = w * chunk;
            const std::size_t hi = std::min(requests.size(), lo + chunk);
            if (lo < hi) threads.emplace_back(work, lo, hi);
        }
        for (auto& t : threads) t.join();
    }
    return results;
}

void save_generated(const std::filesystem::path& path,
                    const std::vector<GeneratedRecord>& records) {
    std::ostringstream out;
    for (const GeneratedRecord& r : records) {
        json j{{"segments", r.segments},
               {"nfe", r.stats.nfe},
               {"dead_ends", r.stats.dead_ends},
               {"dest_reached", r.stats.dest_reached},
               {"eos_sampled", r.stats.eos_sampled},
               {"untruncated_len", r.stats.untruncated_len},
               {"blocks", r.stats.blocks}};
        out << j.dump() << "\n";
    }
    write_text_file(path, out.str());
}

std::vector<GeneratedRecord> load_generated(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open generated file: " + path.string());
    std::vector<GeneratedRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw IntegrityError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        GeneratedRecord r;
        r.segments = j.at("segments").get<std::vector<SegmentId>>();
        r.stats.nfe = j.value("nfe", 0L);
        r.stats.dead_ends = j.value("dead_ends", 0L);
        r.stats.dest_reached = j.value("dest_reached", false);
        r.stats.eos_sampled = j.value("eos_sampled", false);
        r.stats.untruncated_len = j.value("untruncated_len", std::size_t{0});
        r.stats.blocks = j.value("blocks", std::size_t{0});
        records.push_back(std::move(r));
    }
    return records;
}

namespace {

struct LoadedModel {
    RoadNetwork net;
    ModelBundle model;
    BinTable bins;
    json meta;
    std::size_t train_l_prime = 16;
};

LoadedModel load_for_sampling(const RunConfig& cfg) {
    if (cfg.network_path.empty() || cfg.checkpoint_path.empty())
        throw UsageError("--network and --checkpoint are required");
    LoadedModel lm{load_network(cfg.network_path), {}, {}, {}, 16};
    lm.model = load_model(cfg.checkpoint_path, lm.net, &lm.meta);
    const std::string bins_path = default_bins_path(cfg);
    if (bins_path == ".bins.json")
        throw UsageError("--bins (or --corpus-prefix) is required to encode prompts");
    lm.bins = load_bins(bins_path);
    const std::string stored = lm.meta.value("bins_hash", "");
    if (!stored.empty() && stored != hash_hex(bins_hash(lm.bins)))
        throw IntegrityError("bin table " + bins_path + " does not match the checkpoint (hash " +
                             hash_hex(bins_hash(lm.bins)) + " vs " + stored + ")");
    if (lm.meta.contains("train"))
        lm.train_l_prime = TrainConfig::from_json(lm.meta["train"]).l_prime;
    return lm;
}

std::pair<std::size_t, std::size_t> resolve_budget(const RunConfig& cfg, const LoadedModel& lm) {
    const std::size_t l_prime =
        cfg.sample_block_len > 0 ? cfg.sample_block_len : lm.train_l_prime;
    const std::size_t capacity = (lm.model.dcfg.max_positions - kPromptLen) / l_prime;
    if (capacity == 0)
        throw UsageError("block length " + std::to_string(l_prime) +
                         " does not fit the model position budget");
    std::size_t n_blocks = cfg.sample_blocks > 0 ? cfg.sample_blocks : capacity;
    if (n_blocks > capacity)
        throw UsageError("requested " + std::to_string(n_blocks) + " blocks but the model fits " +
                         std::to_string(capacity));
    return {l_prime, n_blocks};
}

}  // namespace

SampleSummary run_sample(const RunConfig& cfg) {
    if (cfg.requests_path.empty() || cfg.out_path.empty())
        throw UsageError("sample: --requests and --out are required");
    LoadedModel lm = load_for_sampling(cfg);
    std::vector<TripRecord> requests = load_corpus(cfg.requests_path);
    if (cfg.sample_limit > 0 && requests.size() > cfg.sample_limit)
        requests.resize(cfg.sample_limit);
    const auto [l_prime, n_blocks] = resolve_budget(cfg, lm);

    TrajectorySampler sampler(lm.model, lm.net, lm.bins);
    const std::vector<GeneratedRecord> results =
        generate_batch(sampler, requests, cfg, cfg.decoder, l_prime, n_blocks);
    save_generated(cfg.out_path, results);

    SampleSummary s;
    s.n = results.size();
    std::size_t reached = 0;
    for (const GeneratedRecord& r : results) {
        s.nfe_total += r.stats.nfe;
        s.dead_ends += r.stats.dead_ends;
        reached += r.stats.dest_reached ? 1 : 0;
    }
    s.dest_reached_rate =
        results.empty() ? 0.0 : static_cast<double>(reached) / static_cast<double>(results.size());
    s.output = cfg.out_path;
    s.stats_sidecar = cfg.out_path + ".stats.json";
    json sidecar{{"n", s.n},
                 {"nfe_total", s.nfe_total},
                 {"nfe_mean", s.n ? static_cast<double>(s.nfe_total) / static_cast<double>(s.n) : 0.0},
                 {"dead_ends", s.dead_ends},
                 {"dest_reached_rate", s.dest_reached_rate},
                 {"decoder", cfg.decoder},
                 {"tcs", cfg.tcs},
                 {"cfg_w", cfg.cfg_w},
                 {"block_len", l_prime},
                 {"blocks", n_blocks},
                 {"steps", cfg.sample_steps},
                 {"config_hash", hash_hex(cfg.hash())}};
    write_text_file(s.stats_sidecar, sidecar.dump(2) + "\n");
    return s;
}

MetricReport run_eval(const RunConfig& cfg) {
    if (cfg.network_path.empty() || cfg.requests_path.empty() || cfg.generated_path.empty())
        throw UsageError("eval: --network, --requests (real test split) and --generated are required");
    const RoadNetwork net = load_network(cfg.network_path);
    const std::vector<TripRecord> real = load_corpus(cfg.requests_path);
    const std::vector<GeneratedRecord> gen = load_generated(cfg.generated_path);
    std::vector<std::vector<SegmentId>> real_trajs, gen_trajs;
    real_trajs.reserve(real.size());
    for (const auto& r : real) real_trajs.push_back(r.segments);
    gen_trajs.reserve(gen.size());
    for (const auto& g : gen) gen_trajs.push_back(g.segments);
    const MetricReport report =
        evaluate(real_trajs, gen_trajs, net, cfg.eval_eps, std::max<std::size_t>(1, cfg.workers));
    if (!cfg.out_path.empty()) save_report(cfg.out_path, report, cfg.hash());
    return report;
}

nlohmann::json run_bench(const RunConfig& cfg) {
    if (cfg.requests_path.empty()) throw UsageError("bench: --requests is required");
    LoadedModel lm = load_for_sampling(cfg);
    std::vector<TripRecord> requests = load_corpus(cfg.requests_path);
    const std::size_t limit = cfg.sample_limit > 0 ? cfg.sample_limit : 100;
    if (requests.size() > limit) requests.resize(limit);
    const auto [l_prime, n_blocks] = resolve_budget(cfg, lm);
    TrajectorySampler sampler(lm.model, lm.net, lm.bins);

    json table;
    json timing;
    for (const std::string decoder : {"block", "ar", "mdlm"}) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::vector<GeneratedRecord> results =
            generate_batch(sampler, requests, cfg, decoder, l_prime, n_blocks);
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        long nfe = 0;
        std::size_t out_len = 0;
        for (const GeneratedRecord& r : results) {
            nfe += r.stats.nfe;
            out_len += r.segments.size();
        }
        table[decoder] = {{"n", results.size()},
                          {"nfe_total", nfe},
                          {"nfe_mean", static_cast<double>(nfe) / static_cast<double>(results.size())},
                          {"mean_len", static_cast<double>(out_len) / static_cast<double>(results.size())}};
        timing[decoder] = ms / static_cast<double>(results.size());
        std::fprintf(stdout, "%-6s  nfe/traj %8.2f   ms/traj %8.3f\n", decoder.c_str(),
                     static_cast<double>(nfe) / static_cast<double>(results.size()),
                     ms / static_cast<double>(results.size()));
    }
    json out{{"config_hash", hash_hex(cfg.hash())},
             {"block_len", l_prime},
             {"blocks", n_blocks},
             {"steps", cfg.sample_steps},
             {"cfg_w", cfg.cfg_w},
             {"decoders", table}};
    // wall-clock is machine-dependent; deterministic runs keep it out of the artifact
    if (!cfg.deterministic) out["ms_per_traj"] = timing;
    if (!cfg.out_path.empty()) write_text_file(cfg.out_path, out.dump(2) + "\n");
    return out;
}

// ----------------------------------------------------------------------
// grad-check
// ----------------------------------------------------------------------

RoadNetwork tiny_ring_network() {
    // three junctions A(0,0), B(100,0), C(50,87); one street per side,
    // two directed segments per street
    struct J {
        double x, y;
    };
    const J js[3] = {{0.0, 0.0}, {100.0, 0.0}, {50.0, 87.0}};
    const int streets[3][2] = {{0, 1}, {1, 2}, {2, 0}};
    std::vector<RoadSegment> segs;
    for (const auto& st : streets) {
        for (int dir = 0; dir < 2; ++dir) {
            const J a = js[dir == 0 ? st[0] : st[1]];
            const J b = js[dir == 0 ? st[1] : st[0]];
            RoadSegment s;
            s.id = static_cast<SegmentId>(segs.size());
            s.length_m = std::hypot(b.x - a.x, b.y - a.y);
            s.highway_class = 0;
            s.tail_lon = a.x;
            s.tail_lat = a.y;
            s.head_lon = b.x;
            s.head_lat = b.y;
            s.lon = 0.5 * (a.x + b.x);
            s.lat = 0.5 * (a.y + b.y);
            double deg = std::atan2(b.x - a.x, b.y - a.y) * 180.0 / M_PI;
            if (deg < 0.0) deg += 360.0;
            s.bearing_deg = deg;
            segs.push_back(s);
        }
    }
    std::vector<std::pair<SegmentId, SegmentId>> edges;
    for (const RoadSegment& in : segs)
        for (const RoadSegment& out : segs)
            if (in.id != out.id && *in.head_lon == *out.tail_lon && *in.head_lat == *out.tail_lat)
                edges.emplace_back(in.id, out.id);
    return RoadNetwork(segs, edges, 100.0);
}

GradCheckReport run_model_grad_check(std::size_t d_model, std::size_t n_layers,
                                     std::size_t vocab_size, double tolerance, double h,
                                     std::uint64_t seed) {
    const RoadNetwork net = tiny_ring_network();
    if (vocab_size <= net.size())
        throw UsageError("grad-check vocab must exceed the toy network size");
    DenoiserConfig dcfg;
    dcfg.d_model = d_model;
    dcfg.n_layers = n_layers;
    dcfg.n_heads = d_model % 4 == 0 ? 4 : 1;
    dcfg.ffn_mult = 4;
    dcfg.max_positions = 24;
    dcfg.vocab_size = vocab_size;
    dcfg.road_base = static_cast<std::uint32_t>(vocab_size - net.size());
    dcfg.n_roads = static_cast<std::uint32_t>(net.size());
    dcfg.use_rne = true;

    RneConfig rcfg;
    rcfg.dim = d_model;
    rcfg.sub_dim = 8;
    rcfg.edge_dim = 8;
    rcfg.n_layers = 2;
    rcfg.proj_hidden = 2 * d_model;
    rcfg.out_dim = d_model;

    ParamStore params;
    Rng rng(stream_seed(seed, "init"));
    init_rne_params(params, rcfg, net.size(), rng);
    init_denoiser_params(params, dcfg, rng);
    const RneContext ctx = build_rne_context(net);

    const std::uint32_t rb = dcfg.road_base;
    // window mixing specials, every road token, and masked positions
    const std::vector<TokenId> window{1,      4,      rb + 0, rb + 1, rb + 2, rb + 3,
                                      rb + 4, rb + 5, 0,      rb + 2, 0,      7};
    const std::size_t block_start = 6, block_len = 6;
    const std::vector<TokenId> targets{rb + 4, rb + 5, rb + 0, rb + 2, rb + 1, 3};
    const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 1};
    const std::vector<double> weights(block_len, 1.7);

    LossBuilder builder = [&](Graph& g, ParamBinder& bind) {
        Node* z = rne_forward(g, bind, rcfg, ctx);
        Node* logits = denoiser_forward(g, bind, dcfg, window, block_start, block_len, z);
        return g.cross_entropy(logits, targets, mask, weights);
    };
    return grad_check(params, builder, tolerance, h);
}

}  // namespace blocktraj
