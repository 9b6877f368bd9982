// Acceptance suite: one test per criterion, one PASS/FAIL line each.
// Shared artifacts (city, corpus, checkpoints) are built once in a work
// directory and reused across criteria in declaration order.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>

#include "blocktraj/pipeline.hpp"

using namespace blocktraj;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    const char* name;
    bool passed = false;
    double seconds = 0.0;
};

void report(const Criterion& c) {
    std::printf("[%s] criterion %s (%.1fs)\n", c.passed ? "PASS" : "FAIL", c.name, c.seconds);
    std::fflush(stdout);
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

// Shared experiment state, built lazily in order.
struct Workspace {
    fs::path dir;
    RunConfig base;

    fs::path city_path;
    fs::path corpus_prefix;
    fs::path undertrained_ckpt;  // 200 steps
    fs::path trained_ckpt;       // full criterion-6 training

    std::unique_ptr<RoadNetwork> net;
    std::vector<TripRecord> test_recs;
    BinTable bins;

    static Workspace& get() {
        static Workspace ws = [] {
            Workspace w;
            w.dir = fs::temp_directory_path() / "blocktraj_acceptance";
            fs::remove_all(w.dir);
            fs::create_directories(w.dir);
            w.city_path = w.dir / "city.json";
            w.corpus_prefix = w.dir / "corpus";
            w.undertrained_ckpt = w.dir / "under.ckpt";
            w.trained_ckpt = w.dir / "model.ckpt";

            RunConfig cfg;
            cfg.rows = 8;
            cfg.cols = 8;
            cfg.seed = 1;
            cfg.out_path = w.city_path.string();
            run_gen_city(cfg);

            cfg = RunConfig{};
            cfg.network_path = w.city_path.string();
            cfg.corpus_prefix = w.corpus_prefix.string();
            cfg.n_records = 20000;
            cfg.min_len = 2;
            cfg.max_len = 31;
            cfg.seed = 2;
            run_gen_data(cfg);

            w.net = std::make_unique<RoadNetwork>(load_network(w.city_path));
            w.test_recs = load_corpus(w.corpus_prefix.string() + ".test");
            w.bins = load_bins(w.corpus_prefix.string() + ".bins.json");

            w.base = RunConfig{};
            w.base.network_path = w.city_path.string();
            w.base.corpus_prefix = w.corpus_prefix.string();
            w.base.checkpoint_path = w.trained_ckpt.string();
            w.base.requests_path = w.corpus_prefix.string() + ".test";
            return w;
        }();
        return ws;
    }

    RunConfig train_cfg(const fs::path& ckpt, std::size_t steps) const {
        RunConfig cfg = base;
        cfg.checkpoint_path = ckpt.string();
        cfg.d_model = 64;
        cfg.n_layers = 3;
        cfg.train.l_prime = 16;
        cfg.train.batch_size = 2;  // more optimizer steps within the 3-epoch budget
        cfg.train.lr = 1e-3;
        cfg.train.epochs = 3;
        cfg.train.max_steps = steps;
        cfg.train.eval_interval = 2000;
        cfg.seed = 3;
        return cfg;
    }

    void ensure_undertrained() {
        if (fs::exists(undertrained_ckpt)) return;
        run_train(train_cfg(undertrained_ckpt, 200));
    }

    TrainSummary trained_summary;
    void ensure_trained() {
        if (fs::exists(trained_ckpt)) return;
        trained_summary = run_train(train_cfg(trained_ckpt, 0));  // full epochs
    }
};

long count_invalid_transitions(const RoadNetwork& net,
                               const std::vector<GeneratedRecord>& gen) {
    long invalid = 0;
    for (const auto& g : gen)
        for (std::size_t i = 1; i < g.segments.size(); ++i)
            if (!net.adjacent(g.segments[i - 1], g.segments[i])) ++invalid;
    return invalid;
}

}  // namespace

TEST_CASE("criterion 1: topology validity") {
    Timer timer;
    Workspace& ws = Workspace::get();
    ws.ensure_undertrained();

    RunConfig cfg = ws.base;
    cfg.checkpoint_path = ws.undertrained_ckpt.string();
    cfg.out_path = (ws.dir / "c1_tcs.jsonl").string();
    cfg.decoder = "block";
    cfg.tcs = true;
    cfg.cfg_w = 0.0;
    cfg.temperature = 1.0;  // exercise the stochastic path too
    cfg.sample_limit = 1000;
    cfg.workers = 2;
    cfg.seed = 11;
    run_sample(cfg);
    const auto gen_tcs = load_generated(cfg.out_path);
    const long invalid_tcs = count_invalid_transitions(*ws.net, gen_tcs);

    cfg.tcs = false;
    cfg.out_path = (ws.dir / "c1_free.jsonl").string();
    run_sample(cfg);
    const auto gen_free = load_generated(cfg.out_path);
    const long invalid_free = count_invalid_transitions(*ws.net, gen_free);

    Criterion c{"1 (topology validity: TCS exact, no-TCS > 0)"};
    c.passed = gen_tcs.size() == 1000 && invalid_tcs == 0 && invalid_free > 0 &&
               timer.seconds() <= 120.0;
    c.seconds = timer.seconds();
    report(c);
    CHECK(gen_tcs.size() == 1000);
    CHECK(invalid_tcs == 0);
    CHECK(invalid_free > 0);
    CHECK(timer.seconds() <= 120.0);
}

TEST_CASE("criterion 2: destination termination") {
    Timer timer;
    Workspace& ws = Workspace::get();
    const auto gen = load_generated(ws.dir / "c1_tcs.jsonl");
    REQUIRE(gen.size() == 1000);
    bool ok = true;
    for (std::size_t i = 0; i < gen.size(); ++i) {
        const SegmentId dest = ws.test_recs[i].segments.back();
        const bool appears =
            std::find(gen[i].segments.begin(), gen[i].segments.end(), dest) != gen[i].segments.end();
        if (gen[i].stats.dest_reached != appears) ok = false;
        if (appears && gen[i].segments.back() != dest) ok = false;
        if (!appears && gen[i].segments.size() != gen[i].stats.untruncated_len) ok = false;
    }
    Criterion c{"2 (destination termination)"};
    c.passed = ok;
    c.seconds = timer.seconds();
    report(c);
    CHECK(ok);
}

TEST_CASE("criterion 3: gradient correctness") {
    Timer timer;
    const GradCheckReport r = run_model_grad_check(16, 1, 32, 1e-4, 1e-5, 1);
    Criterion c{"3 (grad check dim-16/1-layer/vocab-32 at 1e-4)"};
    c.passed = r.passed && timer.seconds() <= 300.0;
    c.seconds = timer.seconds();
    report(c);
    CHECK(r.passed);
    CHECK(r.worst_err <= 1e-4);
    CHECK(timer.seconds() <= 300.0);
}

TEST_CASE("criterion 4: forward-process statistics") {
    Timer timer;
    const std::size_t n = 100000;
    std::vector<TokenId> block(n, kRoadBase);
    bool ok = true;
    for (double t : {0.1, 0.3, 0.7, 1.0}) {
        Rng rng(777);
        CorruptedBlock cb = corrupt_block(block.data(), n, t, rng);
        std::size_t masked = 0;
        for (auto m : cb.mask) masked += m;
        const double frac = static_cast<double>(masked) / static_cast<double>(n);
        const double sd = std::sqrt(t * (1.0 - t) / static_cast<double>(n));
        if (std::abs(frac - t) > 4.0 * sd + 1e-12) ok = false;
        if (t == 1.0 && masked != n) ok = false;
    }
    Criterion c{"4 (forward mask fraction within 4 sigma; t=1 exact)"};
    c.passed = ok;
    c.seconds = timer.seconds();
    report(c);
    CHECK(ok);
}

TEST_CASE("criterion 5: metric oracle equivalence") {
    Timer timer;
    Rng rng(555);
    auto rand_poly = [&](std::size_t max_len) {
        Polyline p;
        const std::size_t n = 1 + rng.below(max_len);
        for (std::size_t i = 0; i < n; ++i)
            p.push_back({rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0)});
        return p;
    };
    auto sq_dist = [](const Point& a, const Point& b) {
        const double dx = a.first - b.first, dy = a.second - b.second;
        return std::sqrt(dx * dx + dy * dy);
    };
    std::function<double(const Polyline&, const Polyline&, std::size_t, std::size_t)> dtw_rec =
        [&](const Polyline& a, const Polyline& b, std::size_t i, std::size_t j) -> double {
        const double d = sq_dist(a[i], b[j]);
        if (i == 0 && j == 0) return d;
        double best = std::numeric_limits<double>::infinity();
        if (i > 0) best = std::min(best, dtw_rec(a, b, i - 1, j));
        if (j > 0) best = std::min(best, dtw_rec(a, b, i, j - 1));
        if (i > 0 && j > 0) best = std::min(best, dtw_rec(a, b, i - 1, j - 1));
        return d + best;
    };
    std::function<double(const Polyline&, const Polyline&, std::size_t, std::size_t, double)>
        edr_rec = [&](const Polyline& a, const Polyline& b, std::size_t i, std::size_t j,
                      double eps) -> double {
        if (i == a.size()) return static_cast<double>(b.size() - j);
        if (j == b.size()) return static_cast<double>(a.size() - i);
        const double match = sq_dist(a[i], b[j]) <= eps ? 0.0 : 1.0;
        return std::min({edr_rec(a, b, i + 1, j + 1, eps) + match,
                         edr_rec(a, b, i + 1, j, eps) + 1.0, edr_rec(a, b, i, j + 1, eps) + 1.0});
    };

    bool ok = true;
    for (int trial = 0; trial < 500; ++trial) {
        Polyline a = rand_poly(6), b = rand_poly(6);
        if (dtw(a, b) != doctest::Approx(dtw_rec(a, b, a.size() - 1, b.size() - 1)).epsilon(0))
            ok = false;
        const double eps = rng.uniform(0.0, 5.0);
        const double e_expect =
            edr_rec(a, b, 0, 0, eps) / static_cast<double>(std::max(a.size(), b.size()));
        if (edr(a, b, eps) != e_expect) ok = false;
    }
    for (int trial = 0; trial < 500; ++trial) {
        Polyline a = rand_poly(8), b = rand_poly(8);
        double worst = 0.0;
        for (const Point& p : a) {
            double best = std::numeric_limits<double>::infinity();
            for (const Point& q : b) best = std::min(best, sq_dist(p, q));
            worst = std::max(worst, best);
        }
        for (const Point& q : b) {
            double best = std::numeric_limits<double>::infinity();
            for (const Point& p : a) best = std::min(best, sq_dist(p, q));
            worst = std::max(worst, best);
        }
        if (hausdorff(a, b) != worst) ok = false;
    }
    // JSD identity and symmetry
    std::vector<double> xs, ys;
    for (int i = 0; i < 300; ++i) xs.push_back(rng.normal());
    for (int i = 0; i < 300; ++i) ys.push_back(rng.normal() * 1.3 + 0.2);
    Histogram hx = build_histogram(xs, -6.0, 6.0);
    Histogram hy = build_histogram(ys, -6.0, 6.0);
    if (jsd(hx, hx) != 0.0) ok = false;
    if (std::abs(jsd(hx, hy) - jsd(hy, hx)) > 1e-12) ok = false;

    Criterion c{"5 (DTW/EDR/Hausdorff oracle equality; JSD identity+symmetry)"};
    c.passed = ok;
    c.seconds = timer.seconds();
    report(c);
    CHECK(ok);
}

TEST_CASE("criterion 6: end-to-end desk-scale fidelity") {
    Timer timer;
    Workspace& ws = Workspace::get();
    ws.ensure_trained();

    // (a) held-out masked CE below the uniform-over-valid-successors bound
    ModelBundle model = load_model(ws.trained_ckpt, *ws.net);
    const auto val_recs = load_corpus(ws.corpus_prefix.string() + ".val");
    const double ce = eval_masked_ce(model, val_recs, ws.bins, 16, 0.01, 3, 1000);
    const double bound = std::log(ws.net->mean_out_degree() + 1.0);

    // (b) sample one trajectory per test tuple; evaluate
    RunConfig cfg = ws.base;
    cfg.out_path = (ws.dir / "c6_gen.jsonl").string();
    cfg.decoder = "block";
    cfg.tcs = true;
    cfg.cfg_w = 0.5;
    cfg.sample_steps = 8;
    cfg.workers = 2;
    cfg.seed = 6;
    run_sample(cfg);

    cfg.generated_path = cfg.out_path;
    cfg.out_path = (ws.dir / "c6_report.json").string();
    const MetricReport report_model = run_eval(cfg);

    // random-walk baseline on the same OD pairs, same evaluation protocol
    TrajectorySampler sampler(model, *ws.net, ws.bins);
    std::vector<GeneratedRecord> walk_gen(ws.test_recs.size());
    for (std::size_t i = 0; i < ws.test_recs.size(); ++i)
        walk_gen[i].segments =
            sampler.random_walk_baseline(conditioning_of(ws.test_recs[i]), 32,
                                         stream_seed(6, "walk", i));
    save_generated(ws.dir / "c6_walk.jsonl", walk_gen);
    cfg.generated_path = (ws.dir / "c6_walk.jsonl").string();
    cfg.out_path = (ws.dir / "c6_walk_report.json").string();
    const MetricReport report_walk = run_eval(cfg);

    const double secs = timer.seconds();
    Criterion c{"6 (CE bound; JSD(dist) <= 0.05; DTW <= 70% of random walk; <= 30 min)"};
    c.passed = ce < bound && report_model.jsd_distance <= 0.05 &&
               report_model.dtw_mean <= 0.7 * report_walk.dtw_mean && secs <= 1800.0;
    c.seconds = secs;
    report(c);
    std::printf("    masked CE %.4f vs bound %.4f\n", ce, bound);
    std::printf("    jsd_distance %.4f (<= 0.05), dtw %.1f vs walk %.1f (ratio %.3f)\n",
                report_model.jsd_distance, report_model.dtw_mean, report_walk.dtw_mean,
                report_model.dtw_mean / report_walk.dtw_mean);
    CHECK(ce < bound);
    CHECK(report_model.jsd_distance <= 0.05);
    CHECK(report_model.dtw_mean <= 0.7 * report_walk.dtw_mean);
    CHECK(secs <= 1800.0);
}

TEST_CASE("criterion 7: NFE accounting") {
    Timer timer;
    Workspace& ws = Workspace::get();
    ws.ensure_trained();
    ModelBundle model = load_model(ws.trained_ckpt, *ws.net);
    TrajectorySampler sampler(model, *ws.net, ws.bins);

    bool ok = true;
    long ar_nfe_total = 0, block_nfe_total = 0;
    const std::size_t n_req = 1000;
    for (std::size_t i = 0; i < n_req; ++i) {
        GenerationRequest req;
        req.cond = conditioning_of(ws.test_recs[i % ws.test_recs.size()]);
        req.n_blocks = 2;
        req.l_prime = 16;
        req.steps = 8;
        req.cfg_w = 0.0;
        req.tcs = true;
        req.seed = 700 + i;

        const GenerationResult block = sampler.generate(req);
        if (block.stats.nfe != 16) ok = false;  // B*T exactly
        block_nfe_total += block.stats.nfe;

        const GenerationResult mdlm = sampler.mdlm_generate(req);
        if (mdlm.stats.nfe != 8) ok = false;  // T regardless of length

        const GenerationResult ar = sampler.ar_generate(req);
        const long expect = ar.stats.eos_sampled
                                ? static_cast<long>(ar.stats.untruncated_len)
                                : static_cast<long>(req.n_blocks * req.l_prime) - 1;
        if (ar.stats.nfe != expect) ok = false;  // L per-token calls
        ar_nfe_total += ar.stats.nfe;

        if (i < 20) {  // CFG doubles every decoder's count
            GenerationRequest cfg_req = req;
            cfg_req.cfg_w = 0.5;
            if (sampler.generate(cfg_req).stats.nfe != 32) ok = false;
            if (sampler.mdlm_generate(cfg_req).stats.nfe != 16) ok = false;
            const GenerationResult arc = sampler.ar_generate(cfg_req);
            const long base = arc.stats.eos_sampled
                                  ? static_cast<long>(arc.stats.untruncated_len)
                                  : static_cast<long>(cfg_req.n_blocks * cfg_req.l_prime) - 1;
            if (arc.stats.nfe != 2 * base) ok = false;
        }
    }
    // structural efficiency ordering with T < L': block < ar on average
    if (!(block_nfe_total < ar_nfe_total)) ok = false;

    Criterion c{"7 (NFE: ar=L, mdlm=T, block=B*T, x2 under CFG; block < ar)"};
    c.passed = ok;
    c.seconds = timer.seconds();
    report(c);
    std::printf("    mean NFE block %.2f vs ar %.2f\n",
                static_cast<double>(block_nfe_total) / n_req,
                static_cast<double>(ar_nfe_total) / n_req);
    CHECK(ok);
}

TEST_CASE("criterion 8: CFG and ablation wiring") {
    Timer timer;
    Workspace& ws = Workspace::get();
    ws.ensure_trained();
    ModelBundle model = load_model(ws.trained_ckpt, *ws.net);
    TrajectorySampler sampler(model, *ws.net, ws.bins);

    bool ok = true;
    // w = 0 must be bit-identical to conditional-only sampling (no extra pass)
    for (std::size_t i = 0; i < 50; ++i) {
        GenerationRequest req;
        req.cond = conditioning_of(ws.test_recs[i]);
        req.n_blocks = 2;
        req.l_prime = 16;
        req.steps = 8;
        req.cfg_w = 0.0;
        req.seed = 800 + i;
        const GenerationResult a = sampler.generate(req);
        const GenerationResult b = sampler.generate(req);
        if (a.segments != b.segments) ok = false;
        if (a.stats.nfe != 16) ok = false;
    }

    // w and L' sweeps run to completion and emit distinct reports from one checkpoint
    std::vector<MetricReport> reports;
    for (double w : {0.0, 0.25, 0.5}) {
        for (std::size_t lp : {8u, 16u}) {
            RunConfig cfg = ws.base;
            cfg.out_path =
                (ws.dir / ("c8_w" + std::to_string(w) + "_l" + std::to_string(lp) + ".jsonl"))
                    .string();
            cfg.cfg_w = w;
            cfg.sample_block_len = lp;
            cfg.sample_limit = 300;
            cfg.workers = 2;
            cfg.seed = 8;
            run_sample(cfg);
            cfg.generated_path = cfg.out_path;
            cfg.out_path += ".report.json";
            reports.push_back(run_eval(cfg));
        }
    }
    for (std::size_t i = 0; i < reports.size(); ++i)
        for (std::size_t j = i + 1; j < reports.size(); ++j)
            if (reports[i].dtw_mean == reports[j].dtw_mean &&
                reports[i].hausdorff_mean == reports[j].hausdorff_mean)
                ok = false;

    // the no-RNE flag trains and samples end to end
    RunConfig nr = ws.train_cfg(ws.dir / "c8_norne.ckpt", 100);
    nr.use_rne = false;
    run_train(nr);
    RunConfig ns = ws.base;
    ns.checkpoint_path = (ws.dir / "c8_norne.ckpt").string();
    ns.out_path = (ws.dir / "c8_norne.jsonl").string();
    ns.sample_limit = 50;
    ns.seed = 9;
    run_sample(ns);
    if (load_generated(ns.out_path).size() != 50) ok = false;

    Criterion c{"8 (CFG w=0 bit-identical; w/L' sweep distinct; no-RNE end-to-end)"};
    c.passed = ok;
    c.seconds = timer.seconds();
    report(c);
    CHECK(ok);
}

TEST_CASE("criterion 9: determinism of re-runs") {
    Timer timer;
    Workspace& ws = Workspace::get();
    const fs::path dir = ws.dir / "det";
    fs::create_directories(dir);

    auto file_bytes = [](const fs::path& p) { return read_text_file(p); };
    bool ok = true;

    // gen-city twice
    for (int round = 0; round < 2; ++round) {
        RunConfig cfg;
        cfg.rows = 6;
        cfg.cols = 5;
        cfg.edge_drop_prob = 0.1;
        cfg.seed = 21;
        cfg.out_path = (dir / ("city" + std::to_string(round) + ".json")).string();
        run_gen_city(cfg);
    }
    ok = ok && file_bytes(dir / "city0.json") == file_bytes(dir / "city1.json");

    // gen-data twice
    for (int round = 0; round < 2; ++round) {
        RunConfig cfg;
        cfg.network_path = (dir / "city0.json").string();
        cfg.corpus_prefix = (dir / ("corpus" + std::to_string(round))).string();
        cfg.n_records = 300;
        cfg.min_len = 2;
        cfg.max_len = 12;
        cfg.seed = 22;
        run_gen_data(cfg);
    }
    for (const char* suffix : {".train", ".val", ".test", ".bins.json"})
        ok = ok && file_bytes(dir / ("corpus0" + std::string(suffix))) ==
                       file_bytes(dir / ("corpus1" + std::string(suffix)));

    // short train twice (checkpoint + metrics csv byte-identical)
    for (int round = 0; round < 2; ++round) {
        RunConfig cfg;
        cfg.network_path = (dir / "city0.json").string();
        cfg.corpus_prefix = (dir / "corpus0").string();
        cfg.checkpoint_path = (dir / ("m" + std::to_string(round) + ".ckpt")).string();
        cfg.d_model = 24;
        cfg.n_layers = 1;
        cfg.train.l_prime = 8;
        cfg.train.batch_size = 8;
        cfg.train.max_steps = 40;
        cfg.train.eval_interval = 20;
        cfg.seed = 23;
        run_train(cfg);
    }
    ok = ok && file_bytes(dir / "m0.ckpt") == file_bytes(dir / "m1.ckpt");
    ok = ok && file_bytes(dir / "m0.ckpt.metrics.csv") == file_bytes(dir / "m1.ckpt.metrics.csv");

    // sample twice (with workers, which must not affect bytes) + eval twice
    for (int round = 0; round < 2; ++round) {
        RunConfig cfg;
        cfg.network_path = (dir / "city0.json").string();
        cfg.checkpoint_path = (dir / "m0.ckpt").string();
        cfg.corpus_prefix = (dir / "corpus0").string();
        cfg.requests_path = (dir / "corpus0").string() + ".test";
        cfg.out_path = (dir / ("g" + std::to_string(round) + ".jsonl")).string();
        cfg.cfg_w = 0.5;
        cfg.temperature = 0.8;
        cfg.workers = round == 0 ? 1 : 3;
        cfg.seed = 24;
        run_sample(cfg);
        cfg.generated_path = cfg.out_path;
        cfg.out_path = (dir / ("r" + std::to_string(round) + ".json")).string();
        run_eval(cfg);
    }
    ok = ok && file_bytes(dir / "g0.jsonl") == file_bytes(dir / "g1.jsonl");
    ok = ok && file_bytes(dir / "g0.jsonl.stats.json") == file_bytes(dir / "g1.jsonl.stats.json");
    ok = ok && file_bytes(dir / "r0.json") == file_bytes(dir / "r1.json");

    Criterion c{"9 (byte-identical artifacts on re-run)"};
    c.passed = ok;
    c.seconds = timer.seconds();
    report(c);
    CHECK(ok);
}
