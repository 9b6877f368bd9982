// Python surface over the blocktraj core: pipeline stages, a sampler
// handle for in-process generation, and the trajectory metric primitives.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "blocktraj/pipeline.hpp"

namespace py = pybind11;
using namespace blocktraj;

namespace {

Polyline to_polyline(const std::vector<std::pair<double, double>>& pts) {
    return Polyline(pts.begin(), pts.end());
}

py::dict report_dict(const MetricReport& r) {
    py::dict d;
    d["jsd_distance"] = r.jsd_distance;
    d["jsd_radius"] = r.jsd_radius;
    d["hausdorff_mean"] = r.hausdorff_mean;
    d["dtw_mean"] = r.dtw_mean;
    d["edr_mean"] = r.edr_mean;
    d["coverage"] = r.coverage;
    d["n_generated"] = r.n_generated;
    d["n_matched"] = r.n_matched;
    return d;
}

py::dict result_dict(const GenerationResult& r) {
    py::dict d;
    d["segments"] = r.segments;
    d["nfe"] = r.stats.nfe;
    d["dead_ends"] = r.stats.dead_ends;
    d["dest_reached"] = r.stats.dest_reached;
    d["eos_sampled"] = r.stats.eos_sampled;
    d["untruncated_len"] = r.stats.untruncated_len;
    d["blocks"] = r.stats.blocks;
    return d;
}

ConditioningTuple cond_from_dict(const py::dict& d) {
    ConditioningTuple c;
    c.r_org = d["r_org"].cast<SegmentId>();
    c.r_dest = d["r_dest"].cast<SegmentId>();
    c.t_org_s = d.contains("t_org_s") ? d["t_org_s"].cast<double>() : 43200.0;
    c.d_trip_m = d.contains("d_trip_m") ? d["d_trip_m"].cast<double>() : 1000.0;
    c.d_seg_mean_m = d.contains("d_seg_mean_m") ? d["d_seg_mean_m"].cast<double>() : 200.0;
    c.t_trip_s = d.contains("t_trip_s") ? d["t_trip_s"].cast<double>() : 120.0;
    c.v_avg_mps = d.contains("v_avg_mps") ? d["v_avg_mps"].cast<double>() : 8.0;
    return c;
}

// Owns everything a generation session needs.
struct PySampler {
    RoadNetwork net;
    BinTable bins;
    ModelBundle model;
    std::unique_ptr<TrajectorySampler> sampler;

    PySampler(const std::string& network_path, const std::string& checkpoint_path,
              const std::string& bins_path)
        : net(load_network(network_path)), bins(load_bins(bins_path)) {
        nlohmann::json meta;
        model = load_model(checkpoint_path, net, &meta);
        const std::string stored = meta.value("bins_hash", "");
        if (!stored.empty() && stored != hash_hex(bins_hash(bins)))
            throw IntegrityError("bin table does not match the checkpoint");
        sampler = std::make_unique<TrajectorySampler>(model, net, bins);
    }

    py::dict generate(const py::dict& cond, const std::string& decoder, std::size_t blocks,
                      std::size_t block_len, std::size_t steps, double cfg_w, double temperature,
                      bool tcs, std::uint64_t seed) {
        GenerationRequest req;
        req.cond = cond_from_dict(cond);
        req.n_blocks = blocks;
        req.l_prime = block_len;
        req.steps = steps;
        req.cfg_w = cfg_w;
        req.temperature = temperature;
        req.tcs = tcs;
        req.seed = seed;
        return result_dict(sampler->run(decoder, req));
    }

    std::vector<SegmentId> random_walk(const py::dict& cond, std::size_t budget,
                                       std::uint64_t seed) {
        return sampler->random_walk_baseline(cond_from_dict(cond), budget, seed);
    }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "topology-aware block-diffusion trajectory generation";

    py::register_exception<UsageError>(m, "UsageError");
    py::register_exception<IntegrityError>(m, "IntegrityError");
    py::register_exception<NumericalError>(m, "NumericalError");
    py::register_exception<DataError>(m, "DataError");

    py::class_<RoadNetwork>(m, "Network")
        .def(py::init([](const std::string& path) { return load_network(path); }), py::arg("path"))
        .def_property_readonly("n_segments", &RoadNetwork::size)
        .def("adjacent", &RoadNetwork::adjacent)
        .def("out_neighbors",
             [](const RoadNetwork& n, SegmentId i) { return n.out_neighbors(i); })
        .def("steering_angle",
             [](const RoadNetwork& n, SegmentId i, SegmentId j) { return steering_angle(n, i, j); })
        .def("midpoint",
             [](const RoadNetwork& n, SegmentId i) { return segment_midpoint(n, i); })
        .def("cell_of",
             [](const RoadNetwork& n, double x, double y) { return cell_of(n, x, y); })
        .def_property_readonly("mean_out_degree", &RoadNetwork::mean_out_degree);

    m.def(
        "gen_city",
        [](int rows, int cols, double block_len_m, double drop, std::uint64_t seed,
           const std::string& out) {
            RunConfig cfg;
            cfg.rows = rows;
            cfg.cols = cols;
            cfg.block_len_m = block_len_m;
            cfg.edge_drop_prob = drop;
            cfg.seed = seed;
            cfg.out_path = out;
            run_gen_city(cfg);
        },
        py::arg("rows"), py::arg("cols"), py::arg("block_len_m") = 200.0, py::arg("drop") = 0.0,
        py::arg("seed") = 1, py::arg("out"));

    m.def(
        "gen_data",
        [](const std::string& network, const std::string& corpus_prefix, std::size_t n,
           std::size_t min_len, std::size_t max_len, std::uint64_t seed) {
            RunConfig cfg;
            cfg.network_path = network;
            cfg.corpus_prefix = corpus_prefix;
            cfg.n_records = n;
            cfg.min_len = min_len;
            cfg.max_len = max_len;
            cfg.seed = seed;
            run_gen_data(cfg);
        },
        py::arg("network"), py::arg("corpus_prefix"), py::arg("n"), py::arg("min_len") = 2,
        py::arg("max_len") = 31, py::arg("seed") = 1);

    m.def(
        "train",
        [](const std::string& network, const std::string& corpus_prefix,
           const std::string& checkpoint, std::size_t d_model, std::size_t n_layers,
           std::size_t block_len, std::size_t epochs, std::size_t steps, std::size_t batch,
           double lr, bool use_rne, std::uint64_t seed) {
            RunConfig cfg;
            cfg.network_path = network;
            cfg.corpus_prefix = corpus_prefix;
            cfg.checkpoint_path = checkpoint;
            cfg.d_model = d_model;
            cfg.n_layers = n_layers;
            cfg.train.l_prime = block_len;
            cfg.train.epochs = epochs;
            cfg.train.max_steps = steps;
            cfg.train.batch_size = batch;
            cfg.train.lr = lr;
            cfg.use_rne = use_rne;
            cfg.seed = seed;
            const TrainSummary s = run_train(cfg);
            py::dict d;
            d["steps"] = s.steps;
            d["best_val"] = s.best_val;
            d["final_masked_ce"] = s.final_masked_ce;
            d["checkpoint"] = s.checkpoint;
            d["metrics_csv"] = s.metrics_csv;
            return d;
        },
        py::arg("network"), py::arg("corpus_prefix"), py::arg("checkpoint"),
        py::arg("d_model") = 64, py::arg("n_layers") = 3, py::arg("block_len") = 16,
        py::arg("epochs") = 3, py::arg("steps") = 0, py::arg("batch") = 32, py::arg("lr") = 1e-3,
        py::arg("use_rne") = true, py::arg("seed") = 1);

    m.def(
        "sample",
        [](const std::string& network, const std::string& checkpoint, const std::string& bins,
           const std::string& requests, const std::string& out, const std::string& decoder,
           bool tcs, double cfg_w, double temperature, std::size_t steps, std::size_t block_len,
           std::size_t limit, std::uint64_t seed, std::size_t workers) {
            RunConfig cfg;
            cfg.network_path = network;
            cfg.checkpoint_path = checkpoint;
            cfg.bins_path = bins;
            cfg.requests_path = requests;
            cfg.out_path = out;
            cfg.decoder = decoder;
            cfg.tcs = tcs;
            cfg.cfg_w = cfg_w;
            cfg.temperature = temperature;
            cfg.sample_steps = steps;
            cfg.sample_block_len = block_len;
            cfg.sample_limit = limit;
            cfg.seed = seed;
            cfg.workers = workers;
            const SampleSummary s = run_sample(cfg);
            py::dict d;
            d["n"] = s.n;
            d["nfe_total"] = s.nfe_total;
            d["dead_ends"] = s.dead_ends;
            d["dest_reached_rate"] = s.dest_reached_rate;
            d["output"] = s.output;
            return d;
        },
        py::arg("network"), py::arg("checkpoint"), py::arg("bins"), py::arg("requests"),
        py::arg("out"), py::arg("decoder") = "block", py::arg("tcs") = true,
        py::arg("cfg_w") = 0.5, py::arg("temperature") = 0.0, py::arg("steps") = 8,
        py::arg("block_len") = 0, py::arg("limit") = 0, py::arg("seed") = 1,
        py::arg("workers") = 1);

    m.def(
        "evaluate",
        [](const std::string& network, const std::string& real, const std::string& generated,
           double eps, std::size_t workers) {
            RunConfig cfg;
            cfg.network_path = network;
            cfg.requests_path = real;
            cfg.generated_path = generated;
            cfg.eval_eps = eps;
            cfg.workers = workers;
            return report_dict(run_eval(cfg));
        },
        py::arg("network"), py::arg("real"), py::arg("generated"), py::arg("eps") = 0.0,
        py::arg("workers") = 1);

    m.def(
        "grad_check",
        [](std::size_t d_model, std::size_t n_layers, std::size_t vocab, double tol,
           std::uint64_t seed) {
            const GradCheckReport r = run_model_grad_check(d_model, n_layers, vocab, tol, 1e-5, seed);
            py::dict d;
            d["passed"] = r.passed;
            d["worst_param"] = r.worst_param;
            d["worst_err"] = r.worst_err;
            return d;
        },
        py::arg("d_model") = 16, py::arg("n_layers") = 1, py::arg("vocab") = 32,
        py::arg("tol") = 1e-4, py::arg("seed") = 1);

    py::class_<PySampler>(m, "Sampler")
        .def(py::init<const std::string&, const std::string&, const std::string&>(),
             py::arg("network"), py::arg("checkpoint"), py::arg("bins"))
        .def("generate", &PySampler::generate, py::arg("cond"), py::arg("decoder") = "block",
             py::arg("blocks") = 2, py::arg("block_len") = 16, py::arg("steps") = 8,
             py::arg("cfg_w") = 0.0, py::arg("temperature") = 0.0, py::arg("tcs") = true,
             py::arg("seed") = 1)
        .def("random_walk", &PySampler::random_walk, py::arg("cond"), py::arg("budget") = 32,
             py::arg("seed") = 1);

    // metric primitives over point lists
    m.def("hausdorff", [](const std::vector<std::pair<double, double>>& a,
                          const std::vector<std::pair<double, double>>& b) {
        return hausdorff(to_polyline(a), to_polyline(b));
    });
    m.def("dtw", [](const std::vector<std::pair<double, double>>& a,
                    const std::vector<std::pair<double, double>>& b) {
        return dtw(to_polyline(a), to_polyline(b));
    });
    m.def("edr", [](const std::vector<std::pair<double, double>>& a,
                    const std::vector<std::pair<double, double>>& b,
                    double eps) { return edr(to_polyline(a), to_polyline(b), eps); },
          py::arg("a"), py::arg("b"), py::arg("eps"));
    m.def("radius_of_gyration", [](const std::vector<std::pair<double, double>>& pts) {
        return radius_of_gyration(to_polyline(pts));
    });
    m.def("jsd_of_samples", [](const std::vector<double>& a, const std::vector<double>& b) {
        return jsd_of_samples(a, b);
    });
}
