#pragma once

// Command-level pipelines shared by the CLI and the Python bindings.
// Every stage is re-runnable from files alone; all randomness flows from
// RunConfig::seed through named sub-streams.

#include "blocktraj/metrics.hpp"
#include "blocktraj/sampler.hpp"

namespace blocktraj {

struct RunConfig {
    // paths
    std::string network_path;
    std::string corpus_prefix;
    std::string bins_path;       // defaults to corpus_prefix + ".bins.json"
    std::string checkpoint_path;
    std::string requests_path;   // conditioning tuples (corpus-format JSONL)
    std::string generated_path;
    std::string out_path;

    // gen-city
    int rows = 8, cols = 8;
    double block_len_m = 200.0;
    double edge_drop_prob = 0.0;

    // gen-data
    std::size_t n_records = 20000;
    std::size_t min_len = 2, max_len = 31;

    // model
    std::size_t d_model = 64, n_layers = 3, n_heads = 4, ffn_mult = 4;
    bool use_rne = true;
    std::size_t rne_dim = 64, rne_layers = 2, rne_proj_hidden = 128;

    // training
    TrainConfig train;

    // sampling
    std::string decoder = "block";
    bool tcs = true;
    double cfg_w = 0.5;
    double temperature = 0.0;
    std::size_t sample_steps = 8;
    std::size_t sample_block_len = 0;  // 0: use the training block length
    std::size_t sample_blocks = 0;     // 0: fill the model's position budget
    std::size_t sample_limit = 0;      // 0: all requests

    // eval
    double eval_eps = 0.0;  // 0: network cell size

    // misc
    std::uint64_t seed = 1;
    bool deterministic = true;
    std::size_t workers = 1;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    void apply_overrides(const nlohmann::json& j) { *this = from_json(merged(j)); }
    nlohmann::json merged(const nlohmann::json& overrides) const;
    std::uint64_t hash() const { return fnv1a(to_json().dump()); }
};

void run_gen_city(const RunConfig& cfg);
void run_gen_data(const RunConfig& cfg);

struct TrainSummary {
    std::size_t steps = 0;
    double best_val = 0.0;
    double final_masked_ce = 0.0;
    std::string checkpoint;
    std::string metrics_csv;
};
TrainSummary run_train(const RunConfig& cfg);

struct SampleSummary {
    std::size_t n = 0;
    long nfe_total = 0;
    long dead_ends = 0;
    double dest_reached_rate = 0.0;
    std::string output;
    std::string stats_sidecar;
};
SampleSummary run_sample(const RunConfig& cfg);

MetricReport run_eval(const RunConfig& cfg);

nlohmann::json run_bench(const RunConfig& cfg);

// Tiny denoiser + RNE checked against central finite differences.
GradCheckReport run_model_grad_check(std::size_t d_model, std::size_t n_layers,
                                     std::size_t vocab_size, double tolerance, double h,
                                     std::uint64_t seed);

// Generated-output record
struct GeneratedRecord {
    std::vector<SegmentId> segments;
    GenerationStats stats;
};
void save_generated(const std::filesystem::path& path, const std::vector<GeneratedRecord>& records);
std::vector<GeneratedRecord> load_generated(const std::filesystem::path& path);

// Shared by sample/bench: run one decoder over request tuples in parallel
// while keeping per-request determinism and output order.
std::vector<GeneratedRecord> generate_batch(const TrajectorySampler& sampler,
                                            const std::vector<TripRecord>& requests,
                                            const RunConfig& cfg, const std::string& decoder,
                                            std::size_t l_prime, std::size_t n_blocks);

// A six-segment two-junction toy network for gradient checks and tests.
RoadNetwork tiny_ring_network();

}  // namespace blocktraj
