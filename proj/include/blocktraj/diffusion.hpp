#pragma once

// Forward masking process (absorbing MASK kernel, continuous-time linear
// rate), the block NELBO objective in its time-weighted masked
// cross-entropy form, and the training loop.

#include <functional>

#include "blocktraj/model.hpp"

namespace blocktraj {

struct DiffusionSchedule {
    double t_min = 0.01;
    std::size_t steps_per_block = 8;  // T at inference

    // k_t: evenly amortizes the remaining commitments over remaining steps.
    static std::size_t commit_count(std::size_t remaining_masked, std::size_t remaining_steps) {
        if (remaining_steps == 0) return remaining_masked;
        return (remaining_masked + remaining_steps - 1) / remaining_steps;
    }
};

struct CorruptedBlock {
    std::vector<TokenId> noisy;
    std::vector<std::uint8_t> mask;  // 1 where replaced by MASK
};

// Independently masks each non-PAD position with probability t. PAD is
// never corrupted and consumes no randomness.
CorruptedBlock corrupt_block(const TokenId* block, std::size_t len, double t, Rng& rng);

// weight * mean cross-entropy over masked positions; zero when the mask
// is empty (callers count that as a skip and resample).
Node* nelbo_loss(Graph& g, Node* logits, const std::vector<TokenId>& clean_block,
                 const std::vector<std::uint8_t>& mask, double weight);

struct TrainConfig {
    std::size_t l_prime = 16;
    std::size_t batch_size = 32;
    std::size_t epochs = 3;
    std::size_t max_steps = 0;  // overrides epochs when > 0
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double weight_decay = 0.01;
    double warmup_frac = 0.1;   // linear warmup over this fraction of steps
    double grad_clip = 20.0;    // global grad-norm cap for 1/t weight spikes; <= 0 disables
    double cond_dropout = 0.1;  // NULL-prompt probability (CFG training side)
    double t_min = 0.01;
    std::size_t eval_interval = 100;
    std::size_t val_subset = 256;
    std::uint64_t seed = 1;

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainLogRow {
    std::size_t step;
    double train_loss;
    double val_loss;  // NaN between eval intervals
    double lr;
    double wall_ms;
};

struct TrainResult {
    std::size_t steps = 0;
    std::size_t skipped_items = 0;
    double best_val = 0.0;
    std::size_t best_val_step = 0;
};

// Trains in place. on_log fires every eval interval (and at the final
// step); save_best fires whenever validation improves; save_last fires
// once at the end. Throws NumericalError naming the last saved step if
// the loss goes non-finite.
TrainResult train(ModelBundle& model, const std::vector<TripRecord>& train_records,
                  const std::vector<TripRecord>& val_records, const BinTable& bins,
                  const TrainConfig& cfg,
                  const std::function<void(const TrainLogRow&)>& on_log = nullptr,
                  const std::function<void(std::size_t step)>& save_best = nullptr,
                  const std::function<void(std::size_t step)>& save_last = nullptr);

// NELBO estimator over records (weighted, same distribution as training);
// deterministic for a fixed seed.
double eval_nelbo(const ModelBundle& model, const std::vector<TripRecord>& records,
                  const BinTable& bins, std::size_t l_prime, double t_min, std::uint64_t seed,
                  std::size_t limit = 0);

// Unweighted pooled cross-entropy over masked positions (held-out CE).
double eval_masked_ce(const ModelBundle& model, const std::vector<TripRecord>& records,
                      const BinTable& bins, std::size_t l_prime, double t_min, std::uint64_t seed,
                      std::size_t limit = 0);

// Per-block loss terms of the block decomposition, one per block at a
// shared time t; corruption for block b comes from sub-stream (seed, b).
std::vector<double> nelbo_exhaustive(const ModelBundle& model, const TripRecord& record,
                                     const BinTable& bins, std::size_t l_prime, double t,
                                     std::uint64_t seed);
double nelbo_single_block(const ModelBundle& model, const TripRecord& record, const BinTable& bins,
                          std::size_t l_prime, std::size_t block_index, double t,
                          std::uint64_t seed);

}  // namespace blocktraj
