#pragma once

// Topology-constrained sampling: block-wise reverse diffusion with
// adjacency penalties, classifier-free guidance, temperature-scaled
// Gumbel-max, confidence-based commitment, and destination-aware
// termination. AR and token-level MDLM ablation decoders reuse the same
// machinery on the same checkpoint.
//
// Commitment is confidence-ordered, so a masked position can sit left of
// an already committed road token. Left-to-right resampling alone cannot
// keep such pairs valid; sampling therefore also restricts candidates to
// segments that reach the nearest committed road on the right in exactly
// the gap number of transitions. Anchors are only ever committed along
// fully valid chains, which keeps every candidate set nonempty and every
// decoded transition adjacency-valid.

#include <atomic>
#include <deque>
#include <mutex>
#include <optional>

#include "blocktraj/diffusion.hpp"

namespace blocktraj {

struct GenerationRequest {
    ConditioningTuple cond;
    std::size_t n_blocks = 2;   // B
    std::size_t l_prime = 16;   // L'
    std::size_t steps = 8;      // T denoising steps per block
    double cfg_w = 0.0;         // guidance scale w >= 0
    double temperature = 0.0;   // lambda; 0 suppresses Gumbel noise entirely
    bool tcs = true;
    std::uint64_t seed = 0;
};

struct GenerationStats {
    long nfe = 0;
    long dead_ends = 0;
    bool dest_reached = false;
    bool eos_sampled = false;
    std::size_t untruncated_len = 0;  // tokens before the first EOS, pre-truncation
    std::size_t blocks = 0;           // denoised blocks (sampled positions for AR)
};

struct GenerationResult {
    std::vector<SegmentId> segments;
    GenerationStats stats;
};

// f_uncond + (w+1) * (f_cond - f_uncond), elementwise.
Tensor apply_cfg(const Tensor& f_cond, const Tensor& f_uncond, double w);

// Exact-length reachability over the segment graph, grown lazily and
// safely shared across generation workers.
class Reachability {
public:
    explicit Reachability(const RoadNetwork& network);

    // true iff a directed path of exactly `steps` transitions leads from -> to
    bool reaches(SegmentId from, SegmentId to, std::size_t steps) const;
    void prepare(std::size_t max_steps) const;

private:
    const RoadNetwork& net_;
    std::size_t words_;
    mutable std::deque<std::vector<std::uint64_t>> levels_;
    mutable std::atomic<std::size_t> ready_{0};
    mutable std::mutex grow_mutex_;
};

struct PositionSample {
    TokenId token = kEos;
    double confidence = 1.0;
    bool dead_end = false;
};

// Candidate set is road tokens + EOS. prev == EOS forces EOS. A right
// anchor (committed road `anchor` at `gap` transitions) excludes EOS and
// keeps only roads that reach it in exactly `gap` steps. penalty == null
// disables TCS (plain Gumbel-max over the road+EOS sub-vocabulary).
PositionSample constrained_sample_position(
    const double* logits, const Vocabulary& vocab, TokenId prev, const PenaltyMatrix* penalty,
    const Reachability* reach, std::optional<std::pair<SegmentId, std::size_t>> right_anchor,
    double lambda, Rng& rng);

class TrajectorySampler {
public:
    TrajectorySampler(const ModelBundle& model, const RoadNetwork& network, const BinTable& bins);

    GenerationResult generate(const GenerationRequest& request) const;
    GenerationResult ar_generate(const GenerationRequest& request) const;
    GenerationResult mdlm_generate(const GenerationRequest& request) const;

    GenerationResult run(const std::string& decoder, const GenerationRequest& request) const;

    // Uniform random walk that stops at the destination or budget.
    std::vector<SegmentId> random_walk_baseline(const ConditioningTuple& cond, std::size_t budget,
                                                std::uint64_t seed) const;

    const Vocabulary& vocab() const { return model_.vocab; }
    std::size_t prompt_len() const { return kPromptLen; }

private:
    struct BlockState {
        std::vector<TokenId> candidates;
        std::vector<bool> committed;
        std::vector<double> confidence;
    };

    std::vector<TokenId> denoise_block(const Prompt& prompt, const std::vector<TokenId>& context,
                                       bool first_block, const GenerationRequest& request,
                                       std::size_t l_prime, std::size_t steps, Rng& rng,
                                       GenerationStats& stats) const;

    GenerationResult finish(std::vector<TokenId> raw, const GenerationRequest& request,
                            GenerationStats stats) const;

    const ModelBundle& model_;
    const RoadNetwork& network_;
    const BinTable& bins_;
    PenaltyMatrix penalty_;
    Reachability reach_;
    Tensor z_;  // cached RNE rows for the frozen checkpoint
    bool has_z_ = false;
};

}  // namespace blocktraj
