#include "blocktraj/sampler.hpp"

#include <algorithm>
#include <cmath>

namespace blocktraj {

Tensor apply_cfg(const Tensor& f_cond, const Tensor& f_uncond, double w) {
    if (!f_cond.same_shape(f_uncond))
        throw ContractError("apply_cfg: shape mismatch " + f_cond.shape_str() + " vs " +
                            f_uncond.shape_str());
    Tensor out = f_uncond;
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = f_uncond[i] + (w + 1.0) * (f_cond[i] - f_uncond[i]);
    return out;
}

// ----------------------------------------------------------------------
// Reachability
// ----------------------------------------------------------------------

Reachability::Reachability(const RoadNetwork& network)
    : net_(network), words_(network.adjacency_words()) {}

void Reachability::prepare(std::size_t max_steps) const {
    if (max_steps == 0) return;
    std::lock_guard<std::mutex> lock(grow_mutex_);
    const std::size_t n = net_.size();
    while (ready_.load(std::memory_order_acquire) < max_steps) {
        const std::size_t k = ready_.load(std::memory_order_relaxed);
        std::vector<std::uint64_t> level(n * words_, 0);
        if (k == 0) {
            for (SegmentId i = 0; i < n; ++i)
                std::copy(net_.adjacency_row(i), net_.adjacency_row(i) + words_,
                          level.begin() + static_cast<std::ptrdiff_t>(i * words_));
        } else {
            const std::vector<std::uint64_t>& prev = levels_[k - 1];
            for (std::size_t i = 0; i < n; ++i) {
                std::uint64_t* out_row = level.data() + i * words_;
                const std::uint64_t* prev_row = prev.data() + i * words_;
                for (std::size_t w = 0; w < words_; ++w) {
                    std::uint64_t bits = prev_row[w];
                    while (bits) {
                        const std::size_t x = w * 64 + static_cast<std::size_t>(std::countr_zero(bits));
                        bits &= bits - 1;
                        const std::uint64_t* arow = net_.adjacency_row(static_cast<SegmentId>(x));
                        for (std::size_t ww = 0; ww < words_; ++ww) out_row[ww] |= arow[ww];
                    }
                }
            }
        }
        levels_.push_back(std::move(level));
        ready_.store(k + 1, std::memory_order_release);
    }
}

bool Reachability::reaches(SegmentId from, SegmentId to, std::size_t steps) const {
    if (steps == 0) return from == to;
    if (ready_.load(std::memory_order_acquire) < steps) prepare(steps);
    const std::vector<std::uint64_t>& level = levels_[steps - 1];
    return (level[from * words_ + to / 64] >> (to % 64)) & 1u;
}

// ----------------------------------------------------------------------
// Position sampling
// ----------------------------------------------------------------------

PositionSample constrained_sample_position(
    const double* logits, const Vocabulary& vocab, TokenId prev, const PenaltyMatrix* penalty,
    const Reachability* reach, std::optional<std::pair<SegmentId, std::size_t>> right_anchor,
    double lambda, Rng& rng) {
    const std::size_t n_roads = vocab.n_roads();
    const bool tcs = penalty != nullptr;

    if (tcs && prev == kEos) return {kEos, 1.0, false};  // chain suspends past EOS

    // additive penalty per candidate; candidates are roads then EOS
    std::vector<double> adjusted(n_roads + 1);
    const double* prow = nullptr;
    if (tcs && vocab.is_road(prev)) prow = penalty->row(vocab.road_id(prev));
    for (std::size_t j = 0; j < n_roads; ++j) {
        double v = logits[kRoadBase + j];
        if (prow) v += prow[j];
        if (tcs && right_anchor &&
            !reach->reaches(static_cast<SegmentId>(j), right_anchor->first, right_anchor->second))
            v += kNegBig;
        adjusted[j] = v;
    }
    adjusted[n_roads] = logits[kEos];
    if (tcs && right_anchor) adjusted[n_roads] += kNegBig;  // a road chain must pass through here

    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j <= n_roads; ++j) {
        double s = adjusted[j];
        if (s < kNegBig / 2) continue;  // never let Gumbel noise rescue an excluded candidate
        if (lambda > 0.0) s += lambda * rng.gumbel();
        if (s > best_score) {
            best_score = s;
            best = j;
        }
    }

    PositionSample out;
    if (best_score == -std::numeric_limits<double>::infinity()) {
        out.token = kEos;
        out.confidence = 1.0;
        out.dead_end = true;
        return out;
    }
    out.token = best == n_roads ? kEos : static_cast<TokenId>(kRoadBase + best);

    // softmax confidence under the penalty-adjusted (not Gumbel-perturbed) logits
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : adjusted) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : adjusted) z += std::exp(v - mx);
    out.confidence = std::exp(adjusted[best] - mx) / z;
    return out;
}

// ----------------------------------------------------------------------
// TrajectorySampler
// ----------------------------------------------------------------------

TrajectorySampler::TrajectorySampler(const ModelBundle& model, const RoadNetwork& network,
                                     const BinTable& bins)
    : model_(model), network_(network), bins_(bins), penalty_(build_penalty(network)),
      reach_(network) {
    if (model_.dcfg.use_rne) {
        z_ = rne_infer(const_cast<ParamStore&>(model_.params), model_.rcfg, model_.rne_ctx);
        has_z_ = true;
    }
}

std::vector<TokenId> TrajectorySampler::denoise_block(const Prompt& prompt,
                                                      const std::vector<TokenId>& context,
                                                      bool first_block,
                                                      const GenerationRequest& request,
                                                      std::size_t l_prime, std::size_t steps,
                                                      Rng& rng, GenerationStats& stats) const {
    BlockState state;
    state.candidates.assign(l_prime, kMask);
    state.committed.assign(l_prime, false);
    state.confidence.assign(l_prime, 0.0);
    if (first_block) {
        // contract: the first generated position is clamped to r_org
        state.candidates[0] = model_.vocab.road_token(request.cond.r_org);
        state.committed[0] = true;
        state.confidence[0] = 1.0;
    }
    std::size_t remaining = 0;
    for (bool c : state.committed)
        if (!c) ++remaining;

    const Prompt uncond = null_prompt(prompt);
    const Tensor* z = has_z_ ? &z_ : nullptr;

    // windows mirror the training layout: one EOS, PAD afterwards
    auto make_window = [&](const Prompt& p) {
        std::vector<TokenId> window(p.tokens.begin(), p.tokens.end());
        window.insert(window.end(), context.begin(), context.end());
        for (std::size_t i = 0; i < l_prime; ++i)
            window.push_back(state.committed[i] ? state.candidates[i] : kMask);
        bool seen_eos = false;
        for (std::size_t i = kPromptLen; i < window.size(); ++i) {
            if (seen_eos && window[i] == kEos) window[i] = kPad;
            if (window[i] == kEos) seen_eos = true;
        }
        return window;
    };
    const std::size_t block_start = kPromptLen + context.size();

    // every step runs its forward pass even once all positions are
    // committed; NFE per block is steps (or 2*steps under CFG) by construction
    for (std::size_t step = steps; step >= 1; --step) {
        NfeCounter nfe;
        Tensor f = denoiser_logits(const_cast<ParamStore&>(model_.params), model_.dcfg,
                                   make_window(prompt), block_start, l_prime, z, &nfe);
        if (request.cfg_w > 0.0) {
            Tensor f_uncond = denoiser_logits(const_cast<ParamStore&>(model_.params), model_.dcfg,
                                              make_window(uncond), block_start, l_prime, z, &nfe);
            f = apply_cfg(f, f_uncond, request.cfg_w);
        }
        stats.nfe += nfe.calls;
        if (remaining == 0) continue;

        // left-to-right sweep over masked positions
        for (std::size_t i = 0; i < l_prime; ++i) {
            if (state.committed[i]) continue;
            TokenId prev;
            if (i == 0) {
                prev = context.empty() ? model_.vocab.road_token(request.cond.r_org)
                                       : context.back();
            } else {
                prev = state.candidates[i - 1];
            }
            std::optional<std::pair<SegmentId, std::size_t>> anchor;
            for (std::size_t j = i + 1; j < l_prime; ++j) {
                if (!state.committed[j]) continue;
                if (model_.vocab.is_road(state.candidates[j]))
                    anchor = {model_.vocab.road_id(state.candidates[j]), j - i};
                break;  // a committed EOS ends the road chain; no anchor
            }
            PositionSample s = constrained_sample_position(
                f.row(i), model_.vocab, prev, request.tcs ? &penalty_ : nullptr,
                request.tcs ? &reach_ : nullptr, anchor, request.temperature, rng);
            state.candidates[i] = s.token;
            state.confidence[i] = s.confidence;
            if (s.dead_end) ++stats.dead_ends;
        }

        // commit the top-k_t masked positions by confidence (ties: leftmost)
        const std::size_t k_t = DiffusionSchedule::commit_count(remaining, step);
        std::vector<std::size_t> open;
        for (std::size_t i = 0; i < l_prime; ++i)
            if (!state.committed[i]) open.push_back(i);
        std::sort(open.begin(), open.end(), [&](std::size_t a, std::size_t b) {
            if (state.confidence[a] != state.confidence[b])
                return state.confidence[a] > state.confidence[b];
            return a < b;
        });
        for (std::size_t k = 0; k < k_t && k < open.size(); ++k) {
            state.committed[open[k]] = true;
            --remaining;
        }
    }
    return state.candidates;
}

GenerationResult TrajectorySampler::finish(std::vector<TokenId> raw,
                                           const GenerationRequest& request,
                                           GenerationStats stats) const {
    const auto first_eos = std::find(raw.begin(), raw.end(), kEos);
    stats.eos_sampled = first_eos != raw.end();
    stats.untruncated_len = static_cast<std::size_t>(first_eos - raw.begin());

    // destination-aware termination: truncate at the first r_dest
    const TokenId dest_tok = model_.vocab.road_token(request.cond.r_dest);
    const auto first_dest = std::find(raw.begin(), raw.end(), dest_tok);
    if (first_dest != raw.end()) {
        stats.dest_reached = true;
        std::fill(first_dest + 1, raw.end(), kEos);
    }

    GenerationResult result;
    result.segments = decode_tokens(raw, model_.vocab);
    result.stats = stats;
    return result;
}

GenerationResult TrajectorySampler::generate(const GenerationRequest& request) const {
    if (request.n_blocks == 0 || request.l_prime == 0 || request.steps == 0)
        throw UsageError("generation needs n_blocks, l_prime, steps >= 1");
    const std::size_t window_len = kPromptLen + request.n_blocks * request.l_prime;
    if (window_len > model_.dcfg.max_positions)
        throw UsageError("requested budget " + std::to_string(window_len) +
                         " exceeds model max_positions " +
                         std::to_string(model_.dcfg.max_positions));
    if (request.tcs) reach_.prepare(request.l_prime > 0 ? request.l_prime - 1 : 0);

    const Prompt prompt = encode_prompt(request.cond, model_.vocab, bins_);
    Rng rng(stream_seed(request.seed, "gumbel"));
    GenerationStats stats;
    std::vector<TokenId> raw;
    raw.reserve(request.n_blocks * request.l_prime);
    for (std::size_t b = 0; b < request.n_blocks; ++b) {
        std::vector<TokenId> block = denoise_block(prompt, raw, b == 0, request, request.l_prime,
                                                   request.steps, rng, stats);
        raw.insert(raw.end(), block.begin(), block.end());
        ++stats.blocks;
    }
    return finish(std::move(raw), request, stats);
}

GenerationResult TrajectorySampler::ar_generate(const GenerationRequest& request) const {
    const std::size_t budget = request.n_blocks * request.l_prime;
    if (budget == 0) throw UsageError("empty generation budget");
    if (kPromptLen + budget > model_.dcfg.max_positions)
        throw UsageError("requested budget exceeds model max_positions");

    const Prompt prompt = encode_prompt(request.cond, model_.vocab, bins_);
    const Prompt uncond = null_prompt(prompt);
    const Tensor* z = has_z_ ? &z_ : nullptr;
    Rng rng(stream_seed(request.seed, "gumbel"));
    GenerationStats stats;

    std::vector<TokenId> raw{model_.vocab.road_token(request.cond.r_org)};
    for (std::size_t pos = 1; pos < budget; ++pos) {
        std::vector<TokenId> window(prompt.tokens.begin(), prompt.tokens.end());
        window.insert(window.end(), raw.begin(), raw.end());
        window.push_back(kMask);
        NfeCounter nfe;
        Tensor f = denoiser_logits(const_cast<ParamStore&>(model_.params), model_.dcfg, window,
                                   window.size() - 1, 1, z, &nfe);
        if (request.cfg_w > 0.0) {
            std::vector<TokenId> uwindow(uncond.tokens.begin(), uncond.tokens.end());
            uwindow.insert(uwindow.end(), raw.begin(), raw.end());
            uwindow.push_back(kMask);
            Tensor fu = denoiser_logits(const_cast<ParamStore&>(model_.params), model_.dcfg,
                                        uwindow, uwindow.size() - 1, 1, z, &nfe);
            f = apply_cfg(f, fu, request.cfg_w);
        }
        stats.nfe += nfe.calls;
        ++stats.blocks;  // one single-token block per sampled position

        PositionSample s =
            constrained_sample_position(f.row(0), model_.vocab, raw.back(),
                                        request.tcs ? &penalty_ : nullptr, nullptr, std::nullopt,
                                        request.temperature, rng);
        if (s.dead_end) ++stats.dead_ends;
        raw.push_back(s.token);
        if (s.token == kEos) break;  // AR stops once it emits EOS
    }
    return finish(std::move(raw), request, stats);
}

GenerationResult TrajectorySampler::mdlm_generate(const GenerationRequest& request) const {
    GenerationRequest full = request;
    full.l_prime = request.n_blocks * request.l_prime;
    full.n_blocks = 1;
    return generate(full);
}

GenerationResult TrajectorySampler::run(const std::string& decoder,
                                        const GenerationRequest& request) const {
    if (decoder == "block") return generate(request);
    if (decoder == "ar") return ar_generate(request);
    if (decoder == "mdlm") return mdlm_generate(request);
    throw UsageError("unknown decoder: " + decoder + " (expected block, ar, or mdlm)");
}

std::vector<SegmentId> TrajectorySampler::random_walk_baseline(const ConditioningTuple& cond,
                                                               std::size_t budget,
                                                               std::uint64_t seed) const {
    Rng rng(stream_seed(seed, "walk"));
    std::vector<SegmentId> segs{cond.r_org};
    while (segs.size() < budget && segs.back() != cond.r_dest) {
        const auto& nbrs = network_.out_neighbors(segs.back());
        if (nbrs.empty()) break;
        segs.push_back(nbrs[rng.below(nbrs.size())]);
    }
    return segs;
}

}  // namespace blocktraj
