#pragma once

// Transformer denoiser: full bidirectional attention over the window
// [prompt | clean context blocks | noisy block], logits returned for the
// noisy-block positions only. Road-token embeddings come from the RNE
// output unless use_rne is off.

#include "blocktraj/optim.hpp"
#include "blocktraj/rne.hpp"
#include "blocktraj/token_model.hpp"

#include <nlohmann/json.hpp>

namespace blocktraj {

struct DenoiserConfig {
    std::size_t d_model = 64;
    std::size_t n_layers = 3;
    std::size_t n_heads = 4;
    std::size_t ffn_mult = 4;
    std::size_t max_positions = 64;
    std::size_t vocab_size = 0;
    std::uint32_t road_base = kRoadBase;
    std::uint32_t n_roads = 0;
    bool tie_embeddings = false;  // kept false
    bool use_rne = true;

    nlohmann::json to_json() const;
    static DenoiserConfig from_json(const nlohmann::json& j);
};

void init_denoiser_params(ParamStore& params, const DenoiserConfig& cfg, Rng& rng);

// Counts forward invocations; reset at the start of each generation.
struct NfeCounter {
    long calls = 0;
    void reset() { calls = 0; }
};

// Training/grad-check path: builds onto an existing graph. road_rows is
// the RNE output node (or null without RNE). Returns (block_len, vocab)
// logits for window positions [block_start, block_start + block_len).
Node* denoiser_forward(Graph& g, ParamBinder& bind, const DenoiserConfig& cfg,
                       const std::vector<TokenId>& window, std::size_t block_start,
                       std::size_t block_len, Node* road_rows);

// Inference path on a throwaway no-grad graph; z points at the cached RNE
// output (null without RNE).
Tensor denoiser_logits(ParamStore& params, const DenoiserConfig& cfg,
                       const std::vector<TokenId>& window, std::size_t block_start,
                       std::size_t block_len, const Tensor* z, NfeCounter* nfe = nullptr);

}  // namespace blocktraj
