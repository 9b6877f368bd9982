#pragma once

// Road Network Encoder: per-segment feature embeddings fused and refined
// by stacked single-head GATv2 layers over the segment graph, then
// projected into the denoiser embedding space by a two-layer MLP. Output
// row i replaces the token embedding of road token i.

#include "blocktraj/optim.hpp"
#include "blocktraj/road_graph.hpp"

namespace blocktraj {

struct RneConfig {
    std::size_t dim = 64;          // GAT hidden dim d
    std::size_t sub_dim = 32;      // per-feature sub-embedding
    std::size_t edge_dim = 16;     // reach/angle sub-embedding d_e
    std::size_t n_layers = 2;
    std::size_t proj_hidden = 128; // injection MLP hidden d_p
    std::size_t out_dim = 64;      // denoiser embedding width
    std::size_t n_highway_classes = 8;
    double leaky_slope = 0.2;
};

// Static per-network inputs: normalized features and the flattened
// neighborhood pair list (out-edges plus self-loops, grouped by source).
struct RneContext {
    std::vector<std::uint32_t> ids;
    std::vector<std::uint32_t> type_ids;
    Tensor len_col, lon_col, lat_col;          // (|V|, 1) normalized
    std::vector<std::uint32_t> pair_src;       // per pair
    std::vector<std::uint32_t> pair_dst;
    std::vector<std::size_t> pair_offsets;     // |V|+1, pairs grouped by src
    std::vector<std::uint32_t> reach_flags;    // 0 = self, 1 = edge
    Tensor angle_feats;                        // (n_pairs, 2) = (sin, cos) of steering angle
};

RneContext build_rne_context(const RoadNetwork& network);

void init_rne_params(ParamStore& params, const RneConfig& cfg, std::size_t n_roads, Rng& rng);

// Fused per-segment feature rows (|V|, dim) before graph attention.
Node* rne_segment_embeddings(Graph& g, ParamBinder& bind, const RneContext& ctx);

// Fused intersection rows, one per neighborhood pair: (n_pairs, dim).
Node* rne_edge_embeddings(Graph& g, ParamBinder& bind, const RneContext& ctx);

// One GATv2 layer: v_i' = sum_j alpha_ij (v_j Theta_t) over out-neighbors
// plus self. alpha_out, when non-null, receives the attention column.
Node* rne_gat_layer(Graph& g, ParamBinder& bind, const RneConfig& cfg, const RneContext& ctx,
                    Node* v, Node* edge, std::size_t layer, Node** alpha_out = nullptr);

// Topology-aware rows, one per segment: (|V|, out_dim). attn_out, when
// non-null, receives the per-layer attention columns (tests use them).
Node* rne_forward(Graph& g, ParamBinder& bind, const RneConfig& cfg, const RneContext& ctx,
                  std::vector<Node*>* attn_out = nullptr);

// Evaluation-mode convenience: computes the output on a throwaway graph.
Tensor rne_infer(ParamStore& params, const RneConfig& cfg, const RneContext& ctx);

}  // namespace blocktraj
