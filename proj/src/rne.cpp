#include "blocktraj/rne.hpp"

#include <algorithm>
#include <cmath>

namespace blocktraj {

namespace {

constexpr double kDegToRad = M_PI / 180.0;

Tensor normalized_column(const std::vector<double>& values) {
    const std::size_t n = values.size();
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double sd = var > 1e-12 ? std::sqrt(var) : 1.0;
    Tensor col(n, 1);
    for (std::size_t i = 0; i < n; ++i) col[i] = (values[i] - mean) / sd;
    return col;
}

Tensor normal_init(std::size_t rows, std::size_t cols, double sd, Rng& rng) {
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = sd * rng.normal();
    return t;
}

}  // namespace

RneContext build_rne_context(const RoadNetwork& network) {
    const std::size_t n = network.size();
    RneContext ctx;
    ctx.ids.resize(n);
    ctx.type_ids.resize(n);
    std::vector<double> lens(n), lons(n), lats(n);
    for (std::size_t i = 0; i < n; ++i) {
        const RoadSegment& s = network.segment(static_cast<SegmentId>(i));
        ctx.ids[i] = static_cast<std::uint32_t>(i);
        ctx.type_ids[i] = static_cast<std::uint32_t>(s.highway_class);
        lens[i] = s.length_m;
        lons[i] = s.lon;
        lats[i] = s.lat;
    }
    ctx.len_col = normalized_column(lens);
    ctx.lon_col = normalized_column(lons);
    ctx.lat_col = normalized_column(lats);

    ctx.pair_offsets.push_back(0);
    std::vector<double> angles;
    for (SegmentId i = 0; i < n; ++i) {
        std::vector<SegmentId> nbrs = network.out_neighbors(i);
        nbrs.push_back(i);  // self-loop
        std::sort(nbrs.begin(), nbrs.end());
        for (SegmentId j : nbrs) {
            ctx.pair_src.push_back(i);
            ctx.pair_dst.push_back(j);
            ctx.reach_flags.push_back(j == i ? 0u : 1u);
            angles.push_back(j == i ? 0.0 : steering_angle(network, i, j));
        }
        ctx.pair_offsets.push_back(ctx.pair_src.size());
    }
    ctx.angle_feats = Tensor(angles.size(), 2);
    for (std::size_t p = 0; p < angles.size(); ++p) {
        ctx.angle_feats.at(p, 0) = std::sin(angles[p] * kDegToRad);
        ctx.angle_feats.at(p, 1) = std::cos(angles[p] * kDegToRad);
    }
    return ctx;
}

void init_rne_params(ParamStore& params, const RneConfig& cfg, std::size_t n_roads, Rng& rng) {
    const std::size_t d = cfg.dim, sub = cfg.sub_dim, de = cfg.edge_dim;
    auto lin_sd = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };

    // identity-dominant init: direction twins share length, type, and
    // nearly the midpoint, so the id rows start large and the redundant
    // geography small; training re-balances as needed
    const double feat_sd = 0.15;
    params.add("rne.id_table", normal_init(n_roads, sub, 1.0, rng));
    params.add("rne.type_table", normal_init(cfg.n_highway_classes, sub, feat_sd, rng));
    params.add("rne.len_w", normal_init(1, sub, feat_sd, rng));
    params.add("rne.len_b", Tensor(1, sub));
    params.add("rne.lon_w", normal_init(1, sub, feat_sd, rng));
    params.add("rne.lon_b", Tensor(1, sub));
    params.add("rne.lat_w", normal_init(1, sub, feat_sd, rng));
    params.add("rne.lat_b", Tensor(1, sub));
    params.add("rne.fuse_w", normal_init(5 * sub, d, lin_sd(5 * sub), rng));
    params.add("rne.fuse_b", Tensor(1, d));

    params.add("rne.reach_table", normal_init(2, de, feat_sd, rng));
    params.add("rne.angle_w", normal_init(2, de, feat_sd, rng));
    params.add("rne.angle_b", Tensor(1, de));
    params.add("rne.edge_fuse_w", normal_init(2 * de, d, lin_sd(2 * de), rng));
    params.add("rne.edge_fuse_b", Tensor(1, d));

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "rne.l" + std::to_string(l) + ".";
        params.add(p + "theta_s", normal_init(d, d, lin_sd(d), rng));
        params.add(p + "theta_t", normal_init(d, d, lin_sd(d), rng));
        params.add(p + "att", normal_init(d, 1, lin_sd(d), rng));
    }

    params.add("rne.inj_w1", normal_init(d, cfg.proj_hidden, lin_sd(d), rng));
    params.add("rne.inj_b1", Tensor(1, cfg.proj_hidden));
    params.add("rne.inj_w2", normal_init(cfg.proj_hidden, cfg.out_dim, lin_sd(cfg.proj_hidden), rng));
    params.add("rne.inj_b2", Tensor(1, cfg.out_dim));
}

Node* rne_segment_embeddings(Graph& g, ParamBinder& bind, const RneContext& ctx) {
    // concatenation order fixed: [id, len, type, lon, lat]
    Node* id_emb = g.gather_rows(bind("rne.id_table"), ctx.ids);
    Node* len_emb = g.add_rowvec(g.matmul(g.constant(ctx.len_col), bind("rne.len_w")),
                                 bind("rne.len_b"));
    Node* type_emb = g.gather_rows(bind("rne.type_table"), ctx.type_ids);
    Node* lon_emb = g.add_rowvec(g.matmul(g.constant(ctx.lon_col), bind("rne.lon_w")),
                                 bind("rne.lon_b"));
    Node* lat_emb = g.add_rowvec(g.matmul(g.constant(ctx.lat_col), bind("rne.lat_w")),
                                 bind("rne.lat_b"));
    Node* fused = g.concat_cols({id_emb, len_emb, type_emb, lon_emb, lat_emb});
    return g.add_rowvec(g.matmul(fused, bind("rne.fuse_w")), bind("rne.fuse_b"));
}

Node* rne_edge_embeddings(Graph& g, ParamBinder& bind, const RneContext& ctx) {
    // e_ij = fuse(reach || angle), one row per pair, shared across layers
    Node* reach_emb = g.gather_rows(bind("rne.reach_table"), ctx.reach_flags);
    Node* angle_emb = g.add_rowvec(g.matmul(g.constant(ctx.angle_feats), bind("rne.angle_w")),
                                   bind("rne.angle_b"));
    return g.add_rowvec(g.matmul(g.concat_cols({reach_emb, angle_emb}), bind("rne.edge_fuse_w")),
                        bind("rne.edge_fuse_b"));
}

Node* rne_gat_layer(Graph& g, ParamBinder& bind, const RneConfig& cfg, const RneContext& ctx,
                    Node* v, Node* edge, std::size_t layer, Node** alpha_out) {
    const std::string p = "rne.l" + std::to_string(layer) + ".";
    Node* s = g.matmul(v, bind(p + "theta_s"));
    Node* t = g.matmul(v, bind(p + "theta_t"));
    Node* pre = g.add(g.add(g.gather_rows(s, ctx.pair_src), g.gather_rows(t, ctx.pair_dst)), edge);
    Node* scores = g.matmul(g.leaky_relu(pre, cfg.leaky_slope), bind(p + "att"));
    Node* alpha = g.segment_softmax(scores, ctx.pair_offsets);
    if (alpha_out) *alpha_out = alpha;
    return g.segment_weighted_rows(alpha, t, ctx.pair_dst, ctx.pair_offsets);
}

Node* rne_forward(Graph& g, ParamBinder& bind, const RneConfig& cfg, const RneContext& ctx,
                  std::vector<Node*>* attn_out) {
    Node* v0 = rne_segment_embeddings(g, bind, ctx);
    Node* edge = rne_edge_embeddings(g, bind, ctx);
    Node* v = v0;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        Node* alpha = nullptr;
        v = rne_gat_layer(g, bind, cfg, ctx, v, edge, l, &alpha);
        if (attn_out) attn_out->push_back(alpha);
    }
    // skip around the attention stack: neighborhood averaging otherwise
    // collapses segments that share length, type, and midpoint (reverse
    // twins on a grid), erasing the identity the denoiser needs
    v = g.add(v0, v);

    Node* hidden = g.gelu(g.add_rowvec(g.matmul(v, bind("rne.inj_w1")), bind("rne.inj_b1")));
    return g.add_rowvec(g.matmul(hidden, bind("rne.inj_w2")), bind("rne.inj_b2"));
}

Tensor rne_infer(ParamStore& params, const RneConfig& cfg, const RneContext& ctx) {
    Graph g(false);
    ParamBinder bind(g, params, /*trainable=*/false);
    return rne_forward(g, bind, cfg, ctx)->value();
}

}  // namespace blocktraj
