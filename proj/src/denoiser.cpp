#include "blocktraj/denoiser.hpp"

#include <algorithm>
#include <cmath>

namespace blocktraj {

using nlohmann::json;

json DenoiserConfig::to_json() const {
    return json{{"d_model", d_model},   {"n_layers", n_layers},
                {"n_heads", n_heads},   {"ffn_mult", ffn_mult},
                {"max_positions", max_positions}, {"vocab_size", vocab_size},
                {"road_base", road_base}, {"n_roads", n_roads},
                {"tie_embeddings", tie_embeddings}, {"use_rne", use_rne}};
}

DenoiserConfig DenoiserConfig::from_json(const json& j) {
    DenoiserConfig c;
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.ffn_mult = j.at("ffn_mult").get<std::size_t>();
    c.max_positions = j.at("max_positions").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.road_base = j.at("road_base").get<std::uint32_t>();
    c.n_roads = j.at("n_roads").get<std::uint32_t>();
    c.tie_embeddings = j.value("tie_embeddings", false);
    c.use_rne = j.value("use_rne", true);
    return c;
}

namespace {
Tensor normal_init(std::size_t rows, std::size_t cols, double sd, Rng& rng) {
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = sd * rng.normal();
    return t;
}
}  // namespace

void init_denoiser_params(ParamStore& params, const DenoiserConfig& cfg, Rng& rng) {
    if (cfg.d_model % cfg.n_heads != 0)
        throw UsageError("d_model must be divisible by n_heads");
    if (cfg.vocab_size == 0) throw UsageError("vocab_size must be set");
    const std::size_t d = cfg.d_model;
    const std::size_t ffn = cfg.ffn_mult * d;
    auto lin_sd = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };

    // token and position rows at the scale of the injected road rows, so
    // positional identity survives the first layer norm
    params.add("dn.tok_table", normal_init(cfg.vocab_size, d, 0.3, rng));
    params.add("dn.pos_table", normal_init(cfg.max_positions, d, 0.3, rng));
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "dn.l" + std::to_string(l) + ".";
        params.add(p + "ln1_g", Tensor(1, d, 1.0));
        params.add(p + "ln1_b", Tensor(1, d));
        params.add(p + "wq", normal_init(d, d, lin_sd(d), rng));
        params.add(p + "bq", Tensor(1, d));
        params.add(p + "wk", normal_init(d, d, lin_sd(d), rng));
        params.add(p + "wv", normal_init(d, d, lin_sd(d), rng));
        params.add(p + "bv", Tensor(1, d));
        params.add(p + "wo", normal_init(d, d, lin_sd(d), rng));
        params.add(p + "bo", Tensor(1, d));
        params.add(p + "ln2_g", Tensor(1, d, 1.0));
        params.add(p + "ln2_b", Tensor(1, d));
        params.add(p + "ffn_w1", normal_init(d, ffn, lin_sd(d), rng));
        params.add(p + "ffn_b1", Tensor(1, ffn));
        params.add(p + "ffn_w2", normal_init(ffn, d, lin_sd(ffn), rng));
        params.add(p + "ffn_b2", Tensor(1, d));
    }
    params.add("dn.lnf_g", Tensor(1, d, 1.0));
    params.add("dn.lnf_b", Tensor(1, d));
    params.add("dn.out_w", normal_init(d, cfg.vocab_size, lin_sd(d), rng));
    params.add("dn.out_b", Tensor(1, cfg.vocab_size));
}

Node* denoiser_forward(Graph& g, ParamBinder& bind, const DenoiserConfig& cfg,
                       const std::vector<TokenId>& window, std::size_t block_start,
                       std::size_t block_len, Node* road_rows) {
    const std::size_t len = window.size();
    if (len > cfg.max_positions)
        throw ContractError("denoiser input length " + std::to_string(len) +
                            " exceeds max_positions " + std::to_string(cfg.max_positions));
    if (block_start + block_len > len) throw ContractError("block span outside window");
    const std::size_t d = cfg.d_model;
    const std::size_t hd = d / cfg.n_heads;

    Node* emb = g.embed_tokens(bind("dn.tok_table"), cfg.use_rne ? road_rows : nullptr, window,
                               cfg.road_base, cfg.n_roads);
    std::vector<std::uint32_t> pos_ids(len);
    for (std::size_t i = 0; i < len; ++i) pos_ids[i] = static_cast<std::uint32_t>(i);
    Node* x = g.add(emb, g.gather_rows(bind("dn.pos_table"), pos_ids));

    // PAD and MASK positions are excluded as attention keys: PAD so logits
    // never depend on padding content, MASK so the number of undenoised
    // positions carries no length cue and training windows match the
    // all-mask blocks seen at inference. Masked queries still read their
    // own position through the residual stream.
    Node* key_bias = nullptr;
    {
        bool any = false;
        Tensor bias(len, len);
        for (std::size_t j = 0; j < len; ++j)
            if (window[j] == kPad || window[j] == kMask) {
                any = true;
                for (std::size_t i = 0; i < len; ++i) bias.at(i, j) = -1e30;
            }
        if (any) key_bias = g.constant(std::move(bias));
    }

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "dn.l" + std::to_string(l) + ".";
        Node* h = g.layer_norm(x, bind(p + "ln1_g"), bind(p + "ln1_b"));
        Node* q = g.add_rowvec(g.matmul(h, bind(p + "wq")), bind(p + "bq"));
        // no key bias: softmax over keys is invariant to it
        Node* k = g.matmul(h, bind(p + "wk"));
        Node* v = g.add_rowvec(g.matmul(h, bind(p + "wv")), bind(p + "bv"));
        std::vector<Node*> heads;
        heads.reserve(cfg.n_heads);
        for (std::size_t hh = 0; hh < cfg.n_heads; ++hh) {
            Node* qh = g.slice_cols(q, hh * hd, hd);
            Node* kh = g.slice_cols(k, hh * hd, hd);
            Node* vh = g.slice_cols(v, hh * hd, hd);
            Node* scores =
                g.scale(g.matmul(qh, kh, false, true), 1.0 / std::sqrt(static_cast<double>(hd)));
            if (key_bias) scores = g.add(scores, key_bias);
            heads.push_back(g.matmul(g.softmax_rows(scores), vh));
        }
        Node* proj = g.add_rowvec(g.matmul(g.concat_cols(heads), bind(p + "wo")), bind(p + "bo"));
        x = g.add(x, proj);
        Node* h2 = g.layer_norm(x, bind(p + "ln2_g"), bind(p + "ln2_b"));
        Node* f = g.add_rowvec(g.matmul(h2, bind(p + "ffn_w1")), bind(p + "ffn_b1"));
        Node* f2 = g.add_rowvec(g.matmul(g.gelu(f), bind(p + "ffn_w2")), bind(p + "ffn_b2"));
        x = g.add(x, f2);
    }
    Node* final_h = g.layer_norm(x, bind("dn.lnf_g"), bind("dn.lnf_b"));
    Node* block_h = g.slice_rows(final_h, block_start, block_len);
    return g.add_rowvec(g.matmul(block_h, bind("dn.out_w")), bind("dn.out_b"));
}

Tensor denoiser_logits(ParamStore& params, const DenoiserConfig& cfg,
                       const std::vector<TokenId>& window, std::size_t block_start,
                       std::size_t block_len, const Tensor* z, NfeCounter* nfe) {
    Graph g(false);  // inference path; training and grad checks run checked graphs
    ParamBinder bind(g, params, /*trainable=*/false);
    Node* road_rows = z ? g.leaf(z, false) : nullptr;
    Node* logits = denoiser_forward(g, bind, cfg, window, block_start, block_len, road_rows);
    if (nfe) nfe->calls += 1;
    return logits->value();
}

}  // namespace blocktraj
