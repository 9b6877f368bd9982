#include "blocktraj/model.hpp"

namespace blocktraj {

using nlohmann::json;

json rne_config_to_json(const RneConfig& c) {
    return json{{"dim", c.dim},
                {"sub_dim", c.sub_dim},
                {"edge_dim", c.edge_dim},
                {"n_layers", c.n_layers},
                {"proj_hidden", c.proj_hidden},
                {"out_dim", c.out_dim},
                {"n_highway_classes", c.n_highway_classes},
                {"leaky_slope", c.leaky_slope}};
}

RneConfig rne_config_from_json(const json& j) {
    RneConfig c;
    c.dim = j.at("dim").get<std::size_t>();
    c.sub_dim = j.at("sub_dim").get<std::size_t>();
    c.edge_dim = j.at("edge_dim").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.proj_hidden = j.at("proj_hidden").get<std::size_t>();
    c.out_dim = j.at("out_dim").get<std::size_t>();
    c.n_highway_classes = j.at("n_highway_classes").get<std::size_t>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    return c;
}

ModelBundle make_model(const RoadNetwork& network, DenoiserConfig dcfg, RneConfig rcfg,
                       std::uint64_t seed) {
    ModelBundle m;
    m.vocab = Vocabulary(network.size());
    m.rne_ctx = build_rne_context(network);
    dcfg.vocab_size = m.vocab.size();
    dcfg.road_base = kRoadBase;
    dcfg.n_roads = static_cast<std::uint32_t>(network.size());
    rcfg.out_dim = dcfg.d_model;
    int max_class = 0;
    for (const auto& s : network.segments()) max_class = std::max(max_class, s.highway_class);
    if (rcfg.n_highway_classes <= static_cast<std::size_t>(max_class))
        rcfg.n_highway_classes = static_cast<std::size_t>(max_class) + 1;
    m.dcfg = dcfg;
    m.rcfg = rcfg;
    Rng rng(stream_seed(seed, "init"));
    if (dcfg.use_rne) init_rne_params(m.params, m.rcfg, network.size(), rng);
    init_denoiser_params(m.params, m.dcfg, rng);
    return m;
}

void save_model(const std::filesystem::path& path, const ModelBundle& model,
                const RoadNetwork& network, json extra_meta) {
    json meta = std::move(extra_meta);
    meta["denoiser"] = model.dcfg.to_json();
    meta["rne"] = rne_config_to_json(model.rcfg);
    meta["vocab_size"] = model.vocab.size();
    meta["network_hash"] = hash_hex(network.identity_hash());
    save_checkpoint(path, model.params, meta);
}

ModelBundle load_model(const std::filesystem::path& path, const RoadNetwork& network,
                       json* meta_out) {
    ModelBundle m;
    json meta = load_checkpoint(path, m.params);
    m.dcfg = DenoiserConfig::from_json(meta.at("denoiser"));
    m.rcfg = rne_config_from_json(meta.at("rne"));
    m.vocab = Vocabulary(network.size());
    const std::size_t stored_vocab = meta.at("vocab_size").get<std::size_t>();
    if (stored_vocab != m.vocab.size())
        throw IntegrityError("checkpoint vocabulary size " + std::to_string(stored_vocab) +
                             " does not match network (" + std::to_string(m.vocab.size()) + ")");
    const std::string stored_net = meta.value("network_hash", "");
    if (stored_net != hash_hex(network.identity_hash()))
        throw IntegrityError("checkpoint was trained on a different network (hash " + stored_net +
                             " vs " + hash_hex(network.identity_hash()) + ")");
    m.rne_ctx = build_rne_context(network);
    if (meta_out) *meta_out = std::move(meta);
    return m;
}

}  // namespace blocktraj
