#pragma once

// Aggregates the denoiser and RNE parameters with the per-network context
// and vocabulary, plus unified checkpoint save/load with integrity
// metadata (vocabulary size, network hash, config hash).

#include "blocktraj/checkpoint.hpp"
#include "blocktraj/denoiser.hpp"

namespace blocktraj {

struct ModelBundle {
    DenoiserConfig dcfg;
    RneConfig rcfg;
    ParamStore params;
    Vocabulary vocab{0};
    RneContext rne_ctx;
};

nlohmann::json rne_config_to_json(const RneConfig& c);
RneConfig rne_config_from_json(const nlohmann::json& j);

// Fresh model: fills vocab/road fields from the network and initializes
// parameters (RNE first, then denoiser) from the "init" stream of seed.
ModelBundle make_model(const RoadNetwork& network, DenoiserConfig dcfg, RneConfig rcfg,
                       std::uint64_t seed);

void save_model(const std::filesystem::path& path, const ModelBundle& model,
                const RoadNetwork& network, nlohmann::json extra_meta);

// Verifies the stored network hash and vocabulary size against the
// network the caller loaded. meta_out, when non-null, receives the header.
ModelBundle load_model(const std::filesystem::path& path, const RoadNetwork& network,
                       nlohmann::json* meta_out = nullptr);

}  // namespace blocktraj
