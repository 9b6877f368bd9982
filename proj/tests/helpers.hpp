#pragma once

// Shared fixtures for the unit suites: tiny deterministic networks,
// corpora, and models that keep individual tests fast.

#include <filesystem>

#include "blocktraj/pipeline.hpp"

namespace testutil {

using namespace blocktraj;

// Hand-built network: segments with explicit bearings/coords, edges given
// directly (bypasses the generator, so sinks and isolated nodes are
// constructible).
inline RoadNetwork make_network(std::size_t n,
                                const std::vector<std::pair<SegmentId, SegmentId>>& edges,
                                double cell_size = 200.0,
                                const std::vector<double>* bearings = nullptr) {
    std::vector<RoadSegment> segs(n);
    for (std::size_t i = 0; i < n; ++i) {
        segs[i].id = static_cast<SegmentId>(i);
        segs[i].length_m = 100.0 + 10.0 * static_cast<double>(i);
        segs[i].highway_class = static_cast<int>(i % 2);
        segs[i].lon = 50.0 * static_cast<double>(i);
        segs[i].lat = 30.0 * static_cast<double>(i % 3);
        segs[i].bearing_deg = bearings ? (*bearings)[i] : std::fmod(37.0 * i, 360.0);
    }
    return RoadNetwork(std::move(segs), edges, cell_size);
}

inline GridCitySpec small_city_spec(int rows = 4, int cols = 4, std::uint64_t seed = 11) {
    GridCitySpec spec;
    spec.rows = rows;
    spec.cols = cols;
    spec.block_len_m = 200.0;
    spec.seed = seed;
    spec.edge_drop_prob = 0.0;
    return spec;
}

struct TinyWorld {
    RoadNetwork net;
    std::vector<TripRecord> records;
    BinTable bins;
};

inline TinyWorld tiny_world(std::size_t n_records = 60, std::uint64_t seed = 5,
                            std::size_t min_len = 2, std::size_t max_len = 12) {
    TinyWorld w{generate_city(small_city_spec()), {}, {}};
    w.records = synthesize_corpus(w.net, n_records, seed, min_len, max_len);
    w.bins = fit_bins(w.records);
    return w;
}

inline ModelBundle tiny_model(const RoadNetwork& net, std::size_t d_model = 24,
                              std::size_t n_layers = 1, std::size_t max_positions = 48,
                              bool use_rne = true, std::uint64_t seed = 7) {
    DenoiserConfig dcfg;
    dcfg.d_model = d_model;
    dcfg.n_layers = n_layers;
    dcfg.n_heads = 4;
    dcfg.ffn_mult = 2;
    dcfg.max_positions = max_positions;
    dcfg.use_rne = use_rne;
    RneConfig rcfg;
    rcfg.dim = d_model;
    rcfg.sub_dim = 8;
    rcfg.edge_dim = 8;
    rcfg.proj_hidden = 2 * d_model;
    return make_model(net, dcfg, rcfg, seed);
}

inline std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("blocktraj_test_" + name);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testutil
