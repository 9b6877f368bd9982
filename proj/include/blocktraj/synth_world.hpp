#pragma once

// Reproducible grid-city road networks and oracle trajectory corpora.
// Routes come from shortest-path search under per-route perturbed segment
// weights, which keeps them near-optimal while giving distinct OD pairs
// route diversity.

#include <filesystem>
#include <vector>

#include "blocktraj/road_graph.hpp"

namespace blocktraj {

struct GridCitySpec {
    int rows = 8;            // junction rows
    int cols = 8;            // junction columns
    double block_len_m = 200.0;
    std::uint64_t seed = 1;
    double edge_drop_prob = 0.0;  // in [0, 0.3]; retried until strongly connected
};

struct TripRecord {
    std::vector<SegmentId> segments;
    double t_org_s = 0.0;      // seconds since midnight
    double d_trip_m = 0.0;     // sum of segment lengths
    double d_seg_mean_m = 0.0; // d_trip / L
    double t_trip_s = 0.0;
    double v_avg_mps = 0.0;    // d_trip / t_trip
};

RoadNetwork generate_city(const GridCitySpec& spec);

// Minimum-weight path org -> dest with weights length * U(0.8, 1.25)
// resampled per call. Throws DataError when dest is unreachable.
std::vector<SegmentId> oracle_route(const RoadNetwork& network, Rng& rng, SegmentId r_org,
                                    SegmentId r_dest);

// Unperturbed shortest path (oracle for tests and the routing lower bound).
std::vector<SegmentId> shortest_route(const RoadNetwork& network, SegmentId r_org,
                                      SegmentId r_dest);

std::vector<TripRecord> synthesize_corpus(const RoadNetwork& network, std::size_t n,
                                          std::uint64_t seed, std::size_t min_len,
                                          std::size_t max_len);

bool trajectory_is_valid(const RoadNetwork& network, const std::vector<SegmentId>& segments);

struct CorpusSplit {
    std::vector<TripRecord> train, val, test;
};

// 80/10/10 by record index after a seeded shuffle.
CorpusSplit split_corpus(std::vector<TripRecord> records, std::uint64_t seed);

// Newline-delimited JSON records.
void save_corpus(const std::filesystem::path& path, const std::vector<TripRecord>& records);
std::vector<TripRecord> load_corpus(const std::filesystem::path& path);

}  // namespace blocktraj
