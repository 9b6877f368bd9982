#pragma once

// Directed road network over segment nodes: adjacency structure, the
// log-space penalty matrix used by constrained sampling, and geometric
// derived quantities (steering angles, midpoints, spatial cells).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "blocktraj/common.hpp"

namespace blocktraj {

using SegmentId = std::uint32_t;

struct RoadSegment {
    SegmentId id = 0;
    double length_m = 0.0;
    int highway_class = 0;
    double lon = 0.0;  // representative coordinate (midpoint for generated cities)
    double lat = 0.0;
    double bearing_deg = 0.0;  // [0, 360), 0 = +lat axis, 90 = +lon axis
    // travel endpoints; optional in files, used to recompute bearings
    std::optional<double> tail_lon, tail_lat, head_lon, head_lat;
};

class RoadNetwork {
public:
    RoadNetwork(std::vector<RoadSegment> segments, std::vector<std::pair<SegmentId, SegmentId>> edges,
                double cell_size);

    std::size_t size() const { return segments_.size(); }
    const RoadSegment& segment(SegmentId i) const;
    const std::vector<RoadSegment>& segments() const { return segments_; }
    const std::vector<std::pair<SegmentId, SegmentId>>& edges() const { return edges_; }
    double cell_size() const { return cell_size_; }

    bool adjacent(SegmentId i, SegmentId j) const {
        return (adj_[static_cast<std::size_t>(i) * words_ + j / 64] >> (j % 64)) & 1u;
    }
    const std::vector<SegmentId>& out_neighbors(SegmentId i) const;
    const std::uint64_t* adjacency_row(SegmentId i) const { return adj_.data() + i * words_; }
    std::size_t adjacency_words() const { return words_; }

    double mean_out_degree() const;

    // bounding-box minimum over segment midpoints; origin of the cell grid
    double origin_x() const { return origin_x_; }
    double origin_y() const { return origin_y_; }

    std::uint64_t identity_hash() const;

private:
    std::vector<RoadSegment> segments_;
    std::vector<std::pair<SegmentId, SegmentId>> edges_;
    std::vector<std::vector<SegmentId>> out_;
    std::vector<std::uint64_t> adj_;
    std::size_t words_ = 0;
    double cell_size_ = 0.0;
    double origin_x_ = 0.0, origin_y_ = 0.0;
};

struct PenaltyMatrix {
    std::size_t n = 0;
    std::vector<double> values;  // row-major |V| x |V|, rows indexed by predecessor

    double at(SegmentId from, SegmentId to) const { return values[static_cast<std::size_t>(from) * n + to]; }
    const double* row(SegmentId from) const { return values.data() + static_cast<std::size_t>(from) * n; }
};

inline constexpr double kNegBig = -1e9;

PenaltyMatrix build_penalty(const RoadNetwork& network, double neg_big = kNegBig);

// Signed bearing difference bearing(j) - bearing(i), wrapped to (-180, 180].
double steering_angle(const RoadNetwork& network, SegmentId i, SegmentId j);

std::pair<double, double> segment_midpoint(const RoadNetwork& network, SegmentId i);

// Half-open cells anchored at the bounding-box minimum: [k*s, (k+1)*s).
std::pair<std::int64_t, std::int64_t> cell_of(const RoadNetwork& network, double x, double y);

// ----------------------------------------------------------------------
// Network file I/O. Single JSON document; the writer puts one segment or
// edge per line so the loader can report duplicates line-precisely.
// ----------------------------------------------------------------------

void save_network(const std::filesystem::path& path, const RoadNetwork& network,
                  const std::string& config_hash_hex = "");
RoadNetwork load_network(const std::filesystem::path& path);

}  // namespace blocktraj
