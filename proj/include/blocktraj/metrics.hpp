#pragma once

// Evaluation suite: global JSD over trip distance and radius of gyration,
// and local per-OD-cell Hausdorff / DTW / EDR against matched real
// trajectories.

#include <filesystem>

#include "blocktraj/road_graph.hpp"
#include "blocktraj/synth_world.hpp"

namespace blocktraj {

using Point = std::pair<double, double>;
using Polyline = std::vector<Point>;

Polyline polyline_of(const RoadNetwork& network, const std::vector<SegmentId>& segments);

double trip_distance(const std::vector<SegmentId>& segments, const RoadNetwork& network);

double radius_of_gyration(const Polyline& points);

struct Histogram {
    std::vector<double> edges;  // nbins + 1
    std::vector<double> mass;   // normalized; out-of-range clips to end bins
};

// 50 equal-width bins over [lo, hi]; degenerate range puts everything in bin 0.
Histogram build_histogram(const std::vector<double>& values, double lo, double hi,
                          std::size_t nbins = 50);

// Base-2 Jensen-Shannon divergence; requires identical bin edges.
double jsd(const Histogram& h1, const Histogram& h2);

// Pooled-range histogram JSD between two samples.
double jsd_of_samples(const std::vector<double>& a, const std::vector<double>& b,
                      std::size_t nbins = 50);

double hausdorff(const Polyline& a, const Polyline& b);

double dtw(const Polyline& a, const Polyline& b);

// Edit distance with spatial match tolerance eps, normalized by max length.
double edr(const Polyline& a, const Polyline& b, double eps);

struct MetricReport {
    double jsd_distance = 0.0;
    double jsd_radius = 0.0;
    double hausdorff_mean = 0.0;
    double dtw_mean = 0.0;
    double edr_mean = 0.0;
    double coverage = 0.0;
    std::size_t n_generated = 0;
    std::size_t n_matched = 0;
};

// Matches each generated trajectory against real test trajectories that
// share its (origin cell, destination cell); local metrics average the
// per-generated means over matched reals. eps <= 0 selects the network
// cell size. Throws when no generated trajectory has a match.
MetricReport evaluate(const std::vector<std::vector<SegmentId>>& real_trajectories,
                      const std::vector<std::vector<SegmentId>>& generated_trajectories,
                      const RoadNetwork& network, double eps = 0.0, std::size_t n_workers = 1);

void save_report(const std::filesystem::path& path, const MetricReport& report,
                 std::uint64_t config_hash);

}  // namespace blocktraj
