#include "blocktraj/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <thread>

#include <nlohmann/json.hpp>

namespace blocktraj {

namespace {
double dist(const Point& p, const Point& q) {
    const double dx = p.first - q.first;
    const double dy = p.second - q.second;
    return std::sqrt(dx * dx + dy * dy);
}
}  // namespace

Polyline polyline_of(const RoadNetwork& network, const std::vector<SegmentId>& segments) {
    Polyline pts;
    pts.reserve(segments.size());
    for (SegmentId s : segments) pts.push_back(segment_midpoint(network, s));
    return pts;
}

double trip_distance(const std::vector<SegmentId>& segments, const RoadNetwork& network) {
    double total = 0.0;
    for (SegmentId s : segments) total += network.segment(s).length_m;
    return total;
}

double radius_of_gyration(const Polyline& points) {
    if (points.empty()) throw ContractError("radius_of_gyration: empty polyline");
    double cx = 0.0, cy = 0.0;
    for (const Point& p : points) {
        cx += p.first;
        cy += p.second;
    }
    cx /= static_cast<double>(points.size());
    cy /= static_cast<double>(points.size());
    double acc = 0.0;
    for (const Point& p : points) {
        const double dx = p.first - cx;
        const double dy = p.second - cy;
        acc += dx * dx + dy * dy;
    }
    return std::sqrt(acc / static_cast<double>(points.size()));
}

Histogram build_histogram(const std::vector<double>& values, double lo, double hi,
                          std::size_t nbins) {
    if (nbins == 0) throw ContractError("histogram needs at least one bin");
    Histogram h;
    h.edges.resize(nbins + 1);
    const double width = hi > lo ? (hi - lo) / static_cast<double>(nbins) : 1.0;
    for (std::size_t i = 0; i <= nbins; ++i) h.edges[i] = lo + width * static_cast<double>(i);
    std::vector<double> counts(nbins, 0.0);
    for (double v : values) {
        std::ptrdiff_t idx = hi > lo ? static_cast<std::ptrdiff_t>(std::floor((v - lo) / width)) : 0;
        idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(nbins) - 1);
        counts[static_cast<std::size_t>(idx)] += 1.0;
    }
    h.mass.resize(nbins, 0.0);
    if (!values.empty())
        for (std::size_t i = 0; i < nbins; ++i)
            h.mass[i] = counts[i] / static_cast<double>(values.size());
    return h;
}

double jsd(const Histogram& h1, const Histogram& h2) {
    if (h1.edges != h2.edges) throw ContractError("jsd: histograms must share bin edges");
    double acc = 0.0;
    for (std::size_t i = 0; i < h1.mass.size(); ++i) {
        const double p = h1.mass[i], q = h2.mass[i];
        const double m = 0.5 * (p + q);
        if (p > 0.0) acc += 0.5 * p * std::log2(p / m);
        if (q > 0.0) acc += 0.5 * q * std::log2(q / m);
    }
    return acc;
}

double jsd_of_samples(const std::vector<double>& a, const std::vector<double>& b,
                      std::size_t nbins) {
    if (a.empty() || b.empty()) throw ContractError("jsd_of_samples: empty sample");
    double lo = a[0], hi = a[0];
    for (double v : a) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (double v : b) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return jsd(build_histogram(a, lo, hi, nbins), build_histogram(b, lo, hi, nbins));
}

double hausdorff(const Polyline& a, const Polyline& b) {
    if (a.empty() || b.empty()) throw ContractError("hausdorff: empty polyline");
    auto directed = [](const Polyline& x, const Polyline& y) {
        double worst = 0.0;
        for (const Point& p : x) {
            double best = std::numeric_limits<double>::infinity();
            for (const Point& q : y) best = std::min(best, dist(p, q));
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::max(directed(a, b), directed(b, a));
}

double dtw(const Polyline& a, const Polyline& b) {
    if (a.empty() || b.empty()) throw ContractError("dtw: empty polyline");
    const std::size_t n = a.size(), m = b.size();
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
    prev[0] = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = inf;
        for (std::size_t j = 1; j <= m; ++j) {
            const double d = dist(a[i - 1], b[j - 1]);
            cur[j] = d + std::min({prev[j], cur[j - 1], prev[j - 1]});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

double edr(const Polyline& a, const Polyline& b, double eps) {
    if (a.empty() || b.empty()) throw ContractError("edr: empty sequence");
    if (eps < 0.0) throw ContractError("edr: eps must be >= 0");
    const std::size_t n = a.size(), m = b.size();
    std::vector<double> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<double>(j);
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<double>(i);
        for (std::size_t j = 1; j <= m; ++j) {
            if (dist(a[i - 1], b[j - 1]) <= eps)
                cur[j] = prev[j - 1];
            else
                cur[j] = 1.0 + std::min({prev[j - 1], prev[j], cur[j - 1]});
        }
        std::swap(prev, cur);
    }
    return prev[m] / static_cast<double>(std::max(n, m));
}

MetricReport evaluate(const std::vector<std::vector<SegmentId>>& real_trajectories,
                      const std::vector<std::vector<SegmentId>>& generated_trajectories,
                      const RoadNetwork& network, double eps, std::size_t n_workers) {
    if (real_trajectories.empty() || generated_trajectories.empty())
        throw DataError("evaluate: need nonempty real and generated sets");
    if (eps <= 0.0) eps = network.cell_size();

    auto od_cells = [&](const std::vector<SegmentId>& t) {
        const Point o = segment_midpoint(network, t.front());
        const Point d = segment_midpoint(network, t.back());
        return std::make_pair(cell_of(network, o.first, o.second),
                              cell_of(network, d.first, d.second));
    };

    std::vector<Polyline> real_lines(real_trajectories.size());
    std::map<std::pair<std::pair<std::int64_t, std::int64_t>, std::pair<std::int64_t, std::int64_t>>,
             std::vector<std::size_t>>
        by_od;
    for (std::size_t i = 0; i < real_trajectories.size(); ++i) {
        if (real_trajectories[i].empty()) throw DataError("evaluate: empty real trajectory");
        real_lines[i] = polyline_of(network, real_trajectories[i]);
        by_od[od_cells(real_trajectories[i])].push_back(i);
    }

    struct PerGenerated {
        bool matched = false;
        double hausdorff_mean = 0.0, dtw_mean = 0.0, edr_mean = 0.0;
    };
    std::vector<PerGenerated> rows(generated_trajectories.size());
    auto work = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t g = lo; g < hi; ++g) {
            const auto& traj = generated_trajectories[g];
            if (traj.empty()) throw DataError("evaluate: empty generated trajectory");
            const auto it = by_od.find(od_cells(traj));
            if (it == by_od.end()) continue;
            const Polyline gl = polyline_of(network, traj);
            PerGenerated& row = rows[g];
            row.matched = true;
            for (std::size_t r : it->second) {
                row.hausdorff_mean += hausdorff(gl, real_lines[r]);
                row.dtw_mean += dtw(gl, real_lines[r]);
                row.edr_mean += edr(gl, real_lines[r], eps);
            }
            const double k = static_cast<double>(it->second.size());
            row.hausdorff_mean /= k;
            row.dtw_mean /= k;
            row.edr_mean /= k;
        }
    };
    if (n_workers <= 1) {
        work(0, rows.size());
    } else {
        std::vector<std::thread> threads;
        const std::size_t chunk = (rows.size() + n_workers - 1) / n_workers;
        for (std::size_t w = 0; w < n_workers; ++w) {
            const std::size_t lo = w * chunk;
            const std::size_t hi = std::min(rows.size(), lo + chunk);
            if (lo < hi) threads.emplace_back(work, lo, hi);
        }
        for (auto& t : threads) t.join();
    }

    MetricReport report;
    report.n_generated = generated_trajectories.size();
    // fixed-order reduction keeps the report deterministic under --workers
    for (const PerGenerated& row : rows) {
        if (!row.matched) continue;
        ++report.n_matched;
        report.hausdorff_mean += row.hausdorff_mean;
        report.dtw_mean += row.dtw_mean;
        report.edr_mean += row.edr_mean;
    }
    if (report.n_matched == 0)
        throw DataError("evaluate: no generated trajectory shares OD cells with any real one");
    report.hausdorff_mean /= static_cast<double>(report.n_matched);
    report.dtw_mean /= static_cast<double>(report.n_matched);
    report.edr_mean /= static_cast<double>(report.n_matched);
    report.coverage =
        static_cast<double>(report.n_matched) / static_cast<double>(report.n_generated);

    std::vector<double> real_dist, gen_dist, real_rg, gen_rg;
    for (std::size_t i = 0; i < real_trajectories.size(); ++i) {
        real_dist.push_back(trip_distance(real_trajectories[i], network));
        real_rg.push_back(radius_of_gyration(real_lines[i]));
    }
    for (const auto& t : generated_trajectories) {
        gen_dist.push_back(trip_distance(t, network));
        gen_rg.push_back(radius_of_gyration(polyline_of(network, t)));
    }
    report.jsd_distance = jsd_of_samples(real_dist, gen_dist);
    report.jsd_radius = jsd_of_samples(real_rg, gen_rg);
    return report;
}

void save_report(const std::filesystem::path& path, const MetricReport& report,
                 std::uint64_t config_hash) {
    nlohmann::json j{{"jsd_distance", report.jsd_distance},
                     {"jsd_radius", report.jsd_radius},
                     {"hausdorff_mean", report.hausdorff_mean},
                     {"dtw_mean", report.dtw_mean},
                     {"edr_mean", report.edr_mean},
                     {"coverage", report.coverage},
                     {"n_generated", report.n_generated},
                     {"n_matched", report.n_matched},
                     {"config_hash", hash_hex(config_hash)}};
    write_text_file(path, j.dump(2) + "\n");
}

}  // namespace blocktraj
