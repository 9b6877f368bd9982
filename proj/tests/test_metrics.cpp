#include <doctest.h>

#include <cmath>

#include "helpers.hpp"

using namespace blocktraj;

namespace {
Polyline random_polyline(Rng& rng, std::size_t max_len = 6) {
    Polyline p;
    const std::size_t n = 1 + rng.below(max_len);
    for (std::size_t i = 0; i < n; ++i) p.push_back({rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)});
    return p;
}

double point_dist(const Point& a, const Point& b) {
    const double dx = a.first - b.first;
    const double dy = a.second - b.second;
    return std::sqrt(dx * dx + dy * dy);
}

// exhaustive recursion over all monotone alignments
double dtw_oracle(const Polyline& a, const Polyline& b, std::size_t i, std::size_t j) {
    const double d = point_dist(a[i], b[j]);
    if (i == 0 && j == 0) return d;
    double best = std::numeric_limits<double>::infinity();
    if (i > 0) best = std::min(best, dtw_oracle(a, b, i - 1, j));
    if (j > 0) best = std::min(best, dtw_oracle(a, b, i, j - 1));
    if (i > 0 && j > 0) best = std::min(best, dtw_oracle(a, b, i - 1, j - 1));
    return d + best;
}

// exhaustive recursive edit distance with tolerance eps
double edr_oracle(const Polyline& a, const Polyline& b, std::size_t i, std::size_t j, double eps) {
    if (i == a.size()) return static_cast<double>(b.size() - j);
    if (j == b.size()) return static_cast<double>(a.size() - i);
    const double match = point_dist(a[i], b[j]) <= eps ? 0.0 : 1.0;
    return std::min({edr_oracle(a, b, i + 1, j + 1, eps) + match,
                     edr_oracle(a, b, i + 1, j, eps) + 1.0,
                     edr_oracle(a, b, i, j + 1, eps) + 1.0});
}
}  // namespace

TEST_CASE("radius of gyration basics") {
    CHECK(radius_of_gyration({{3.0, 4.0}}) == 0.0);
    CHECK(radius_of_gyration({{0.0, 0.0}, {2.0, 0.0}}) == doctest::Approx(1.0));
    Polyline square{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    CHECK(radius_of_gyration(square) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
}

TEST_CASE("jsd of identical histograms is zero and of disjoint supports is one") {
    Histogram a = build_histogram({1.0, 2.0, 3.0}, 0.0, 10.0);
    CHECK(jsd(a, a) == 0.0);
    Histogram lo = build_histogram({1.0, 1.5}, 0.0, 10.0);
    Histogram hi = build_histogram({9.0, 9.5}, 0.0, 10.0);
    CHECK(jsd(lo, hi) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("jsd is symmetric and histogram mass is normalized") {
    Rng rng(3);
    std::vector<double> xs, ys;
    for (int i = 0; i < 200; ++i) xs.push_back(rng.normal());
    for (int i = 0; i < 150; ++i) ys.push_back(rng.normal() + 0.5);
    double lo = -6.0, hi = 6.0;
    Histogram hx = build_histogram(xs, lo, hi);
    Histogram hy = build_histogram(ys, lo, hi);
    double mass = 0.0;
    for (double m : hx.mass) mass += m;
    CHECK(std::abs(mass - 1.0) < 1e-12);
    CHECK(std::abs(jsd(hx, hy) - jsd(hy, hx)) < 1e-12);
    CHECK(jsd(hx, hy) >= 0.0);
    CHECK(jsd(hx, hy) <= 1.0);
}

TEST_CASE("out-of-range values clip to the end bins") {
    Histogram h = build_histogram({-100.0, 100.0}, 0.0, 10.0, 5);
    CHECK(h.mass.front() == doctest::Approx(0.5));
    CHECK(h.mass.back() == doctest::Approx(0.5));
}

TEST_CASE("hausdorff basics and brute-force equivalence") {
    Polyline a{{0.0, 0.0}};
    Polyline b{{3.0, 4.0}};
    CHECK(hausdorff(a, a) == 0.0);
    CHECK(hausdorff(a, b) == doctest::Approx(5.0));
    Rng rng(7);
    for (int trial = 0; trial < 500; ++trial) {
        Polyline x = random_polyline(rng);
        Polyline y = random_polyline(rng);
        // independent double-max-min oracle
        double worst = 0.0;
        for (const Point& p : x) {
            double best = std::numeric_limits<double>::infinity();
            for (const Point& q : y) best = std::min(best, point_dist(p, q));
            worst = std::max(worst, best);
        }
        for (const Point& q : y) {
            double best = std::numeric_limits<double>::infinity();
            for (const Point& p : x) best = std::min(best, point_dist(p, q));
            worst = std::max(worst, best);
        }
        CHECK(hausdorff(x, y) == worst);
        CHECK(hausdorff(x, y) == hausdorff(y, x));
    }
}

TEST_CASE("dtw basics and exhaustive alignment equivalence") {
    Polyline a{{0.0, 0.0}};
    Polyline b{{0.0, 0.0}, {0.0, 1.0}};
    CHECK(dtw(a, a) == 0.0);
    CHECK(dtw(a, b) == doctest::Approx(1.0));
    Rng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        Polyline x = random_polyline(rng);
        Polyline y = random_polyline(rng);
        const double expect = dtw_oracle(x, y, x.size() - 1, y.size() - 1);
        CHECK(dtw(x, y) == doctest::Approx(expect).epsilon(1e-12));
        CHECK(dtw(x, y) == doctest::Approx(dtw(y, x)).epsilon(1e-12));
    }
}

TEST_CASE("edr basics and exhaustive recursion equivalence") {
    Polyline a{{0.0, 0.0}, {1.0, 0.0}};
    CHECK(edr(a, a, 0.1) == 0.0);
    Polyline far{{50.0, 50.0}, {60.0, 60.0}};
    CHECK(edr(a, far, 0.1) == 1.0);
    Rng rng(13);
    for (int trial = 0; trial < 500; ++trial) {
        Polyline x = random_polyline(rng);
        Polyline y = random_polyline(rng);
        const double eps = rng.uniform(0.0, 3.0);
        const double expect =
            edr_oracle(x, y, 0, 0, eps) / static_cast<double>(std::max(x.size(), y.size()));
        CHECK(edr(x, y, eps) == doctest::Approx(expect).epsilon(1e-12));
        CHECK(edr(x, y, eps) >= 0.0);
        CHECK(edr(x, y, eps) <= 1.0);
    }
}

TEST_CASE("trip distance sums segment lengths and matches the oracle records") {
    auto w = testutil::tiny_world(20, 3);
    for (const TripRecord& r : w.records)
        CHECK(trip_distance(r.segments, w.net) == doctest::Approx(r.d_trip_m).epsilon(1e-12));
    // monotone under extension
    std::vector<SegmentId> base{0};
    const double d0 = trip_distance(base, w.net);
    base.push_back(1);
    CHECK(trip_distance(base, w.net) > d0);
}

TEST_CASE("evaluating a set against itself yields zero everywhere") {
    // distinct OD cells per trajectory so each matches exactly itself
    auto net = generate_city(testutil::small_city_spec(6, 6));
    std::vector<std::vector<SegmentId>> trajs;
    trajs.push_back(shortest_route(net, 0, 30));
    trajs.push_back(shortest_route(net, 14, 2));
    trajs.push_back(shortest_route(net, 40, 55));
    MetricReport r = evaluate(trajs, trajs, net);
    CHECK(r.coverage == 1.0);
    CHECK(r.n_matched == trajs.size());
    CHECK(r.jsd_distance == 0.0);
    CHECK(r.jsd_radius == 0.0);
    CHECK(r.hausdorff_mean == 0.0);
    CHECK(r.dtw_mean == 0.0);
    CHECK(r.edr_mean == 0.0);
}

TEST_CASE("translating matched identical routes shifts hausdorff by the offset") {
    Polyline a{{0.0, 0.0}, {1.0, 0.0}, {2.0, 0.0}};
    Polyline b = a;
    for (Point& p : b) p.first += 0.25;
    CHECK(hausdorff(a, b) == doctest::Approx(0.25));
}

TEST_CASE("evaluate requires at least one OD match") {
    auto net = generate_city(testutil::small_city_spec(6, 6));
    std::vector<std::vector<SegmentId>> real{shortest_route(net, 0, 30)};
    std::vector<std::vector<SegmentId>> gen{shortest_route(net, 55, 14)};
    CHECK_THROWS_AS(evaluate(real, gen, net), DataError);
}

TEST_CASE("evaluate is deterministic and worker-count independent") {
    auto w = testutil::tiny_world(60, 41, 2, 10);
    std::vector<std::vector<SegmentId>> real, gen;
    for (std::size_t i = 0; i < w.records.size(); ++i) {
        if (i % 2 == 0)
            real.push_back(w.records[i].segments);
        else
            gen.push_back(w.records[i].segments);
    }
    MetricReport a = evaluate(real, gen, w.net, 0.0, 1);
    MetricReport b = evaluate(real, gen, w.net, 0.0, 4);
    CHECK(a.hausdorff_mean == b.hausdorff_mean);
    CHECK(a.dtw_mean == b.dtw_mean);
    CHECK(a.edr_mean == b.edr_mean);
    CHECK(a.jsd_distance == b.jsd_distance);
    CHECK(a.n_matched == b.n_matched);
}

TEST_CASE("metric report files carry the config hash") {
    const auto dir = testutil::temp_dir("metrics");
    MetricReport r;
    r.jsd_distance = 0.125;
    r.n_generated = 10;
    save_report(dir / "report.json", r, 0xabcd);
    const std::string text = read_text_file(dir / "report.json");
    CHECK(text.find("config_hash") != std::string::npos);
    CHECK(text.find("0.125") != std::string::npos);
}
