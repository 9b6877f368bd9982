#include "blocktraj/synth_world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>

#include <nlohmann/json.hpp>

namespace blocktraj {

using nlohmann::json;

namespace {

struct Street {
    int tail_r, tail_c, head_r, head_c;  // travel direction tail -> head
    int highway_class;
};

bool strongly_connected(std::size_t n, const std::vector<std::pair<SegmentId, SegmentId>>& edges) {
    std::vector<std::vector<SegmentId>> fwd(n), rev(n);
    for (const auto& [f, t] : edges) {
        fwd[f].push_back(t);
        rev[t].push_back(f);
    }
    auto covers = [n](const std::vector<std::vector<SegmentId>>& g) {
        std::vector<bool> seen(n, false);
        std::vector<SegmentId> stack{0};
        seen[0] = true;
        std::size_t count = 1;
        while (!stack.empty()) {
            const SegmentId u = stack.back();
            stack.pop_back();
            for (SegmentId v : g[u])
                if (!seen[v]) {
                    seen[v] = true;
                    ++count;
                    stack.push_back(v);
                }
        }
        return count == n;
    };
    return covers(fwd) && covers(rev);
}

std::vector<SegmentId> dijkstra(const RoadNetwork& net, const std::vector<double>& weight,
                                SegmentId org, SegmentId dest) {
    const std::size_t n = net.size();
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    std::vector<SegmentId> parent(n, n);
    using Item = std::pair<double, SegmentId>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[org] = weight[org];
    pq.emplace(dist[org], org);
    while (!pq.empty()) {
        const auto [d, u] = pq.top();
        pq.pop();
        if (d > dist[u]) continue;
        if (u == dest) break;
        for (SegmentId v : net.out_neighbors(u)) {
            const double nd = d + weight[v];
            if (nd < dist[v]) {
                dist[v] = nd;
                parent[v] = u;
                pq.emplace(nd, v);
            }
        }
    }
    if (!std::isfinite(dist[dest]))
        throw DataError("route error: segment " + std::to_string(dest) +
                        " unreachable from " + std::to_string(org));
    std::vector<SegmentId> path;
    for (SegmentId cur = dest;; cur = parent[cur]) {
        path.push_back(cur);
        if (cur == org) break;
    }
    std::reverse(path.begin(), path.end());
    return path;
}

}  // namespace

RoadNetwork generate_city(const GridCitySpec& spec) {
    if (spec.rows < 2 || spec.cols < 2)
        throw UsageError("grid city needs rows >= 2 and cols >= 2");
    if (spec.edge_drop_prob < 0.0 || spec.edge_drop_prob > 0.3)
        throw UsageError("edge_drop_prob must be in [0, 0.3]");

    // Junction (r, c) sits near (c * block_len, r * block_len) with a
    // seeded jitter so segment lengths, bearings, and midpoints carry
    // real information. Major grid lines every 4th row/column get a
    // distinct highway class.
    Rng jitter_rng(stream_seed(spec.seed, "junctions"));
    std::vector<double> jx(spec.rows * spec.cols), jy(spec.rows * spec.cols);
    for (int j = 0; j < spec.rows * spec.cols; ++j) {
        jx[j] = jitter_rng.uniform(-0.12, 0.12) * spec.block_len_m;
        jy[j] = jitter_rng.uniform(-0.12, 0.12) * spec.block_len_m;
    }
    auto junction_x = [&](int r, int c) { return c * spec.block_len_m + jx[r * spec.cols + c]; };
    auto junction_y = [&](int r, int c) { return r * spec.block_len_m + jy[r * spec.cols + c]; };
    std::vector<Street> streets;
    for (int r = 0; r < spec.rows; ++r)
        for (int c = 0; c + 1 < spec.cols; ++c)
            streets.push_back({r, c, r, c + 1, r % 4 == 0 ? 1 : 0});
    for (int r = 0; r + 1 < spec.rows; ++r)
        for (int c = 0; c < spec.cols; ++c)
            streets.push_back({r, c, r + 1, c, c % 4 == 0 ? 1 : 0});

    std::vector<RoadSegment> segments;
    segments.reserve(streets.size() * 2);
    auto add_segment = [&](const Street& st, bool reversed) {
        RoadSegment s;
        s.id = static_cast<SegmentId>(segments.size());
        s.length_m = spec.block_len_m;
        s.highway_class = st.highway_class;
        const double tx = reversed ? junction_x(st.head_r, st.head_c) : junction_x(st.tail_r, st.tail_c);
        const double ty = reversed ? junction_y(st.head_r, st.head_c) : junction_y(st.tail_r, st.tail_c);
        const double hx = reversed ? junction_x(st.tail_r, st.tail_c) : junction_x(st.head_r, st.head_c);
        const double hy = reversed ? junction_y(st.tail_r, st.tail_c) : junction_y(st.head_r, st.head_c);
        s.tail_lon = tx;
        s.tail_lat = ty;
        s.head_lon = hx;
        s.head_lat = hy;
        s.length_m = std::hypot(hx - tx, hy - ty);
        s.lon = 0.5 * (tx + hx);
        s.lat = 0.5 * (ty + hy);
        double deg = std::atan2(hx - tx, hy - ty) * 180.0 / M_PI;
        if (deg < 0.0) deg += 360.0;
        s.bearing_deg = deg;
        segments.push_back(s);
    };
    for (const Street& st : streets) {
        add_segment(st, false);
        add_segment(st, true);
    }

    // Transitions: j continues i when i's head junction is j's tail
    // junction. U-turns onto the reverse segment are kept.
    const int n_junctions = spec.rows * spec.cols;
    std::vector<std::vector<SegmentId>> incoming(n_junctions), outgoing(n_junctions);
    for (std::size_t k = 0; k < streets.size(); ++k) {
        const Street& st = streets[k];
        const int tail = st.tail_r * spec.cols + st.tail_c;
        const int head = st.head_r * spec.cols + st.head_c;
        const SegmentId fwd = static_cast<SegmentId>(2 * k);
        const SegmentId rev = fwd + 1;
        outgoing[tail].push_back(fwd);
        incoming[head].push_back(fwd);
        outgoing[head].push_back(rev);
        incoming[tail].push_back(rev);
    }
    std::vector<std::pair<SegmentId, SegmentId>> all_edges;
    for (int j = 0; j < n_junctions; ++j)
        for (SegmentId in : incoming[j])
            for (SegmentId out : outgoing[j])
                if (in != out) all_edges.emplace_back(in, out);
    std::sort(all_edges.begin(), all_edges.end());

    Rng rng(stream_seed(spec.seed, "city"));
    for (int attempt = 0; attempt < 100; ++attempt) {
        std::vector<std::pair<SegmentId, SegmentId>> edges;
        edges.reserve(all_edges.size());
        for (const auto& e : all_edges)
            if (spec.edge_drop_prob == 0.0 || rng.uniform01() >= spec.edge_drop_prob)
                edges.push_back(e);
        if (strongly_connected(segments.size(), edges))
            return RoadNetwork(segments, std::move(edges), spec.block_len_m);
    }
    throw DataError("generation error: no strongly connected city in 100 attempts");
}

std::vector<SegmentId> oracle_route(const RoadNetwork& network, Rng& rng, SegmentId r_org,
                                    SegmentId r_dest) {
    std::vector<double> weight(network.size());
    for (std::size_t i = 0; i < network.size(); ++i)
        weight[i] = network.segment(static_cast<SegmentId>(i)).length_m * rng.uniform(0.8, 1.25);
    return dijkstra(network, weight, r_org, r_dest);
}

std::vector<SegmentId> shortest_route(const RoadNetwork& network, SegmentId r_org,
                                      SegmentId r_dest) {
    std::vector<double> weight(network.size());
    for (std::size_t i = 0; i < network.size(); ++i)
        weight[i] = network.segment(static_cast<SegmentId>(i)).length_m;
    return dijkstra(network, weight, r_org, r_dest);
}

bool trajectory_is_valid(const RoadNetwork& network, const std::vector<SegmentId>& segments) {
    if (segments.empty()) return false;
    for (SegmentId s : segments)
        if (s >= network.size()) return false;
    for (std::size_t i = 1; i < segments.size(); ++i)
        if (!network.adjacent(segments[i - 1], segments[i])) return false;
    return true;
}

std::vector<TripRecord> synthesize_corpus(const RoadNetwork& network, std::size_t n,
                                          std::uint64_t seed, std::size_t min_len,
                                          std::size_t max_len) {
    if (n == 0) throw UsageError("corpus size must be positive");
    if (min_len < 1 || min_len > max_len) throw UsageError("need 1 <= min_len <= max_len");
    Rng rng(stream_seed(seed, "corpus"));
    std::vector<TripRecord> records;
    records.reserve(n);
    const std::size_t budget = 10 * n;
    for (std::size_t attempt = 0; attempt < budget && records.size() < n; ++attempt) {
        const auto org = static_cast<SegmentId>(rng.below(network.size()));
        const auto dest = static_cast<SegmentId>(rng.below(network.size()));
        std::vector<SegmentId> route = oracle_route(network, rng, org, dest);
        if (route.size() < min_len || route.size() > max_len) continue;
        TripRecord rec;
        rec.segments = std::move(route);
        rec.t_org_s = rng.uniform(0.0, 86400.0);
        double d = 0.0;
        for (SegmentId s : rec.segments) d += network.segment(s).length_m;
        rec.d_trip_m = d;
        rec.d_seg_mean_m = d / static_cast<double>(rec.segments.size());
        const double v = rng.uniform(5.0, 15.0);
        rec.t_trip_s = d / v;
        rec.v_avg_mps = d / rec.t_trip_s;
        records.push_back(std::move(rec));
    }
    if (records.size() < n)
        throw DataError("corpus error: only " + std::to_string(records.size()) + " of " +
                        std::to_string(n) + " routes within [" + std::to_string(min_len) + ", " +
                        std::to_string(max_len) + "] after " + std::to_string(budget) +
                        " attempts");
    return records;
}

CorpusSplit split_corpus(std::vector<TripRecord> records, std::uint64_t seed) {
    Rng rng(stream_seed(seed, "split"));
    rng.shuffle(records);
    const std::size_t n = records.size();
    const std::size_t n_train = n * 8 / 10;
    const std::size_t n_val = n / 10;
    CorpusSplit split;
    split.train.assign(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.val.assign(records.begin() + static_cast<std::ptrdiff_t>(n_train),
                     records.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    split.test.assign(records.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), records.end());
    return split;
}

void save_corpus(const std::filesystem::path& path, const std::vector<TripRecord>& records) {
    std::ostringstream out;
    for (const TripRecord& r : records) {
        json j{{"segments", r.segments}, {"t_org_s", r.t_org_s},       {"d_trip_m", r.d_trip_m},
               {"d_seg_mean_m", r.d_seg_mean_m}, {"t_trip_s", r.t_trip_s}, {"v_avg_mps", r.v_avg_mps}};
        out << j.dump() << "\n";
    }
    write_text_file(path, out.str());
}

std::vector<TripRecord> load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus: " + path.string());
    std::vector<TripRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw IntegrityError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        TripRecord r;
        r.segments = j.at("segments").get<std::vector<SegmentId>>();
        r.t_org_s = j.at("t_org_s").get<double>();
        r.d_trip_m = j.at("d_trip_m").get<double>();
        r.d_seg_mean_m = j.at("d_seg_mean_m").get<double>();
        r.t_trip_s = j.at("t_trip_s").get<double>();
        r.v_avg_mps = j.at("v_avg_mps").get<double>();
        if (r.segments.empty())
            throw IntegrityError(path.string() + ":" + std::to_string(line_no) +
                                 ": record has no segments");
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace blocktraj
