#include "blocktraj/road_graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace blocktraj {

using nlohmann::json;

RoadNetwork::RoadNetwork(std::vector<RoadSegment> segments,
                         std::vector<std::pair<SegmentId, SegmentId>> edges, double cell_size)
    : segments_(std::move(segments)), edges_(std::move(edges)), cell_size_(cell_size) {
    const std::size_t n = segments_.size();
    if (n == 0) throw DataError("road network has no segments");
    for (std::size_t i = 0; i < n; ++i) {
        if (segments_[i].id != i)
            throw IntegrityError("segment ids must be dense and sorted: slot " + std::to_string(i) +
                                 " holds id " + std::to_string(segments_[i].id));
        if (!(segments_[i].length_m > 0.0))
            throw IntegrityError("segment " + std::to_string(i) + " has non-positive length");
        double b = std::fmod(segments_[i].bearing_deg, 360.0);
        if (b < 0.0) b += 360.0;
        segments_[i].bearing_deg = b;
    }
    words_ = (n + 63) / 64;
    adj_.assign(n * words_, 0);
    out_.assign(n, {});
    for (const auto& [from, to] : edges_) {
        if (from >= n || to >= n)
            throw IntegrityError("edge endpoint out of range: (" + std::to_string(from) + ", " +
                                 std::to_string(to) + ")");
        if (from == to)
            throw IntegrityError("self-loop edge on segment " + std::to_string(from));
        if (adjacent(from, to))
            throw IntegrityError("duplicate edge (" + std::to_string(from) + ", " +
                                 std::to_string(to) + ")");
        adj_[static_cast<std::size_t>(from) * words_ + to / 64] |= 1ull << (to % 64);
        out_[from].push_back(to);
    }
    for (auto& v : out_) std::sort(v.begin(), v.end());

    origin_x_ = segments_[0].lon;
    origin_y_ = segments_[0].lat;
    for (const auto& s : segments_) {
        origin_x_ = std::min(origin_x_, s.lon);
        origin_y_ = std::min(origin_y_, s.lat);
    }
}

const RoadSegment& RoadNetwork::segment(SegmentId i) const {
    if (i >= segments_.size()) throw ContractError("segment id out of range: " + std::to_string(i));
    return segments_[i];
}

const std::vector<SegmentId>& RoadNetwork::out_neighbors(SegmentId i) const {
    if (i >= out_.size()) throw ContractError("segment id out of range: " + std::to_string(i));
    return out_[i];
}

double RoadNetwork::mean_out_degree() const {
    std::size_t total = 0;
    for (const auto& v : out_) total += v.size();
    return static_cast<double>(total) / static_cast<double>(out_.size());
}

std::uint64_t RoadNetwork::identity_hash() const {
    std::string canon;
    canon.reserve(segments_.size() * 64);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "cell=%.17g;", cell_size_);
    canon += buf;
    for (const auto& s : segments_) {
        std::snprintf(buf, sizeof(buf), "s%u:%.17g,%d,%.17g,%.17g,%.17g;", s.id, s.length_m,
                      s.highway_class, s.lon, s.lat, s.bearing_deg);
        canon += buf;
    }
    for (const auto& [f, t] : edges_) {
        std::snprintf(buf, sizeof(buf), "e%u-%u;", f, t);
        canon += buf;
    }
    return fnv1a(canon);
}

PenaltyMatrix build_penalty(const RoadNetwork& network, double neg_big) {
    if (!(neg_big <= -1e6))
        throw ContractError("build_penalty: neg_big must be <= -1e6, got " +
                            std::to_string(neg_big));
    PenaltyMatrix p;
    p.n = network.size();
    p.values.assign(p.n * p.n, neg_big);
    for (SegmentId i = 0; i < p.n; ++i)
        for (SegmentId j : network.out_neighbors(i)) p.values[static_cast<std::size_t>(i) * p.n + j] = 0.0;
    return p;
}

double steering_angle(const RoadNetwork& network, SegmentId i, SegmentId j) {
    double d = network.segment(j).bearing_deg - network.segment(i).bearing_deg;
    d = std::fmod(d, 360.0);
    if (d <= -180.0) d += 360.0;
    if (d > 180.0) d -= 360.0;
    return d;
}

std::pair<double, double> segment_midpoint(const RoadNetwork& network, SegmentId i) {
    const RoadSegment& s = network.segment(i);
    return {s.lon, s.lat};
}

std::pair<std::int64_t, std::int64_t> cell_of(const RoadNetwork& network, double x, double y) {
    const double s = network.cell_size();
    if (!(s > 0.0)) throw ContractError("cell_of: cell_size must be positive");
    const auto fdiv = [s](double v) {
        return static_cast<std::int64_t>(std::floor(v / s));
    };
    return {fdiv(x - network.origin_x()), fdiv(y - network.origin_y())};
}

// ----------------------------------------------------------------------
// File I/O
// ----------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Line number (1-based) of the k-th occurrence of needle inside text,
// searching from from_pos. Returns 0 when not found.
std::size_t line_of_nth(const std::string& text, const std::string& needle, std::size_t k,
                        std::size_t from_pos = 0) {
    std::size_t pos = from_pos;
    for (std::size_t found = 0; found <= k; ++found) {
        pos = text.find(needle, pos);
        if (pos == std::string::npos) return 0;
        if (found == k) break;
        pos += needle.size();
    }
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

}  // namespace

void save_network(const std::filesystem::path& path, const RoadNetwork& network,
                  const std::string& config_hash_hex) {
    std::ostringstream out;
    out << "{\n";
    if (!config_hash_hex.empty())
        out << "  \"meta\": {\"config_hash\": \"" << config_hash_hex << "\"},\n";
    out << "  \"cell_size\": " << fmt_double(network.cell_size()) << ",\n";
    out << "  \"segments\": [\n";
    const auto& segs = network.segments();
    for (std::size_t i = 0; i < segs.size(); ++i) {
        const RoadSegment& s = segs[i];
        out << "    {\"id\": " << s.id << ", \"length_m\": " << fmt_double(s.length_m)
            << ", \"highway_class\": " << s.highway_class << ", \"lon\": " << fmt_double(s.lon)
            << ", \"lat\": " << fmt_double(s.lat)
            << ", \"bearing_deg\": " << fmt_double(s.bearing_deg);
        if (s.tail_lon && s.tail_lat && s.head_lon && s.head_lat) {
            out << ", \"tail_lon\": " << fmt_double(*s.tail_lon)
                << ", \"tail_lat\": " << fmt_double(*s.tail_lat)
                << ", \"head_lon\": " << fmt_double(*s.head_lon)
                << ", \"head_lat\": " << fmt_double(*s.head_lat);
        }
        out << "}" << (i + 1 < segs.size() ? "," : "") << "\n";
    }
    out << "  ],\n";
    out << "  \"edges\": [\n";
    const auto& edges = network.edges();
    for (std::size_t i = 0; i < edges.size(); ++i) {
        out << "    [" << edges[i].first << ", " << edges[i].second << "]"
            << (i + 1 < edges.size() ? "," : "") << "\n";
    }
    out << "  ]\n}\n";
    write_text_file(path, out.str());
}

RoadNetwork load_network(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw IntegrityError(path.string() + ": " + e.what());
    }
    const double cell_size = doc.value("cell_size", 0.0);
    if (!(cell_size > 0.0)) throw IntegrityError(path.string() + ": cell_size must be positive");

    const auto& jsegs = doc.at("segments");
    std::vector<RoadSegment> segments(jsegs.size());
    std::vector<bool> seen(jsegs.size(), false);
    for (std::size_t k = 0; k < jsegs.size(); ++k) {
        const auto& js = jsegs[k];
        RoadSegment s;
        s.id = js.at("id").get<SegmentId>();
        if (s.id >= jsegs.size() || seen[s.id]) {
            const std::size_t line = line_of_nth(text, "\"id\"", k);
            throw IntegrityError(path.string() + ":" + std::to_string(line) +
                                 ": duplicate or out-of-range segment id " + std::to_string(s.id));
        }
        seen[s.id] = true;
        s.length_m = js.at("length_m").get<double>();
        s.highway_class = js.value("highway_class", 0);
        s.lon = js.at("lon").get<double>();
        s.lat = js.at("lat").get<double>();
        if (js.contains("tail_lon")) {
            s.tail_lon = js.at("tail_lon").get<double>();
            s.tail_lat = js.at("tail_lat").get<double>();
            s.head_lon = js.at("head_lon").get<double>();
            s.head_lat = js.at("head_lat").get<double>();
        }
        if (js.contains("bearing_deg")) {
            s.bearing_deg = js.at("bearing_deg").get<double>();
        } else if (s.tail_lon) {
            // bearing from travel endpoints: 0 = +lat, clockwise
            const double dx = *s.head_lon - *s.tail_lon;
            const double dy = *s.head_lat - *s.tail_lat;
            double deg = std::atan2(dx, dy) * 180.0 / M_PI;
            if (deg < 0.0) deg += 360.0;
            s.bearing_deg = deg;
        } else {
            const std::size_t line = line_of_nth(text, "\"id\"", k);
            throw IntegrityError(path.string() + ":" + std::to_string(line) + ": segment " +
                                 std::to_string(s.id) +
                                 " has neither bearing_deg nor travel endpoints");
        }
        segments[s.id] = s;
    }

    const auto& jedges = doc.at("edges");
    const std::size_t edges_pos = text.find("\"edges\"");
    std::vector<std::pair<SegmentId, SegmentId>> edges;
    edges.reserve(jedges.size());
    std::set<std::pair<SegmentId, SegmentId>> dedup;
    for (std::size_t k = 0; k < jedges.size(); ++k) {
        const auto& je = jedges[k];
        if (!je.is_array() || je.size() != 2)
            throw IntegrityError(path.string() + ": edge " + std::to_string(k) +
                                 " must be a [from, to] pair");
        const SegmentId f = je[0].get<SegmentId>();
        const SegmentId t = je[1].get<SegmentId>();
        if (!dedup.emplace(f, t).second || f == t || f >= segments.size() || t >= segments.size()) {
            // +1 skips the array's own opening bracket
            const std::size_t line = line_of_nth(text, "[", k + 1, edges_pos);
            throw IntegrityError(path.string() + ":" + std::to_string(line) +
                                 ": duplicate, self-loop, or out-of-range edge (" +
                                 std::to_string(f) + ", " + std::to_string(t) + ")");
        }
        edges.emplace_back(f, t);
    }

    RoadNetwork net(std::move(segments), std::move(edges), cell_size);

    std::vector<bool> touched(net.size(), false);
    for (const auto& [f, t] : net.edges()) touched[f] = touched[t] = true;
    for (std::size_t i = 0; i < net.size(); ++i)
        if (!touched[i])
            std::cerr << "warning: " << path.string() << ": segment " << i
                      << " participates in no edge\n";
    return net;
}

}  // namespace blocktraj
