#include "blocktraj/token_model.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace blocktraj {

using nlohmann::json;

namespace {
const char* kAttrNames[4] = {"d_trip_m", "d_seg_mean_m", "t_trip_s", "v_avg_mps"};

double attr_value(const TripRecord& r, TripAttr a) {
    switch (a) {
        case TripAttr::DTrip: return r.d_trip_m;
        case TripAttr::DSegMean: return r.d_seg_mean_m;
        case TripAttr::TTrip: return r.t_trip_s;
        case TripAttr::VAvg: return r.v_avg_mps;
    }
    return 0.0;
}
}  // namespace

TokenId Vocabulary::road_token(SegmentId id) const {
    if (id >= n_roads_)
        throw DataError("vocabulary error: segment " + std::to_string(id) + " not in vocabulary of " +
                        std::to_string(n_roads_) + " roads");
    return kRoadBase + id;
}

SegmentId Vocabulary::road_id(TokenId t) const {
    if (!is_road(t)) throw ContractError("token " + std::to_string(t) + " is not a road token");
    return t - kRoadBase;
}

TokenId Vocabulary::hour_token(double t_org_s) const {
    int h = static_cast<int>(std::floor(t_org_s / 3600.0));
    h = std::clamp(h, 0, 23);
    return kHourBase + static_cast<TokenId>(h);
}

TokenId Vocabulary::bin_token(TripAttr attr, int bin) const {
    if (bin < 0 || bin >= kBinsPerAttr) throw ContractError("bin index out of range");
    return kBinBase + static_cast<TokenId>(static_cast<int>(attr) * kBinsPerAttr + bin);
}

int BinTable::bin(TripAttr attr, double v) const {
    const auto& e = edges[static_cast<int>(attr)];
    const auto it = std::upper_bound(e.begin(), e.end(), v);
    return static_cast<int>(std::distance(e.begin(), it));
}

BinTable fit_bins(const std::vector<TripRecord>& training_corpus) {
    if (training_corpus.empty()) throw DataError("fit_bins: empty training corpus");
    BinTable table;
    for (int a = 0; a < 4; ++a) {
        std::vector<double> values;
        values.reserve(training_corpus.size());
        for (const TripRecord& r : training_corpus)
            values.push_back(attr_value(r, static_cast<TripAttr>(a)));
        std::sort(values.begin(), values.end());
        const std::set<double> distinct(values.begin(), values.end());
        auto& edges = table.edges[a];
        if (distinct.size() < static_cast<std::size_t>(kBinsPerAttr)) {
            table.fallback[a] = true;
            std::cerr << "warning: attribute " << kAttrNames[a] << " has only " << distinct.size()
                      << " distinct values; falling back to equal-width bins\n";
            const double lo = values.front(), hi = values.back();
            if (hi > lo)
                for (int k = 1; k < kBinsPerAttr; ++k)
                    edges.push_back(lo + (hi - lo) * k / kBinsPerAttr);
            // constant attribute: no edges, everything lands in bin 0
        } else {
            for (int k = 1; k < kBinsPerAttr; ++k) {
                std::size_t idx = k * values.size() / kBinsPerAttr;
                idx = std::min(idx, values.size() - 1);
                edges.push_back(values[idx]);
            }
        }
    }
    return table;
}

std::uint64_t bins_hash(const BinTable& bins) {
    std::string canon;
    char buf[64];
    for (int a = 0; a < 4; ++a) {
        canon += kAttrNames[a];
        for (double e : bins.edges[a]) {
            std::snprintf(buf, sizeof(buf), "%.17g,", e);
            canon += buf;
        }
        canon += bins.fallback[a] ? "F;" : ";";
    }
    return fnv1a(canon);
}

void save_bins(const std::filesystem::path& path, const BinTable& bins, std::uint64_t config_hash) {
    json j;
    j["n_bins"] = kBinsPerAttr;
    j["config_hash"] = hash_hex(config_hash);
    for (int a = 0; a < 4; ++a) {
        j["attributes"][kAttrNames[a]] = {{"edges", bins.edges[a]},
                                          {"fallback", bins.fallback[a]}};
    }
    write_text_file(path, j.dump(2) + "\n");
}

BinTable load_bins(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw IntegrityError(path.string() + ": " + e.what());
    }
    BinTable bins;
    for (int a = 0; a < 4; ++a) {
        const auto& attr = j.at("attributes").at(kAttrNames[a]);
        bins.edges[a] = attr.at("edges").get<std::vector<double>>();
        bins.fallback[a] = attr.value("fallback", false);
        if (!std::is_sorted(bins.edges[a].begin(), bins.edges[a].end()))
            throw IntegrityError(path.string() + ": edges for " + kAttrNames[a] + " not sorted");
    }
    return bins;
}

ConditioningTuple conditioning_of(const TripRecord& record) {
    ConditioningTuple c;
    c.r_org = record.segments.front();
    c.r_dest = record.segments.back();
    c.t_org_s = record.t_org_s;
    c.d_trip_m = record.d_trip_m;
    c.d_seg_mean_m = record.d_seg_mean_m;
    c.t_trip_s = record.t_trip_s;
    c.v_avg_mps = record.v_avg_mps;
    return c;
}

Prompt encode_prompt(const ConditioningTuple& cond, const Vocabulary& vocab, const BinTable& bins) {
    Prompt p;
    p.tokens = {kOrg,
                vocab.road_token(cond.r_org),
                vocab.hour_token(cond.t_org_s),
                kDest,
                vocab.road_token(cond.r_dest),
                vocab.bin_token(TripAttr::DTrip, bins.bin(TripAttr::DTrip, cond.d_trip_m)),
                vocab.bin_token(TripAttr::DSegMean, bins.bin(TripAttr::DSegMean, cond.d_seg_mean_m)),
                vocab.bin_token(TripAttr::TTrip, bins.bin(TripAttr::TTrip, cond.t_trip_s)),
                vocab.bin_token(TripAttr::VAvg, bins.bin(TripAttr::VAvg, cond.v_avg_mps))};
    return p;
}

Prompt null_prompt(const Prompt& prompt) {
    Prompt p = prompt;
    p.is_null = true;
    for (std::size_t i : {1u, 2u, 4u, 5u, 6u, 7u, 8u}) p.tokens[i] = kNull;
    return p;
}

EncodedRecord encode(const TripRecord& record, const Vocabulary& vocab, const BinTable& bins,
                     std::size_t l_prime) {
    if (l_prime == 0) throw UsageError("block length must be positive");
    EncodedRecord out;
    out.prompt = encode_prompt(conditioning_of(record), vocab, bins);
    const std::size_t content = record.segments.size() + 1;  // + single EOS
    const std::size_t n_blocks = (content + l_prime - 1) / l_prime;
    out.target.l_prime = l_prime;
    out.target.n_blocks = n_blocks;
    out.target.tokens.reserve(n_blocks * l_prime);
    for (SegmentId s : record.segments) out.target.tokens.push_back(vocab.road_token(s));
    out.target.tokens.push_back(kEos);
    out.target.tokens.resize(n_blocks * l_prime, kPad);
    return out;
}

std::vector<BlockSpan> partition_blocks(const TokenSequence& tokens) {
    if (tokens.l_prime == 0 || tokens.tokens.size() % tokens.l_prime != 0)
        throw ContractError("partition_blocks: padded length " +
                            std::to_string(tokens.tokens.size()) + " not divisible by block length " +
                            std::to_string(tokens.l_prime));
    std::vector<BlockSpan> blocks;
    for (std::size_t start = 0; start < tokens.tokens.size(); start += tokens.l_prime)
        blocks.push_back({start, tokens.l_prime});
    return blocks;
}

std::vector<SegmentId> decode_tokens(const std::vector<TokenId>& tokens, const Vocabulary& vocab) {
    std::vector<SegmentId> out;
    for (TokenId t : tokens)
        if (vocab.is_road(t)) out.push_back(vocab.road_id(t));
    return out;
}

}  // namespace blocktraj
