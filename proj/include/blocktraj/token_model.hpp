#pragma once

// Vocabulary over road tokens plus specials, the structured conditioning
// prompt, quantile binning of trip attributes, and block partitioning of
// padded target sequences.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "blocktraj/synth_world.hpp"

namespace blocktraj {

using TokenId = std::uint32_t;

// Fixed special-token order; part of the checkpoint contract.
inline constexpr TokenId kMask = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kPad = 2;
inline constexpr TokenId kNull = 3;
inline constexpr TokenId kOrg = 4;
inline constexpr TokenId kDest = 5;
inline constexpr TokenId kHourBase = 6;    // 24 hour-of-day tokens
inline constexpr TokenId kBinBase = 30;    // 4 attributes x 16 quantile bins
inline constexpr int kBinsPerAttr = 16;
inline constexpr TokenId kRoadBase = 94;
inline constexpr std::size_t kPromptLen = 9;

enum class TripAttr : int { DTrip = 0, DSegMean = 1, TTrip = 2, VAvg = 3 };

class Vocabulary {
public:
    explicit Vocabulary(std::size_t n_roads) : n_roads_(n_roads) {}

    std::size_t size() const { return kRoadBase + n_roads_; }
    std::size_t n_roads() const { return n_roads_; }

    TokenId road_token(SegmentId id) const;
    bool is_road(TokenId t) const { return t >= kRoadBase && t < kRoadBase + n_roads_; }
    SegmentId road_id(TokenId t) const;

    TokenId hour_token(double t_org_s) const;
    TokenId bin_token(TripAttr attr, int bin) const;

private:
    std::size_t n_roads_;
};

struct BinTable {
    // ascending internal edges per attribute; fewer than 15 entries only in
    // degenerate fallback cases. bin(v) counts edges <= v, so boundary
    // values land in the upper bin.
    std::array<std::vector<double>, 4> edges;
    std::array<bool, 4> fallback{false, false, false, false};

    int bin(TripAttr attr, double v) const;
};

BinTable fit_bins(const std::vector<TripRecord>& training_corpus);

void save_bins(const std::filesystem::path& path, const BinTable& bins, std::uint64_t config_hash);
BinTable load_bins(const std::filesystem::path& path);
std::uint64_t bins_hash(const BinTable& bins);

struct Prompt {
    std::array<TokenId, kPromptLen> tokens{};
    bool is_null = false;
};

struct ConditioningTuple {
    SegmentId r_org = 0;
    SegmentId r_dest = 0;
    double t_org_s = 0.0;
    double d_trip_m = 0.0;
    double d_seg_mean_m = 0.0;
    double t_trip_s = 0.0;
    double v_avg_mps = 0.0;
};

ConditioningTuple conditioning_of(const TripRecord& record);

Prompt encode_prompt(const ConditioningTuple& cond, const Vocabulary& vocab, const BinTable& bins);
// Markers stay; the 7 OD/attribute positions become NULL.
Prompt null_prompt(const Prompt& prompt);

struct TokenSequence {
    std::vector<TokenId> tokens;  // road tokens, one EOS, then PAD
    std::size_t l_prime = 0;
    std::size_t n_blocks = 0;
};

struct EncodedRecord {
    Prompt prompt;
    TokenSequence target;
};

EncodedRecord encode(const TripRecord& record, const Vocabulary& vocab, const BinTable& bins,
                     std::size_t l_prime);

struct BlockSpan {
    std::size_t start = 0;
    std::size_t len = 0;
};

std::vector<BlockSpan> partition_blocks(const TokenSequence& tokens);

// Strips prompt-free target tokens back to segment ids (drops EOS/PAD).
std::vector<SegmentId> decode_tokens(const std::vector<TokenId>& tokens, const Vocabulary& vocab);

}  // namespace blocktraj
