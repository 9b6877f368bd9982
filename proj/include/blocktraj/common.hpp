#pragma once

// Shared plumbing: error classes mapped to CLI exit codes, seeded RNG
// streams, FNV-1a hashing, and small file helpers.

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace blocktraj {

// ----------------------------------------------------------------------
// Errors. Each class maps to a distinct process exit code in the CLI.
// ----------------------------------------------------------------------

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mismatched hashes, malformed/duplicated records, broken invariants in
// files produced by another stage.
struct IntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf encountered, diverged training, failed numeric contract.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Generation/sampling budget exhausted, unreachable destination, etc.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIntegrity = 3;
inline constexpr int kExitNumerical = 4;

// ----------------------------------------------------------------------
// Hashing (FNV-1a 64). Used for config hashes and artifact identity.
// ----------------------------------------------------------------------

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

// ----------------------------------------------------------------------
// RNG. All randomness flows from one per-command seed through named
// sub-streams so ablations can change one stream without perturbing the
// others. Distributions are hand-rolled for bit-reproducible output.
// ----------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::string_view stream_name,
                                 std::uint64_t index = 0) {
    return splitmix64(splitmix64(seed ^ fnv1a(stream_name)) + index);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        // modulo rejection to avoid bias
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    // standard normal via Box-Muller (no cached spare, for reproducibility)
    double normal() {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double gumbel() {
        double u = uniform01();
        while (u <= 0.0) u = uniform01();
        return -std::log(-std::log(u));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// ----------------------------------------------------------------------
// File helpers
// ----------------------------------------------------------------------

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

}  // namespace blocktraj
