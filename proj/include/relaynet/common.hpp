#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace relaynet {

using NodeId = int;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Thrown on contract violations and malformed inputs.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Execution policy for the data-parallel kernels. `serial` is the
/// reference path and must produce bit-identical results.
enum class Exec { serial, parallel };

struct Point {
    double x = 0.0;
    double y = 0.0;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Unordered pair key with `a < b`.
struct PairKey {
    NodeId a = 0;
    NodeId b = 0;

    static PairKey of(NodeId u, NodeId v) { return u < v ? PairKey{u, v} : PairKey{v, u}; }
    friend auto operator<=>(const PairKey&, const PairKey&) = default;
};

/// SplitMix64 finalizer; used to derive independent, order-free RNG seeds
/// for per-pair and per-replica streams.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0, std::uint64_t d = 0) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ a);
    h = mix64(h ^ (b + 0x632be59bd9b4e019ULL));
    h = mix64(h ^ (c + 0x85157af5ULL));
    h = mix64(h ^ (d + 0x2545f4914f6cdd1dULL));
    return h;
}

/// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace relaynet
