#ifndef POLYFOLIO_RNG_HPP
#define POLYFOLIO_RNG_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace polyfolio::rng {

// Stream derivation. Every random draw in the toolkit comes from an engine
// seeded by mixing the top-level seed with a named stream and integer keys,
// so any (stream, keys) cell can be regenerated in isolation and in any
// order. The standard distributions are implementation-defined, so the few
// we need are written out here to keep outputs identical across toolchains.

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t mix(std::uint64_t h, std::uint64_t v) { return splitmix64(h ^ splitmix64(v)); }

/// Seed for the cell (seed, stream, keys...).
inline std::uint64_t derive(std::uint64_t seed, std::string_view stream,
                            std::initializer_list<std::uint64_t> keys = {}) {
    std::uint64_t h = mix(splitmix64(seed), fnv1a(stream));
    for (auto k : keys) h = mix(h, k);
    return h;
}

using Engine = std::mt19937_64;

inline Engine engine(std::uint64_t seed, std::string_view stream,
                     std::initializer_list<std::uint64_t> keys = {}) {
    return Engine(derive(seed, stream, keys));
}

/// Uniform on [0, 1) with 53 random bits.
inline double uniform(Engine& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

/// Uniform on (0, 1).
inline double uniform_open(Engine& g) {
    double u;
    do u = uniform(g);
    while (u == 0.0);
    return u;
}

/// Uniform integer in [0, bound) by rejection, bound > 0.
inline std::uint64_t below(Engine& g, std::uint64_t bound) {
    const std::uint64_t limit = bound * (UINT64_MAX / bound);
    std::uint64_t x;
    do x = g();
    while (x >= limit);
    return x % bound;
}

/// Standard normal via Box-Muller (one value per call).
inline double normal(Engine& g) {
    double u1 = uniform_open(g);
    double u2 = uniform(g);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Student-t with integer degrees of freedom.
inline double student_t(Engine& g, int df) {
    double z = normal(g);
    double chi2 = 0.0;
    for (int i = 0; i < df; ++i) {
        double n = normal(g);
        chi2 += n * n;
    }
    return z / std::sqrt(chi2 / df);
}

/// In-place Fisher-Yates shuffle.
template <typename T>
void shuffle(std::span<T> v, Engine& g) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = below(g, i);
        std::swap(v[i - 1], v[j]);
    }
}

} // namespace polyfolio::rng

#endif
