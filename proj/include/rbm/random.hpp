#pragma once

// Counter-style seed derivation. Every random object in the library is driven by
// a stream whose seed is a hash of (master seed, path of indices), so results do
// not depend on how work is scheduled.

#include <cstdint>
#include <initializer_list>
#include <random>

namespace rbm {

using Stream = std::mt19937_64;

namespace tag {
inline constexpr std::uint64_t a_block = 0xA;
inline constexpr std::uint64_t b_block = 0xB;
inline constexpr std::uint64_t sample = 0x5;
inline constexpr std::uint64_t mcmc = 0xC;
inline constexpr std::uint64_t transfer = 0x7;
inline constexpr std::uint64_t matrix_fill = 0xF;
}  // namespace tag

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = splitmix64(seed);
    for (const std::uint64_t p : path) {
        h = splitmix64(h ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
    }
    return h;
}

inline Stream make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    return Stream(derive_seed(seed, path));
}

/// Uniform on the open interval (0, 1) with 53-bit resolution.
inline double uniform_open01(Stream& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double standard_normal(Stream& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    return normal(rng);
}

}  // namespace rbm
