#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ccdn {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent generator for (seed, stream name, index). All randomness in the kit flows from one
/// seed through named streams such as "data", "init" and "augment".
inline Rng make_stream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return Rng(splitmix64(splitmix64(seed ^ h) + index));
}

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng, double mean = 0.0, double sigma = 1.0) {
    if (sigma == 0.0) return mean;
    return std::normal_distribution<double>(mean, sigma)(rng);
}

}  // namespace ccdn
