#pragma once

#include <cstdint>
#include <random>

namespace eitdiff {

using Rng = std::mt19937_64;

// Per-record stream seed: base seed xor record index.
inline std::uint64_t record_seed(std::uint64_t base_seed, std::uint64_t index) {
    return base_seed ^ index;
}

// seed_seq spreads adjacent seeds so neighbouring records get unrelated states.
inline Rng make_rng(std::uint64_t seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      0x9e3779b9u};
    return Rng(seq);
}

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double standard_normal(Rng& rng) {
    return std::normal_distribution<double>(0.0, 1.0)(rng);
}

} // namespace eitdiff
