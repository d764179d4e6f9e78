#pragma once

#include <cstdint>
#include <random>

namespace elliptic {

/// The library-wide random engine. Every stochastic operation takes one by
/// reference so results are reproducible from a seed.
using Rng = std::mt19937_64;

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

/// Derives an independent engine for a substream (fold, shard, restart).
inline Rng split_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

}  // namespace elliptic
