#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace samfed {

using Rng = std::mt19937_64;

// Deterministic child seed for a (seed, tag...) path so every consumer draws
// from its own stream regardless of evaluation order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = seed ^ 0x9E3779B97F4A7C15ULL;
  auto mix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  h = mix(h);
  for (auto t : tags) h = mix(h ^ mix(t));
  return h;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
  return Rng(derive_seed(seed, tags));
}

inline float uniform(Rng& rng, float lo, float hi) { return std::uniform_real_distribution<float>(lo, hi)(rng); }

inline float normal(Rng& rng, float sd = 1.0f) { return std::normal_distribution<float>(0.0f, sd)(rng); }

}  // namespace samfed
