#pragma once

#include <cstdint>
#include <random>

#include "shadowdiff/tensor.hpp"

namespace shadowdiff {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; derives independent stream seeds from (seed, tags...).
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

template <typename... Tags>
std::uint64_t derive_seed(std::uint64_t seed, Tags... tags) {
  std::uint64_t h = mix_seed(seed);
  ((h = mix_seed(h ^ static_cast<std::uint64_t>(tags))), ...);
  return h;
}

template <typename... Tags>
Rng make_rng(std::uint64_t seed, Tags... tags) {
  return Rng(derive_seed(seed, tags...));
}

/// Standard normal samples, drawn in double and narrowed.
template <typename T>
Tensor<T> gaussian(const Shape& shape, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor<T> out(shape);
  for (auto& v : out.vec()) v = static_cast<T>(nd(rng));
  return out;
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

}  // namespace shadowdiff
