#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace nocnet {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; derives independent stream seeds from (seed, tags...).
inline std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
  auto step = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = step(seed);
  for (auto t : tags) h = step(h ^ step(t));
  return h;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
  return Rng(mix_seed(seed, tags));
}

}  // namespace nocnet
