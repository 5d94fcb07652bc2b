#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "binaural/core/tensor.hpp"

namespace binaural {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Independent stream seed for a named sub-task, so streams do not shift
/// when unrelated consumers are added or reordered.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return splitmix64(seed ^ splitmix64(fnv1a(tag)));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

using Rng = std::mt19937_64;

/// Normal(0, std) tensor drawn in double precision and then cast, so float
/// and double models built from the same seed hold the same values.
template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace binaural
