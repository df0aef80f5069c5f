#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "cafe/tensor.hpp"

namespace cafe {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent streams from one seed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  return mix64(mix64(mix64(mix64(seed) ^ a) ^ b) ^ c);
}

inline std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

Tensor uniform_tensor(Shape shape, double limit, Rng& rng);

// Glorot/Xavier uniform: U(-sqrt(6 / (fan_in + fan_out)), +...).
Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace cafe
