// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace gridmath {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Seed derivation and all internal value generation use a splitmix64-style
// avalanche so results are pinned across platforms and standard-library
// versions. kSeedSalt is the documented per-worker mixing constant.
inline constexpr std::uint64_t kSeedSalt = 0x9E3779B97F4A7C15ull;

inline std::uint64_t avalanche64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

// Per-worker seed: avalanche(root ^ (rank+1)*salt). Worker 0 and the root
// seed itself never collide because of the +1 offset.
inline std::uint64_t deriveSeed(std::uint64_t rootSeed, std::uint32_t rank) {
  return avalanche64(rootSeed ^ (static_cast<std::uint64_t>(rank) + 1) * kSeedSalt);
}

// Minimal counter-based generator for reproducible streams.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += kSeedSalt;
    return avalanche64(state_);
  }

  // Uniform in [0, 1), 53 mantissa bits.
  double nextUnit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double nextUniform(double lo, double hi) { return lo + (hi - lo) * nextUnit(); }

  std::uint64_t nextBelow(std::uint64_t bound) { return bound ? next() % bound : 0; }

 private:
  std::uint64_t state_;
};

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace gridmath
