#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace mosaic {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a; stable across platforms, unlike std::hash.
inline std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seed derivation for independent streams: (base seed, tag, ...) -> seed.
class SeedSeq {
 public:
  explicit SeedSeq(std::uint64_t base) : state_(splitmix64(base)) {}

  SeedSeq& mix(std::uint64_t v) {
    state_ = splitmix64(state_ ^ splitmix64(v));
    return *this;
  }
  SeedSeq& mix(std::string_view s) { return mix(hash_string(s)); }

  std::uint64_t value() const { return state_; }
  Rng rng() const { return Rng(state_); }

 private:
  std::uint64_t state_;
};

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline double standard_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace mosaic
