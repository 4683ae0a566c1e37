#pragma once

#include <cstdint>
#include <random>

// Portable draws from a 64-bit Mersenne twister. The standard distributions
// are implementation-defined, which would make datasets differ across
// standard libraries.
namespace defog::rnd {

inline double u01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * u01(rng);
}

// Uniform integer in [lo, hi].
inline std::int64_t uniform_int(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return lo + static_cast<std::int64_t>(rng());
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t v = rng();
  while (v >= limit) v = rng();
  return lo + static_cast<std::int64_t>(v % span);
}

inline bool bernoulli(std::mt19937_64& rng, double p) { return u01(rng) < p; }

// splitmix64 finalizer; derives independent stream seeds from a tuple.
inline std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix(mix(seed ^ mix(a)) ^ mix(b + 0x632be59bd9b4e019ULL));
}

}  // namespace defog::rnd
