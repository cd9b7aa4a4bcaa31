#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace anchor {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives an independent stream seed from a base seed, a purpose label and an
// optional index. Purpose labels keep the per-subsystem streams decoupled:
// changing e.g. the masking seed never perturbs batch order or initialization.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label,
                                 std::uint64_t index = 0) {
  std::uint64_t h = fnv1a64(label.data(), label.size());
  return splitmix64(base ^ splitmix64(h ^ splitmix64(index)));
}

// Deterministic random stream. All distributions are implemented in terms of
// raw mt19937_64 output so that sequences are stable across standard-library
// implementations, and copyable so a state snapshot is just a copy.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform strictly inside (0, 1).
  double uniform_open() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Uniform strictly inside (lo, hi).
  double uniform_range(double lo, double hi) {
    return lo + (hi - lo) * uniform_open();
  }

  // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::int64_t uniform_int(std::int64_t n) {
    const auto bound = static_cast<std::uint64_t>(n);
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = engine_();
      if (r >= threshold) return static_cast<std::int64_t>(r % bound);
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller without pair caching: one value per call, stateless between
  // calls apart from the engine position.
  double normal(double mean = 0.0, double stddev = 1.0) {
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace anchor
