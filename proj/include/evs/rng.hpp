#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace evs {

// splitmix64 finalizer; used to derive independent sub-seeds from a master
// seed plus a lane id, so that e.g. per-sample generators never overlap.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t lane) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (lane + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Thin deterministic wrapper around mt19937_64. All randomness in the
// project flows through this type with explicit seeds.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // in [0, 1)
  double next_double() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // in [0, n)
  std::uint64_t below(std::uint64_t n) { return n ? gen_() % n : 0; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    // Box-Muller on our own uniform mapping; std::normal_distribution is
    // not pinned across library versions.
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586 * u2);
  }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      std::uint64_t j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace evs
