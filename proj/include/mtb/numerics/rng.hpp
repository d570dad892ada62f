#pragma once

#include <cstdint>
#include <random>
#include <utility>

namespace mtb {

/// Seeded pseudo-random stream.
///
/// Backed by std::mt19937_64, whose output sequence is fixed by the C++
/// standard; the conversions to reals and integers below are spelled out here
/// rather than delegated to <random> distributions, whose algorithms differ
/// between standard libraries. The stream for a given seed is therefore the
/// same on every conforming platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (one draw per call).
  double normal();

  // Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n);

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      std::uint64_t j = below(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Derives an independent child seed (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace mtb
