#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <string>

namespace phydiff {

// SplitMix64 step: advances `state` and returns the next output.
std::uint64_t splitmix64(std::uint64_t& state) noexcept;

/// Structured key naming one independent random stream, e.g. ("ofdm-frame", 17).
struct StreamKey {
  std::string tag;
  std::uint64_t index = 0;
};

// FNV-1a 64 over the tag bytes, a 0xff separator, then the index as 8 little-endian bytes.
std::uint64_t hash_key(const StreamKey& key) noexcept;

/// xoshiro256** generator seeded through SplitMix64, with Marsaglia polar
/// Gaussian variates. All three algorithms are fixed so that a (master seed,
/// key) pair reproduces the same sequence on every platform.
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t seed) noexcept;

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }
  result_type operator()() noexcept { return next_u64(); }

  std::uint64_t next_u64() noexcept;
  // [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi] (inclusive), unbiased by rejection.
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) noexcept;
  int bit() noexcept { return static_cast<int>(next_u64() >> 63); }
  double normal() noexcept;
  // Circularly-symmetric complex Gaussian with E|z|^2 = variance.
  std::complex<double> complex_normal(double variance) noexcept;

 private:
  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

RngStream derive_rng(std::uint64_t master, const StreamKey& key) noexcept;

}  // namespace phydiff
