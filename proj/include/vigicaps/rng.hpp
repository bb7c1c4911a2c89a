#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace vigicaps {

/// Deterministic random source. All randomness in the pipeline flows through
/// this wrapper so that a (seed, stream) pair reproduces bit-identical
/// results; std::*_distribution is avoided because its output is not pinned
/// by the standard.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (no cached second value).
  double normal();

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Uniform integer in [lo, hi] via rejection sampling.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  void fill_uniform(std::span<double> out, double lo, double hi);
  void fill_normal(std::span<double> out, double mean, double sd);

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  /// Mixes a base seed with a stream index (splitmix64 finalizer) so that
  /// per-fold / per-epoch / per-participant streams are independent.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
};

}  // namespace vigicaps
