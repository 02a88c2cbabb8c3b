#pragma once

// Seeded random streams. Distributions are computed here from raw 64-bit
// engine output so that sampled values do not depend on the standard
// library's distribution implementations.

#include <cstdint>
#include <random>

namespace crl {

/// SplitMix64 finalizer; used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t x);

/// Child seed for stream `index` under `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return mix_seed(mix_seed(seed) ^ mix_seed(index + 0x9e3779b97f4a7c15ULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix_seed(seed)) {}

  /// Independent stream; depends only on the construction seed and index,
  /// never on how much of this stream has been consumed.
  Rng split(std::uint64_t index) const { return Rng(derive_seed(seed_, index)); }
  std::uint64_t seed() const { return seed_; }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Laplace(0, 1): density exp(-|x|) / 2.
  double laplace();
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace crl
