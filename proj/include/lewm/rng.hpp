#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

namespace lewm {

/// Seeded generator with platform-independent draw sequences.
///
/// Raw bits come from std::mt19937_64, whose output sequence is fixed by the
/// standard. Uniform, bounded-integer and normal draws are derived here rather
/// than through <random> distributions, which are implementation-defined.
/// Normal draws use Box-Muller and therefore depend on libm; they are
/// bit-identical on one platform and agree to rounding across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t draws() const noexcept { return draws_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  /// Uniform integer in [0, n). Unbiased (rejection sampling).
  std::size_t below(std::size_t n);
  double normal();

  /// Opaque text snapshot of the full generator state.
  std::string state() const;
  void restore(const std::string& state);

  bool operator==(const Rng& other) const;

 private:
  std::uint64_t seed_;
  std::uint64_t draws_ = 0;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// SplitMix64 finalizer; used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index);

}  // namespace lewm
