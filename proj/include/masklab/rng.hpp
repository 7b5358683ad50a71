#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace masklab {

/// Seeded pseudo-random generator: xoshiro256** with state expanded from the
/// 64-bit seed by splitmix64. Every derived quantity (uniforms, normals,
/// categorical draws, shuffles) is computed by code in this file rather than
/// std:: distributions, so a seed yields the same stream on every platform
/// whose libm agrees on log/cos/sqrt.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, bound). bound must be positive.
  std::uint64_t below(std::uint64_t bound);
  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();
  /// Draws an index from an unnormalized nonnegative weight vector.
  std::size_t categorical(std::span<const double> weights);
  void shuffle(std::span<std::size_t> items);

  /// Independent child stream. The child seed is splitmix64(seed ^ hash(tag)),
  /// so forks are stable regardless of how much of the parent was consumed.
  Rng fork(std::string_view tag) const;
  Rng fork(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace masklab
