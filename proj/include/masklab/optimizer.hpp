#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace masklab {

enum class OptimizerKind { sgd_staircase, rmsprop };

/// Update rule plus its running state. sgd_staircase uses
/// base_rate * decay_factor^floor(t / decay_every); rmsprop uses a fixed
/// base_rate with accumulator r <- rho*r + (1-rho)*g^2 and step g/sqrt(r+eps).
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd_staircase;
  double base_rate = 0.1;
  double decay_factor = 0.1;
  std::uint64_t decay_every = 5000;
  double smoothing = 0.9;
  double epsilon = 1e-8;
  std::vector<double> rms_accumulators;
  std::uint64_t t = 0;

  static OptimizerState sgd(double base_rate, double decay_factor, std::uint64_t decay_every);
  static OptimizerState rmsprop(double base_rate);

  double rate(std::uint64_t step) const;
};

/// Applies one update at state.t and advances it. Gradients are checked for
/// finiteness before anything is written; a bad entry throws RuntimeAbort naming
/// the block and index, leaving params and state untouched.
void step(std::span<const std::span<double>> params,
          std::span<const std::span<const double>> grads, OptimizerState& state);

}  // namespace masklab
