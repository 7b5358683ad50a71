#include "masklab/optimizer.hpp"

#include <cmath>
#include <string>

#include "masklab/error.hpp"

namespace masklab {

OptimizerState OptimizerState::sgd(double base_rate, double decay_factor,
                                   std::uint64_t decay_every) {
  if (!(base_rate > 0.0)) throw ValidationError("sgd: base_rate must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw ValidationError("sgd: decay_factor must lie in (0, 1]");
  }
  if (decay_every == 0) throw ValidationError("sgd: decay_every must be positive");
  OptimizerState s;
  s.kind = OptimizerKind::sgd_staircase;
  s.base_rate = base_rate;
  s.decay_factor = decay_factor;
  s.decay_every = decay_every;
  return s;
}

OptimizerState OptimizerState::rmsprop(double base_rate) {
  if (!(base_rate > 0.0)) throw ValidationError("rmsprop: base_rate must be positive");
  OptimizerState s;
  s.kind = OptimizerKind::rmsprop;
  s.base_rate = base_rate;
  s.decay_factor = 1.0;
  return s;
}

double OptimizerState::rate(std::uint64_t step) const {
  if (kind == OptimizerKind::rmsprop) return base_rate;
  const auto periods = static_cast<double>(step / decay_every);
  return base_rate * std::pow(decay_factor, periods);
}

void step(std::span<const std::span<double>> params,
          std::span<const std::span<const double>> grads, OptimizerState& state) {
  if (params.size() != grads.size()) {
    throw ValidationError("optimizer step: parameter and gradient block counts differ");
  }
  std::size_t total = 0;
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size()) {
      throw ValidationError("optimizer step: block " + std::to_string(b) + " size mismatch");
    }
    for (std::size_t i = 0; i < grads[b].size(); ++i) {
      if (!std::isfinite(grads[b][i])) {
        throw RuntimeAbort("optimizer step " + std::to_string(state.t) +
                           ": non-finite gradient at block " + std::to_string(b) + ", entry " +
                           std::to_string(i));
      }
    }
    total += params[b].size();
  }

  const double lr = state.rate(state.t);
  if (state.kind == OptimizerKind::sgd_staircase) {
    for (std::size_t b = 0; b < params.size(); ++b) {
      for (std::size_t i = 0; i < params[b].size(); ++i) params[b][i] -= lr * grads[b][i];
    }
  } else {
    if (state.rms_accumulators.empty()) state.rms_accumulators.assign(total, 0.0);
    if (state.rms_accumulators.size() != total) {
      throw ValidationError("rmsprop: parameter count changed between steps");
    }
    std::size_t flat = 0;
    const double rho = state.smoothing;
    for (std::size_t b = 0; b < params.size(); ++b) {
      for (std::size_t i = 0; i < params[b].size(); ++i, ++flat) {
        const double g = grads[b][i];
        double& r = state.rms_accumulators[flat];
        r = rho * r + (1.0 - rho) * g * g;
        params[b][i] -= lr * g / std::sqrt(r + state.epsilon);
      }
    }
  }
  ++state.t;
}

}  // namespace masklab
