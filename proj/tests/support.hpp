#pragma once

#include <cmath>
#include <vector>

#include "masklab/baselines.hpp"
#include "masklab/dataset.hpp"
#include "masklab/dense_net.hpp"
#include "masklab/rng.hpp"

namespace masklab::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

inline Matrix random_stochastic(std::size_t classes, Rng& rng) {
  const auto c = static_cast<Eigen::Index>(classes);
  Matrix m(c, c);
  for (Eigen::Index i = 0; i < c; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(0.01, 1.0);
    m.row(i) /= m.row(i).sum();
  }
  return m;
}

inline std::vector<int> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<int> labels(n);
  for (auto& y : labels) y = static_cast<int>(rng.below(classes));
  return labels;
}

// Mean softmax cross-entropy against integer labels, on the probability output.
inline OutputLoss cross_entropy_on_probs(std::vector<int> labels) {
  return [labels = std::move(labels)](const Matrix& probs) {
    const double n = static_cast<double>(probs.rows());
    LossAndGrad out{0.0, Matrix::Zero(probs.rows(), probs.cols())};
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      const auto y = labels[static_cast<std::size_t>(r)];
      out.loss -= std::log(probs(r, y)) / n;
      out.grad(r, y) = -1.0 / (n * probs(r, y));
    }
    return out;
  };
}

// Exact clean posterior for unit-variance spherical Gaussians with equal priors:
// softmax(mu_k . x - |mu_k|^2 / 2), a single softmax layer.
inline Classifier gaussian_oracle(const Matrix& means) {
  DenseLayer layer;
  layer.weight = means;
  layer.bias = -0.5 * means.rowwise().squaredNorm();
  layer.activation = Activation::softmax;
  return Classifier{DenseNet({layer})};
}

}  // namespace masklab::testing
