#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "masklab/rng.hpp"

namespace masklab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { identity, relu, sigmoid, tanh, softmax };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::identity;
};

/// Stack of affine layers, each followed by an activation. Batches are laid
/// out one sample per row. `softmax` normalizes each row of a layer output and
/// is only allowed on the last layer.
class DenseNet {
 public:
  DenseNet();
  explicit DenseNet(std::vector<DenseLayer> layers);
  DenseNet(const DenseNet& other);
  DenseNet& operator=(const DenseNet& other);
  DenseNet(DenseNet&&) noexcept = default;
  DenseNet& operator=(DenseNet&&) noexcept = default;

  /// Fully connected net with Glorot-uniform weights (+-sqrt(6/(in+out))) and
  /// zero biases.
  static DenseNet mlp(std::size_t input_dim, std::span<const std::size_t> hidden,
                      std::size_t output_dim, Activation hidden_activation,
                      Activation output_activation, Rng& rng);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t depth() const { return layers_.size(); }
  std::size_t parameter_count() const;

  const std::vector<DenseLayer>& layers() const { return layers_; }
  /// Mutable access invalidates every ForwardCache taken from this net.
  DenseLayer& mutable_layer(std::size_t k);
  /// Weight then bias for each layer, in order. Invalidates caches.
  std::vector<std::span<double>> parameter_blocks();

  std::uint64_t id() const { return id_; }
  std::uint64_t revision() const { return revision_; }
  bool all_finite() const;

 private:
  void validate() const;

  std::vector<DenseLayer> layers_;
  std::uint64_t id_;
  std::uint64_t revision_ = 0;
};

struct ForwardCache {
  std::uint64_t net_id = 0;
  std::uint64_t revision = 0;
  Matrix input;
  std::vector<Matrix> pre;   // affine outputs per layer
  std::vector<Matrix> post;  // activations per layer

  const Matrix& output() const { return post.back(); }
};

struct NetGradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
  Matrix input;  // dL/d(batch)

  static NetGradients zeros_like(const DenseNet& net);
  NetGradients& operator+=(const NetGradients& other);
  NetGradients& operator*=(double scale);
  std::vector<std::span<const double>> blocks() const;
};

ForwardCache forward(const DenseNet& net, const Matrix& batch);

/// Backpropagates dL/d(output) through the cached pass. Throws if the cache was
/// produced by another net or before the net's parameters changed.
NetGradients backward(const DenseNet& net, const ForwardCache& cache, const Matrix& loss_grad);

/// Mean over rows of (|d score / d x| - 1)^2 for a scalar-output net, and its
/// gradient with respect to the net parameters (second-order: computed by
/// reverse-mode through the forward-mode input derivative). A zero input
/// gradient contributes penalty 1 and no parameter gradient.
struct GradientPenalty {
  double value = 0.0;
  NetGradients grads;
};
GradientPenalty input_gradient_penalty(const DenseNet& net, const Matrix& points);

struct LossAndGrad {
  double loss = 0.0;
  Matrix grad;  // dL/d(output)
};
using OutputLoss = std::function<LossAndGrad(const Matrix& output)>;

/// Max over parameters of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
/// with central differences. `params` are perturbed in place and restored.
double max_relative_gradient_error(std::span<const std::span<double>> params,
                                   std::span<const std::span<const double>> analytic,
                                   const std::function<double()>& objective, double fd_step);

double grad_check(DenseNet& net, const Matrix& batch, const OutputLoss& loss_fn, double fd_step);

Matrix row_softmax(const Matrix& logits);
/// Backward of row_softmax given its output.
Matrix row_softmax_backward(const Matrix& probs, const Matrix& grad_probs);

}  // namespace masklab
