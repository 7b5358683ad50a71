#include "masklab/dense_net.hpp"

#include <atomic>
#include <cmath>
#include <string>

#include "masklab/error.hpp"

namespace masklab {

namespace {

std::uint64_t next_net_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

std::string dims(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

Matrix activate(Activation a, const Matrix& pre) {
  switch (a) {
    case Activation::identity:
      return pre;
    case Activation::relu:
      return pre.cwiseMax(0.0);
    case Activation::sigmoid:
      return pre.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    case Activation::tanh:
      return pre.array().tanh().matrix();
    case Activation::softmax:
      return row_softmax(pre);
  }
  return pre;
}

// Elementwise first derivative, expressed through pre- and post-activation.
Matrix first_derivative(Activation a, const Matrix& pre, const Matrix& post) {
  switch (a) {
    case Activation::identity:
      return Matrix::Ones(pre.rows(), pre.cols());
    case Activation::relu:
      return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::sigmoid:
      return (post.array() * (1.0 - post.array())).matrix();
    case Activation::tanh:
      return (1.0 - post.array().square()).matrix();
    case Activation::softmax:
      break;
  }
  throw ValidationError("softmax has no elementwise derivative");
}

Matrix second_derivative(Activation a, const Matrix& pre, const Matrix& post) {
  switch (a) {
    case Activation::identity:
    case Activation::relu:
      return Matrix::Zero(pre.rows(), pre.cols());
    case Activation::sigmoid:
      return (post.array() * (1.0 - post.array()) * (1.0 - 2.0 * post.array())).matrix();
    case Activation::tanh:
      return (-2.0 * post.array() * (1.0 - post.array().square())).matrix();
    case Activation::softmax:
      break;
  }
  throw ValidationError("softmax has no elementwise derivative");
}

void check_cache(const DenseNet& net, const ForwardCache& cache) {
  if (cache.post.size() != net.depth() || cache.pre.size() != net.depth()) {
    throw ValidationError("backward: missing or incomplete forward cache");
  }
  if (cache.net_id != net.id() || cache.revision != net.revision()) {
    throw ValidationError("backward: stale forward cache (net changed since forward)");
  }
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::softmax: return "softmax";
  }
  return "?";
}

Activation activation_from_string(std::string_view name) {
  for (Activation a : {Activation::identity, Activation::relu, Activation::sigmoid,
                       Activation::tanh, Activation::softmax}) {
    if (to_string(a) == name) return a;
  }
  throw ValidationError("unknown activation '" + std::string(name) + "'");
}

DenseNet::DenseNet() : id_(next_net_id()) {}

DenseNet::DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)), id_(next_net_id()) {
  validate();
}

DenseNet::DenseNet(const DenseNet& other) : layers_(other.layers_), id_(next_net_id()) {}

DenseNet& DenseNet::operator=(const DenseNet& other) {
  if (this != &other) {
    layers_ = other.layers_;
    ++revision_;
  }
  return *this;
}

void DenseNet::validate() const {
  if (layers_.empty()) throw ShapeError("DenseNet: no layers");
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& layer = layers_[k];
    if (layer.weight.rows() == 0 || layer.weight.cols() == 0) {
      throw ShapeError("DenseNet: layer " + std::to_string(k) + " has an empty weight matrix");
    }
    if (layer.bias.size() != layer.weight.rows()) {
      throw ShapeError("DenseNet: layer " + std::to_string(k) + " bias length " +
                       std::to_string(layer.bias.size()) + " != weight rows " +
                       std::to_string(layer.weight.rows()));
    }
    if (k > 0 && layers_[k - 1].weight.rows() != layer.weight.cols()) {
      throw ShapeError("DenseNet: layer " + std::to_string(k) + " expects input width " +
                       std::to_string(layer.weight.cols()) + " but layer " +
                       std::to_string(k - 1) + " produces " +
                       std::to_string(layers_[k - 1].weight.rows()));
    }
    if (layer.activation == Activation::softmax && k + 1 != layers_.size()) {
      throw ShapeError("DenseNet: softmax only allowed on the last layer (layer " +
                       std::to_string(k) + ")");
    }
  }
}

DenseNet DenseNet::mlp(std::size_t input_dim, std::span<const std::size_t> hidden,
                       std::size_t output_dim, Activation hidden_activation,
                       Activation output_activation, Rng& rng) {
  std::vector<DenseLayer> layers;
  std::size_t in = input_dim;
  auto add = [&](std::size_t out, Activation act) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    DenseLayer layer;
    layer.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    // Fill row by row so the draw order does not depend on storage order.
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        layer.weight(r, c) = rng.uniform(-limit, limit);
      }
    }
    layer.bias = Vector::Zero(static_cast<Eigen::Index>(out));
    layer.activation = act;
    layers.push_back(std::move(layer));
    in = out;
  };
  for (std::size_t width : hidden) add(width, hidden_activation);
  add(output_dim, output_activation);
  return DenseNet(std::move(layers));
}

std::size_t DenseNet::input_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().weight.cols());
}

std::size_t DenseNet::output_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().weight.rows());
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

DenseLayer& DenseNet::mutable_layer(std::size_t k) {
  ++revision_;
  return layers_.at(k);
}

std::vector<std::span<double>> DenseNet::parameter_blocks() {
  ++revision_;
  std::vector<std::span<double>> blocks;
  for (auto& l : layers_) {
    blocks.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    blocks.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return blocks;
}

bool DenseNet::all_finite() const {
  for (const auto& l : layers_) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

NetGradients NetGradients::zeros_like(const DenseNet& net) {
  NetGradients g;
  for (const auto& l : net.layers()) {
    g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Vector::Zero(l.bias.size()));
  }
  return g;
}

NetGradients& NetGradients::operator+=(const NetGradients& other) {
  for (std::size_t k = 0; k < weight.size(); ++k) {
    weight[k] += other.weight[k];
    bias[k] += other.bias[k];
  }
  return *this;
}

NetGradients& NetGradients::operator*=(double scale) {
  for (std::size_t k = 0; k < weight.size(); ++k) {
    weight[k] *= scale;
    bias[k] *= scale;
  }
  return *this;
}

std::vector<std::span<const double>> NetGradients::blocks() const {
  std::vector<std::span<const double>> out;
  for (std::size_t k = 0; k < weight.size(); ++k) {
    out.emplace_back(weight[k].data(), static_cast<std::size_t>(weight[k].size()));
    out.emplace_back(bias[k].data(), static_cast<std::size_t>(bias[k].size()));
  }
  return out;
}

Matrix row_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Matrix row_softmax_backward(const Matrix& probs, const Matrix& grad_probs) {
  const Vector inner = (probs.array() * grad_probs.array()).rowwise().sum();
  return (probs.array() * (grad_probs.colwise() - inner).array()).matrix();
}

ForwardCache forward(const DenseNet& net, const Matrix& batch) {
  if (net.depth() == 0) throw ShapeError("forward: empty net");
  if (batch.rows() < 1) throw ShapeError("forward: empty batch");
  ForwardCache cache;
  cache.net_id = net.id();
  cache.revision = net.revision();
  cache.input = batch;
  const Matrix* h = &cache.input;
  for (std::size_t k = 0; k < net.depth(); ++k) {
    const auto& layer = net.layers()[k];
    if (h->cols() != layer.weight.cols()) {
      throw ShapeError("forward: layer " + std::to_string(k) + " expects width " +
                       std::to_string(layer.weight.cols()) + ", got batch " +
                       dims(h->rows(), h->cols()));
    }
    Matrix pre = (*h) * layer.weight.transpose();
    pre.rowwise() += layer.bias.transpose();
    cache.post.push_back(activate(layer.activation, pre));
    cache.pre.push_back(std::move(pre));
    h = &cache.post.back();
  }
  return cache;
}

NetGradients backward(const DenseNet& net, const ForwardCache& cache, const Matrix& loss_grad) {
  check_cache(net, cache);
  const Matrix& out = cache.output();
  if (loss_grad.rows() != out.rows() || loss_grad.cols() != out.cols()) {
    throw ShapeError("backward: loss gradient " + dims(loss_grad.rows(), loss_grad.cols()) +
                     " does not match output " + dims(out.rows(), out.cols()));
  }
  NetGradients g;
  g.weight.resize(net.depth());
  g.bias.resize(net.depth());
  Matrix upstream = loss_grad;
  for (std::size_t k = net.depth(); k-- > 0;) {
    const auto& layer = net.layers()[k];
    Matrix delta;
    if (layer.activation == Activation::softmax) {
      delta = row_softmax_backward(cache.post[k], upstream);
    } else {
      delta = first_derivative(layer.activation, cache.pre[k], cache.post[k]).cwiseProduct(upstream);
    }
    const Matrix& below = k == 0 ? cache.input : cache.post[k - 1];
    g.weight[k] = delta.transpose() * below;
    g.bias[k] = delta.colwise().sum().transpose();
    upstream = delta * layer.weight;
  }
  g.input = std::move(upstream);
  return g;
}

GradientPenalty input_gradient_penalty(const DenseNet& net, const Matrix& points) {
  if (net.output_dim() != 1) throw ShapeError("input_gradient_penalty: net must have scalar output");
  for (const auto& l : net.layers()) {
    if (l.activation == Activation::softmax) {
      throw ShapeError("input_gradient_penalty: softmax layers are not supported");
    }
  }
  const auto n = points.rows();
  const ForwardCache cache = forward(net, points);
  const NetGradients first = backward(net, cache, Matrix::Ones(n, 1));

  GradientPenalty result;
  result.grads = NetGradients::zeros_like(net);
  // Tangent direction per row: dP/dg for that row's penalty, averaged over rows.
  Matrix tangent(n, points.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const double norm = first.input.row(r).norm();
    total += (norm - 1.0) * (norm - 1.0);
    if (norm > 0.0) {
      tangent.row(r) = (2.0 * (norm - 1.0) / (norm * static_cast<double>(n))) * first.input.row(r);
    } else {
      tangent.row(r).setZero();
    }
  }
  result.value = total / static_cast<double>(n);

  // Forward-mode pass: tangent of each layer's pre- and post-activation along
  // the input direction.
  const std::size_t depth = net.depth();
  std::vector<Matrix> dot_pre(depth), dot_post(depth);
  std::vector<Matrix> d1(depth);
  const Matrix* dot_h = &tangent;
  for (std::size_t k = 0; k < depth; ++k) {
    const auto& layer = net.layers()[k];
    dot_pre[k] = (*dot_h) * layer.weight.transpose();
    d1[k] = first_derivative(layer.activation, cache.pre[k], cache.post[k]);
    dot_post[k] = d1[k].cwiseProduct(dot_pre[k]);
    dot_h = &dot_post[k];
  }

  // Reverse through both the tangent chain and the primal chain feeding it.
  Matrix bar_dot_h = Matrix::Ones(n, 1);
  Matrix bar_h = Matrix::Zero(n, 1);
  for (std::size_t k = depth; k-- > 0;) {
    const auto& layer = net.layers()[k];
    const Matrix d2 = second_derivative(layer.activation, cache.pre[k], cache.post[k]);
    const Matrix bar_dot_a = d1[k].cwiseProduct(bar_dot_h);
    const Matrix bar_a =
        d1[k].cwiseProduct(bar_h) + d2.cwiseProduct(dot_pre[k]).cwiseProduct(bar_dot_h);
    const Matrix& dot_below = k == 0 ? tangent : dot_post[k - 1];
    const Matrix& below = k == 0 ? cache.input : cache.post[k - 1];
    result.grads.weight[k] = bar_dot_a.transpose() * dot_below + bar_a.transpose() * below;
    result.grads.bias[k] = bar_a.colwise().sum().transpose();
    bar_dot_h = bar_dot_a * layer.weight;
    bar_h = bar_a * layer.weight;
  }
  return result;
}

double max_relative_gradient_error(std::span<const std::span<double>> params,
                                   std::span<const std::span<const double>> analytic,
                                   const std::function<double()>& objective, double fd_step) {
  if (!(fd_step > 0.0 && fd_step <= 1e-3)) {
    throw ValidationError("grad_check: fd_step must lie in (0, 1e-3]");
  }
  if (params.size() != analytic.size()) {
    throw ShapeError("grad_check: parameter and gradient block counts differ");
  }
  double worst = 0.0;
  std::size_t flat = 0;
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != analytic[b].size()) {
      throw ShapeError("grad_check: block " + std::to_string(b) + " size mismatch");
    }
    for (std::size_t i = 0; i < params[b].size(); ++i, ++flat) {
      double& p = params[b][i];
      const double saved = p;
      p = saved + fd_step;
      const double up = objective();
      p = saved - fd_step;
      const double down = objective();
      p = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw RuntimeAbort("grad_check: non-finite loss when perturbing parameter " +
                           std::to_string(flat) + " (block " + std::to_string(b) + ", entry " +
                           std::to_string(i) + ")");
      }
      const double numeric = (up - down) / (2.0 * fd_step);
      const double a = analytic[b][i];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double grad_check(DenseNet& net, const Matrix& batch, const OutputLoss& loss_fn, double fd_step) {
  const ForwardCache cache = forward(net, batch);
  const LossAndGrad base = loss_fn(cache.output());
  const NetGradients analytic = backward(net, cache, base.grad);
  const auto analytic_blocks = analytic.blocks();
  const auto params = net.parameter_blocks();
  return max_relative_gradient_error(params, analytic_blocks, [&] {
    return loss_fn(forward(net, batch).output()).loss;
  }, fd_step);
}

}  // namespace masklab
