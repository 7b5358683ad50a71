#include "masklab/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "masklab/error.hpp"
#include "masklab/metrics.hpp"

namespace masklab {

namespace {

constexpr double kLogitSmoothing = 1e-8;

void check_trainable(const LabeledDataset& data) {
  data.validate();
  if (data.train_index.empty()) throw ValidationError("training: dataset has no training rows");
  if (data.test_index.empty()) throw ValidationError("training: dataset has no test rows");
}

double test_accuracy(const Classifier& clf, const LabeledDataset& data) {
  const auto labels = data.reference_at(data.test_index);
  return accuracy(clf.predict(data.rows(data.test_index)), labels);
}

void check_probability_vector(std::span<const double> p, std::size_t classes) {
  if (p.size() != classes) {
    throw ShapeError("probability vector has " + std::to_string(p.size()) + " entries, expected " +
                     std::to_string(classes));
  }
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw ValidationError("probability vector has a negative or NaN entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw ValidationError("probability vector sums to " + std::to_string(sum));
  }
}

// Shared loop for classifiers trained under a fixed transition matrix.
TrainResult train_with_transition(const LabeledDataset& data, const TrainConfig& cfg,
                                  std::uint64_t iterations, const Matrix& transition) {
  check_trainable(data);
  cfg.validate();
  TrainResult result{Classifier::initialize(data.dim(), data.classes, cfg), {}};
  OptimizerState opt = cfg.optimizer();
  BatchSampler sampler(data.train_index, cfg.batch_size, Rng(cfg.seed).fork("batches"));
  for (std::uint64_t t = 0; t < iterations; ++t) {
    const auto idx = sampler.next();
    const ForwardCache cache = forward(result.classifier.net, data.rows(idx));
    const CorrectedLoss loss = corrected_cross_entropy(cache.output(), transition, data.noisy_at(idx));
    if (!std::isfinite(loss.loss)) {
      throw RuntimeAbort("training diverged: non-finite loss at step " + std::to_string(t));
    }
    const NetGradients grads = backward(result.classifier.net, cache, loss.grad_probs);
    step(result.classifier.net.parameter_blocks(), grads.blocks(), opt);
    if ((t + 1) % cfg.eval_every == 0 || t + 1 == iterations) {
      result.curve.push_back({t + 1, loss.loss, test_accuracy(result.classifier, data)});
    }
  }
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ValidationError("train config: batch_size must be positive");
  if (eval_every == 0) throw ValidationError("train config: eval_every must be positive");
  if (!(anchor_percentile > 0.0 && anchor_percentile <= 100.0)) {
    throw ValidationError("train config: anchor_percentile must lie in (0, 100]");
  }
  for (std::size_t h : hidden) {
    if (h == 0) throw ValidationError("train config: hidden widths must be positive");
  }
  (void)optimizer();
}

OptimizerState TrainConfig::optimizer() const {
  return OptimizerState::sgd(learning_rate, decay_factor, decay_every);
}

Classifier Classifier::initialize(std::size_t input_dim, std::size_t classes, const TrainConfig& cfg) {
  Rng rng = Rng(cfg.seed).fork("classifier");
  return {DenseNet::mlp(input_dim, cfg.hidden, classes, Activation::relu, Activation::softmax, rng)};
}

Matrix Classifier::predict(const Matrix& features) const { return forward(net, features).output(); }

TransitionLayer TransitionLayer::from_matrix(const TransitionMatrix& init) {
  return {(init.values().array() + kLogitSmoothing).log().matrix()};
}

TransitionMatrix TransitionLayer::realized() const { return TransitionMatrix(row_softmax(logits)); }

BatchSampler::BatchSampler(std::vector<std::size_t> pool, std::size_t batch_size, Rng rng)
    : pool_(std::move(pool)), batch_size_(batch_size), rng_(rng) {
  if (pool_.empty() || batch_size_ == 0) throw ValidationError("BatchSampler: empty pool or batch");
  cursor_ = pool_.size();
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> batch;
  batch.reserve(batch_size_);
  while (batch.size() < batch_size_) {
    if (cursor_ == pool_.size()) {
      rng_.shuffle(pool_);
      cursor_ = 0;
    }
    batch.push_back(pool_[cursor_++]);
  }
  return batch;
}

std::vector<double> noisy_posterior(std::span<const double> p, const TransitionMatrix& t) {
  check_probability_vector(p, t.classes());
  std::vector<double> q(t.classes(), 0.0);
  for (std::size_t i = 0; i < t.classes(); ++i) {
    for (std::size_t j = 0; j < t.classes(); ++j) q[j] += t(i, j) * p[i];
  }
  return q;
}

double forward_loss(std::span<const double> p, const TransitionMatrix& t, int noisy_label) {
  if (noisy_label < 0 || static_cast<std::size_t>(noisy_label) >= t.classes()) {
    throw ValidationError("forward_loss: label " + std::to_string(noisy_label) + " outside [0," +
                          std::to_string(t.classes()) + ")");
  }
  const auto q = noisy_posterior(p, t);
  return -std::log(std::max(q[static_cast<std::size_t>(noisy_label)], kProbabilityFloor));
}

CorrectedLoss corrected_cross_entropy(const Matrix& probs, const Matrix& transition,
                                      std::span<const int> noisy_labels) {
  const auto n = probs.rows();
  const auto c = probs.cols();
  if (transition.rows() != c || transition.cols() != c) {
    throw ShapeError("corrected_cross_entropy: transition is not " + std::to_string(c) + "x" +
                     std::to_string(c));
  }
  if (static_cast<std::size_t>(n) != noisy_labels.size() || n == 0) {
    throw ShapeError("corrected_cross_entropy: label count does not match batch");
  }
  CorrectedLoss out;
  out.grad_probs = Matrix::Zero(n, c);
  out.grad_transition = Matrix::Zero(c, c);
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (Eigen::Index b = 0; b < n; ++b) {
    const int y = noisy_labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= c) {
      throw ValidationError("corrected_cross_entropy: label " + std::to_string(y) + " out of range");
    }
    const double q = probs.row(b).dot(transition.col(y));
    if (q < kProbabilityFloor) {
      total -= std::log(kProbabilityFloor);
      continue;
    }
    total -= std::log(q);
    const double scale = -inv_n / q;
    out.grad_probs.row(b) = scale * transition.col(y).transpose();
    out.grad_transition.col(y) += scale * probs.row(b).transpose();
  }
  out.loss = total * inv_n;
  return out;
}

TrainResult train_noisy(const LabeledDataset& data, const TrainConfig& cfg) {
  const auto c = static_cast<Eigen::Index>(data.classes);
  return train_with_transition(data, cfg, cfg.iterations, Matrix::Identity(c, c));
}

TrainResult train_forward_corrected(const LabeledDataset& data, const TrainConfig& cfg,
                                    const TransitionMatrix& transition) {
  if (transition.classes() != data.classes) {
    throw ValidationError("train_forward_corrected: transition size does not match dataset");
  }
  return train_with_transition(data, cfg, cfg.iterations, transition.values());
}

AnchorEstimate estimate_T_anchor(const Matrix& probabilities, double percentile) {
  if (!(percentile > 0.0 && percentile <= 100.0)) {
    throw ValidationError("estimate_T_anchor: percentile must lie in (0, 100]");
  }
  const auto n = probabilities.rows();
  const auto c = probabilities.cols();
  if (n == 0) throw ValidationError("estimate_T_anchor: no samples");
  if (c < 2) throw ShapeError("estimate_T_anchor: need at least 2 classes");
  Matrix t(c, c);
  std::vector<std::size_t> anchors(static_cast<std::size_t>(c));
  bool degenerate = false;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < c; ++i) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return probabilities(a, i) < probabilities(b, i);
    });
    // Nearest rank: smallest value whose empirical CDF reaches the percentile.
    auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, static_cast<std::size_t>(n));
    const Eigen::Index anchor = order[rank - 1];
    const double row_sum = probabilities.row(anchor).sum();
    if (!(row_sum > 0.0)) {
      throw ValidationError("estimate_T_anchor: anchor for class " + std::to_string(i) +
                            " has an all-zero prediction");
    }
    t.row(i) = probabilities.row(anchor) / row_sum;
    anchors[static_cast<std::size_t>(i)] = static_cast<std::size_t>(anchor);
    if (t(i, i) <= 1.0 / static_cast<double>(c) + 1e-6) degenerate = true;
  }
  return {TransitionMatrix(std::move(t)), std::move(anchors), degenerate};
}

AnchorEstimate estimate_T_anchor(const Classifier& clf, const Matrix& features, double percentile) {
  return estimate_T_anchor(clf.predict(features), percentile);
}

AnchorEstimate anchor_initialization(const LabeledDataset& data, const TrainConfig& cfg) {
  check_trainable(data);
  std::vector<char> present(data.classes, 0);
  for (std::size_t i : data.train_index) present[static_cast<std::size_t>(data.noisy_labels[i])] = 1;
  for (std::size_t k = 0; k < data.classes; ++k) {
    if (!present[k]) {
      throw ValidationError("anchor estimation: class " + std::to_string(k) +
                            " has no training samples");
    }
  }
  TrainConfig phase1 = cfg;
  phase1.iterations = cfg.iterations / 2;
  const TrainResult warm = train_with_transition(
      data, phase1, phase1.iterations,
      Matrix::Identity(static_cast<Eigen::Index>(data.classes), static_cast<Eigen::Index>(data.classes)));
  return estimate_T_anchor(warm.classifier, data.rows(data.train_index), cfg.anchor_percentile);
}

CorrectedTrainResult train_f_correction(const LabeledDataset& data, const TrainConfig& cfg) {
  AnchorEstimate estimate = anchor_initialization(data, cfg);
  const std::uint64_t phase3 = cfg.iterations - cfg.iterations / 2;
  TrainResult final_stage = train_with_transition(data, cfg, phase3, estimate.matrix.values());
  return {std::move(final_stage.classifier), std::move(estimate.matrix), std::move(final_stage.curve),
          estimate.degenerate};
}

CorrectedTrainResult train_s_adaptation(const LabeledDataset& data, const TrainConfig& cfg,
                                        const TransitionMatrix& t_init) {
  check_trainable(data);
  cfg.validate();
  if (t_init.classes() != data.classes) {
    throw ValidationError("train_s_adaptation: T_init size does not match dataset");
  }
  Classifier clf = Classifier::initialize(data.dim(), data.classes, cfg);
  TransitionLayer layer = TransitionLayer::from_matrix(t_init);
  OptimizerState opt = cfg.optimizer();
  BatchSampler sampler(data.train_index, cfg.batch_size, Rng(cfg.seed).fork("batches"));
  std::vector<CurvePoint> curve;
  for (std::uint64_t t = 0; t < cfg.iterations; ++t) {
    const auto idx = sampler.next();
    const ForwardCache cache = forward(clf.net, data.rows(idx));
    const Matrix realized = row_softmax(layer.logits);
    const CorrectedLoss loss = corrected_cross_entropy(cache.output(), realized, data.noisy_at(idx));
    if (!std::isfinite(loss.loss)) {
      throw RuntimeAbort("s-adaptation diverged: non-finite loss at step " + std::to_string(t));
    }
    const NetGradients grads = backward(clf.net, cache, loss.grad_probs);
    const Matrix grad_logits = row_softmax_backward(realized, loss.grad_transition);
    auto params = clf.net.parameter_blocks();
    params.emplace_back(layer.logits.data(), static_cast<std::size_t>(layer.logits.size()));
    auto grad_blocks = grads.blocks();
    grad_blocks.emplace_back(grad_logits.data(), static_cast<std::size_t>(grad_logits.size()));
    step(params, grad_blocks, opt);
    if ((t + 1) % cfg.eval_every == 0 || t + 1 == cfg.iterations) {
      curve.push_back({t + 1, loss.loss, test_accuracy(clf, data)});
    }
  }
  return {std::move(clf), layer.realized(), std::move(curve), false};
}

}  // namespace masklab
