#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "masklab/dataset.hpp"
#include "masklab/dense_net.hpp"
#include "masklab/noise_model.hpp"
#include "masklab/optimizer.hpp"
#include "masklab/rng.hpp"

namespace masklab {

inline constexpr double kProbabilityFloor = 1e-12;

struct TrainConfig {
  std::uint64_t iterations = 2000;
  std::size_t batch_size = 128;
  std::vector<std::size_t> hidden = {64, 64};
  double learning_rate = 0.1;
  double decay_factor = 0.1;
  std::uint64_t decay_every = 5000;
  std::uint64_t eval_every = 100;
  double anchor_percentile = 97.0;
  std::uint64_t seed = 0;

  void validate() const;
  OptimizerState optimizer() const;
};

/// Dense net ending in a softmax over the classes.
struct Classifier {
  DenseNet net;

  static Classifier initialize(std::size_t input_dim, std::size_t classes, const TrainConfig& cfg);
  Matrix predict(const Matrix& features) const;
  std::size_t classes() const { return net.output_dim(); }
};

/// Trainable transition: logits B, realized as the row softmax of B.
struct TransitionLayer {
  Matrix logits;

  /// B[i][j] = ln(T[i][j] + 1e-8).
  static TransitionLayer from_matrix(const TransitionMatrix& init);
  TransitionMatrix realized() const;
};

struct CurvePoint {
  std::uint64_t step = 0;
  double loss = 0.0;
  double test_accuracy = 0.0;
};

struct TrainResult {
  Classifier classifier;
  std::vector<CurvePoint> curve;
};

struct CorrectedTrainResult {
  Classifier classifier;
  TransitionMatrix transition;
  std::vector<CurvePoint> curve;
  bool degenerate_estimate = false;
};

/// q[j] = sum_i T[i][j] p[i].
std::vector<double> noisy_posterior(std::span<const double> p, const TransitionMatrix& t);

/// -ln(max(q[label], 1e-12)) with q = noisy_posterior(p, t).
double forward_loss(std::span<const double> p, const TransitionMatrix& t, int noisy_label);

/// Batched forward-corrected cross-entropy: mean over rows of -ln (P T)[b, y_b],
/// with gradients with respect to P and T. A clamped term has zero gradient.
struct CorrectedLoss {
  double loss = 0.0;
  Matrix grad_probs;
  Matrix grad_transition;
};
CorrectedLoss corrected_cross_entropy(const Matrix& probs, const Matrix& transition,
                                      std::span<const int> noisy_labels);

/// Plain cross-entropy on the dataset's (noisy) training labels.
TrainResult train_noisy(const LabeledDataset& data, const TrainConfig& cfg);

/// Classifier training with a frozen transition under the forward-corrected loss.
TrainResult train_forward_corrected(const LabeledDataset& data, const TrainConfig& cfg,
                                    const TransitionMatrix& transition);

struct AnchorEstimate {
  TransitionMatrix matrix;
  std::vector<std::size_t> anchors;  // row index into the probability table, per class
  bool degenerate = false;           // some anchor is no more confident than uniform
};

/// For class i, the anchor is the sample whose P(i|x) is the nearest-rank
/// `percentile` of column i; row i is that sample's prediction, renormalized.
AnchorEstimate estimate_T_anchor(const Matrix& probabilities, double percentile);
AnchorEstimate estimate_T_anchor(const Classifier& clf, const Matrix& features, double percentile);

/// Phase 1 NOISY (iterations/2), phase 2 anchor estimate on the training
/// features, phase 3 a fresh classifier (iterations - iterations/2) under the
/// frozen estimate.
CorrectedTrainResult train_f_correction(const LabeledDataset& data, const TrainConfig& cfg);

/// Phases 1 and 2 of F-correction only.
AnchorEstimate anchor_initialization(const LabeledDataset& data, const TrainConfig& cfg);

/// Joint training of a fresh classifier and a TransitionLayer initialized from
/// t_init.
CorrectedTrainResult train_s_adaptation(const LabeledDataset& data, const TrainConfig& cfg,
                                        const TransitionMatrix& t_init);

/// Epoch-wise shuffled minibatches over a fixed index set.
class BatchSampler {
 public:
  BatchSampler(std::vector<std::size_t> pool, std::size_t batch_size, Rng rng);
  std::vector<std::size_t> next();

 private:
  std::vector<std::size_t> pool_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

}  // namespace masklab
