#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "masklab/baselines.hpp"
#include "masklab/dataset.hpp"
#include "masklab/dense_net.hpp"
#include "masklab/noise_model.hpp"
#include "masklab/rng.hpp"

namespace masklab {

struct MaskingConfig {
  TrainConfig train;  // classifier schedule; train.iterations counts warmup steps too
  TemperedSigmoidParams sigmoid;
  std::size_t z_dim = 32;
  std::vector<std::size_t> generator_hidden = {64, 64};
  std::vector<std::size_t> critic_hidden = {64, 64};
  std::size_t critic_steps_per_gen_step = 5;
  std::size_t critic_batch = 8;
  double gradient_penalty_weight = 10.0;
  double prior_jitter = 0.01;
  double generator_rate = 3e-4;
  double critic_rate = 3e-4;
  std::uint64_t warmup_iterations = 1000;
  std::size_t extract_samples = 256;
  std::size_t log_extract_samples = 32;
  // Inert critic: zero weights, never updated, so the alignment term vanishes.
  bool freeze_critic = false;

  void validate() const;
};

/// Implicit distribution over transition matrices: noise z -> net -> C*C
/// logits (row-major) -> row softmax.
struct Generator {
  DenseNet net;
  std::size_t classes = 0;
  std::size_t z_dim = 0;

  /// Output bias set to ln(init + 1e-8) and last-layer weights scaled by 0.1,
  /// so early samples stay near `init`.
  static Generator initialize(std::size_t classes, const MaskingConfig& cfg,
                              const TransitionMatrix& init, Rng& rng);

  Matrix draw_noise(Rng& rng) const;  // 1 x z_dim
  /// Row softmax of the logits for one noise row.
  Matrix transition_from_output(const Matrix& output_row) const;
};

/// Scores a flattened (row-major) C x C structure.
struct Critic {
  DenseNet net;

  static Critic initialize(std::size_t classes, const MaskingConfig& cfg, Rng& rng);
  static Critic zero(std::size_t classes, const MaskingConfig& cfg);
  double score(const Matrix& structure) const;
};

Matrix flatten_row_major(const Matrix& m);
Matrix unflatten_row_major(const Matrix& row, std::size_t classes);

TransitionMatrix sample_s(const Generator& gen, Rng& rng);

/// Soft structure f(s) with f the tempered sigmoid.
StructureMask extract_structure(const TransitionMatrix& s, const TemperedSigmoidParams& p);

struct CriticLosses {
  double critic_loss = 0.0;     // mean score(fake) - mean score(real) + gp * penalty
  double alignment_loss = 0.0;  // -mean score(fake)
  double penalty = 0.0;
  double fake_score = 0.0;
  double real_score = 0.0;
  NetGradients critic_grads;  // of critic_loss
};

/// Wasserstein critic objective with gradient penalty. Real samples are the
/// prior with uniform jitter in [-jitter, jitter], clamped to [0,1]; the
/// penalty is taken at random interpolates of each fake/real pair.
CriticLosses critic_losses(const Critic& critic, std::span<const Matrix> fakes,
                           const StructureMask& prior, double jitter, double gp_weight, Rng& rng);

struct AlignmentGradient {
  double loss = 0.0;  // -score(structure)
  Matrix grad;        // d loss / d structure, C x C
};
AlignmentGradient alignment_gradient(const Critic& critic, const Matrix& structure);

/// Mean over the batch of -ln (noisy_posterior(clf(x), s)[y]).
double reconstructor_loss(const Classifier& clf, const TransitionMatrix& s, const Matrix& features,
                          std::span<const int> noisy_labels);

struct ExtractedTransition {
  TransitionMatrix mean;
  Matrix standard_error;  // per entry; zero for a single sample
};
ExtractedTransition extract_T(const Generator& gen, std::size_t n_samples, Rng& rng);

struct MaskingLogRow {
  std::uint64_t step = 0;
  double reconstructor_loss = 0.0;
  double critic_loss = 0.0;
  double alignment_loss = 0.0;
  double test_accuracy = 0.0;
  std::optional<double> transition_error;  // when the dataset records its corruption
};

/// What a game step optimized, handed to an observer before any update is
/// applied. `probabilities` are the classifier outputs on `batch`.
struct MaskingStep {
  std::uint64_t step = 0;
  const Matrix& transition;
  const std::vector<std::size_t>& batch;
  const Matrix& probabilities;
  double reconstructor_loss = 0.0;
  double alignment_loss = 0.0;
  double structure_weight = 0.0;
  double generator_objective = 0.0;  // reconstructor + weight * alignment
};
using MaskingObserver = std::function<void(const MaskingStep&)>;

struct MaskingResult {
  Classifier classifier;
  Generator generator;
  ExtractedTransition estimate;
  std::vector<MaskingLogRow> log;
};

MaskingResult train_masking(const LabeledDataset& data, const StructureMask& prior,
                            const MaskingConfig& cfg, const MaskingObserver& observer = {});

/// Discrete toy for checking the evidence lower bound: a finite support of
/// transition matrices with variational weights q and prior weights, a table
/// of P(y|x) rows, and observations (x row, noisy label) sharing one s.
struct ElboToy {
  struct SupportPoint {
    double q = 0.0;
    double prior = 0.0;
    TransitionMatrix transition;
  };
  std::vector<SupportPoint> support;
  Matrix p_y_given_x;
  std::vector<std::pair<std::size_t, int>> observations;

  void validate() const;
  static ElboToy from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

struct ElboCheck {
  double elbo = 0.0;
  double loglik = 0.0;
};

/// Exhaustive evaluation of both sides of the bound; throws RuntimeAbort if
/// elbo exceeds loglik by more than 1e-12.
ElboCheck elbo_toy_check(const ElboToy& toy);

/// Posterior over the support given the observations (q that makes the bound tight).
std::vector<double> exact_posterior(const ElboToy& toy);

}  // namespace masklab
