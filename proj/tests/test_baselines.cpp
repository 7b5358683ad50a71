#include <doctest.h>

#include <cmath>

#include "masklab/baselines.hpp"
#include "masklab/error.hpp"
#include "masklab/metrics.hpp"
#include "support.hpp"

using namespace masklab;

namespace {

TrainConfig quick(std::uint64_t seed, std::uint64_t iterations = 600) {
  TrainConfig cfg;
  cfg.iterations = iterations;
  cfg.hidden = {32};
  cfg.seed = seed;
  return cfg;
}

LabeledDataset noisy_synth(std::uint64_t seed, double rate, double separation = 3.0) {
  LabeledDataset data = synth_dataset(5, 200, 8, separation, seed);
  Rng rng = Rng(seed).fork("corrupt");
  corrupt_dataset(data, build_transition(build_mask(MaskKind::tri_diagonal, 5), rate), rng);
  return data;
}

double test_accuracy(const Classifier& clf, const LabeledDataset& data) {
  return accuracy(clf.predict(data.rows(data.test_index)), data.reference_at(data.test_index));
}

}  // namespace

TEST_CASE("noisy posterior and forward loss") {
  const std::vector<double> p{0.7, 0.3};
  Matrix tm(2, 2);
  tm << 0.8, 0.2, 0.2, 0.8;
  const TransitionMatrix t(tm);
  const auto q = noisy_posterior(p, t);
  CHECK(q[0] == doctest::Approx(0.62).epsilon(1e-15));
  CHECK(q[1] == doctest::Approx(0.38).epsilon(1e-15));
  CHECK(forward_loss(p, t, 0) == doctest::Approx(0.4780358009429998).epsilon(1e-15));

  CHECK(noisy_posterior(p, TransitionMatrix::identity(2)) == p);
  CHECK(forward_loss(p, TransitionMatrix::identity(2), 1) == doctest::Approx(-std::log(0.3)));
  const std::vector<double> onehot{0.0, 1.0};
  CHECK(forward_loss(onehot, TransitionMatrix::identity(2), 1) == 0.0);

  Rng rng(3);
  for (int k = 0; k < 50; ++k) {
    const Matrix s = testing::random_stochastic(6, rng);
    std::vector<double> pv(6);
    for (std::size_t j = 0; j < 6; ++j) pv[j] = s(0, static_cast<Eigen::Index>(j));
    const auto qv = noisy_posterior(pv, TransitionMatrix(testing::random_stochastic(6, rng)));
    double sum = 0.0;
    for (double v : qv) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }

  const std::vector<double> unnormalized{0.7, 0.31};
  CHECK_THROWS_AS(noisy_posterior(unnormalized, t), ValidationError);
  CHECK_THROWS_AS(forward_loss(p, t, 2), ValidationError);
}

TEST_CASE("corrected cross-entropy: floor and gradients") {
  Matrix probs(2, 2);
  probs << 1.0, 0.0, 0.5, 0.5;
  const std::vector<int> labels{1, 0};
  const CorrectedLoss floored = corrected_cross_entropy(probs, Matrix::Identity(2, 2), labels);
  CHECK(std::isfinite(floored.loss));
  CHECK(floored.loss == doctest::Approx(0.5 * (-std::log(kProbabilityFloor) - std::log(0.5))));
  // the clamped sample contributes nothing to the gradient
  CHECK(floored.grad_probs.row(0).cwiseAbs().maxCoeff() == 0.0);

  SUBCASE("transition-layer logits match finite differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      const Matrix p = row_softmax(testing::random_matrix(12, 4, rng));
      const auto y = testing::random_labels(12, 4, rng);
      Matrix logits = testing::random_matrix(4, 4, rng);
      const Matrix t = row_softmax(logits);
      const CorrectedLoss loss = corrected_cross_entropy(p, t, y);
      const Matrix grad = row_softmax_backward(t, loss.grad_transition);
      std::vector<std::span<double>> params{
          std::span<double>(logits.data(), static_cast<std::size_t>(logits.size()))};
      std::vector<std::span<const double>> analytic{
          std::span<const double>(grad.data(), static_cast<std::size_t>(grad.size()))};
      auto objective = [&] { return corrected_cross_entropy(p, row_softmax(logits), y).loss; };
      CHECK(max_relative_gradient_error(params, analytic, objective, 1e-5) < 1e-6);
    }
  }
}

TEST_CASE("anchor estimation") {
  SUBCASE("oracle posterior on clean separable data gives identity") {
    const LabeledDataset data = synth_dataset(10, 200, 16, 6.0, 1);
    const Classifier oracle = testing::gaussian_oracle(class_means(10, 16, 6.0));
    const AnchorEstimate est = estimate_T_anchor(oracle, data.features, 97.0);
    const double tv = transition_error(est.matrix, TransitionMatrix::identity(10));
    CHECK(tv < 0.02);
    CHECK(!est.degenerate);
  }
  SUBCASE("a constant classifier gives uniform rows and is flagged") {
    const Matrix uniform = Matrix::Constant(50, 4, 0.25);
    const AnchorEstimate est = estimate_T_anchor(uniform, 97.0);
    CHECK(transition_error(est.matrix, TransitionMatrix::uniform(4)) < 1e-15);
    CHECK(est.degenerate);
  }
  SUBCASE("duplicating the whole table leaves the estimate unchanged") {
    Rng rng(2);
    const Matrix p = row_softmax(testing::random_matrix(40, 3, rng, 2.0));
    Matrix doubled(80, 3);
    doubled << p, p;
    CHECK(estimate_T_anchor(doubled, 97.0).matrix.values() == estimate_T_anchor(p, 97.0).matrix.values());
  }
  SUBCASE("a class with no samples is named") {
    LabeledDataset data = synth_dataset(3, 20, 4, 3.0, 1);
    for (auto& y : data.noisy_labels) y = y == 2 ? 1 : y;
    CHECK_THROWS_WITH_AS(anchor_initialization(data, quick(0, 10)), doctest::Contains("class 2"),
                         ValidationError);
  }
  SUBCASE("bad percentiles are rejected") {
    CHECK_THROWS_AS(estimate_T_anchor(Matrix::Constant(3, 2, 0.5), 0.0), ValidationError);
  }
}

TEST_CASE("train_noisy") {
  SUBCASE("separable clean data") {
    const LabeledDataset data = synth_dataset(10, 100, 16, 6.0, 4);
    CHECK(test_accuracy(train_noisy(data, quick(4)).classifier, data) > 0.95);
  }
  SUBCASE("zero iterations returns the initial classifier") {
    const LabeledDataset data = synth_dataset(3, 20, 4, 3.0, 1);
    const TrainConfig cfg = quick(9, 0);
    const Classifier init = Classifier::initialize(4, 3, cfg);
    const TrainResult r = train_noisy(data, cfg);
    for (std::size_t k = 0; k < init.net.depth(); ++k) {
      CHECK(r.classifier.net.layers()[k].weight == init.net.layers()[k].weight);
    }
  }
  SUBCASE("label noise costs accuracy over 5 seeds") {
    double clean = 0.0, noisy = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) {
      const LabeledDataset c = noisy_synth(s, 0.0);
      const LabeledDataset n = noisy_synth(s, 0.3);
      clean += test_accuracy(train_noisy(c, quick(s)).classifier, c);
      noisy += test_accuracy(train_noisy(n, quick(s)).classifier, n);
    }
    CHECK(noisy < clean);
  }
}

TEST_CASE("forward correction and S-adaptation on tri noise") {
  double noisy = 0.0, fcorr = 0.0, sadapt = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const LabeledDataset data = noisy_synth(s, 0.3, 4.0);
    const TrainConfig cfg = quick(s, 1000);
    noisy += test_accuracy(train_noisy(data, cfg).classifier, data) / 5.0;
    const CorrectedTrainResult f = train_f_correction(data, cfg);
    CHECK((f.transition.values().rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
    fcorr += test_accuracy(f.classifier, data) / 5.0;
    const CorrectedTrainResult sa = train_s_adaptation(data, cfg, f.transition);
    CHECK((sa.transition.values().rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    sadapt += test_accuracy(sa.classifier, data) / 5.0;
  }
  CHECK(fcorr >= noisy);
  CHECK(sadapt >= noisy);
}

TEST_CASE("anchor estimate from a classifier trained on tri noise") {
  double tv = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    LabeledDataset data = synth_dataset(10, 625, 16, 3.0, s);
    Rng rng = Rng(s).fork("corrupt");
    corrupt_dataset(data, build_transition(build_mask(MaskKind::tri_diagonal, 10), 0.3), rng);
    TrainConfig cfg;
    cfg.seed = s;
    tv += transition_error(anchor_initialization(data, cfg).matrix, *data.corruption) / 5.0;
  }
  CHECK(tv < 0.1);
}

TEST_CASE("identity transitions") {
  double tv = 0.0, gap = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const LabeledDataset data = noisy_synth(s, 0.0, 4.0);
    const TrainConfig cfg = quick(s);
    const CorrectedTrainResult sa = train_s_adaptation(data, cfg, TransitionMatrix::identity(5));
    tv += transition_error(sa.transition, TransitionMatrix::identity(5)) / 5.0;
    const double plain = test_accuracy(train_noisy(data, cfg).classifier, data);
    const double corrected = test_accuracy(train_forward_corrected(data, cfg, TransitionMatrix::identity(5)).classifier, data);
    gap += std::abs(plain - corrected) / 5.0;
  }
  CHECK(tv < 0.05);
  // same init, same batches, identity correction: the runs coincide
  CHECK(gap == 0.0);
}

TEST_CASE("batch sampler visits every index once per epoch") {
  std::vector<std::size_t> pool{3, 5, 7, 9, 11};
  BatchSampler sampler(pool, 2, Rng(1));
  std::vector<std::size_t> seen;
  for (int k = 0; k < 3; ++k) {
    for (std::size_t i : sampler.next()) seen.push_back(i);
  }
  std::sort(seen.begin(), seen.begin() + 5);
  CHECK(std::vector<std::size_t>(seen.begin(), seen.begin() + 5) == pool);
}
