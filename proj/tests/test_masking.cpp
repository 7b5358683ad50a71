#include <doctest.h>

#include <cmath>

#include "masklab/error.hpp"
#include "masklab/masking.hpp"
#include "masklab/metrics.hpp"
#include "masklab/optimizer.hpp"
#include "support.hpp"

using namespace masklab;

namespace {

MaskingConfig small_config(std::uint64_t seed) {
  MaskingConfig cfg;
  cfg.train.iterations = 120;
  cfg.train.hidden = {16};
  cfg.train.eval_every = 40;
  cfg.train.seed = seed;
  cfg.warmup_iterations = 40;
  cfg.z_dim = 4;
  cfg.generator_hidden = {8};
  cfg.critic_hidden = {8};
  cfg.critic_steps_per_gen_step = 2;
  cfg.extract_samples = 16;
  cfg.log_extract_samples = 4;
  return cfg;
}

LabeledDataset tri_data(std::uint64_t seed, std::size_t classes = 4) {
  LabeledDataset data = synth_dataset(classes, 40, 6, 3.0, seed);
  Rng rng = Rng(seed).fork("corrupt");
  corrupt_dataset(data, build_transition(build_mask(MaskKind::tri_diagonal, classes), 0.3), rng);
  return data;
}

Generator zero_generator(std::size_t classes) {
  MaskingConfig cfg;
  cfg.z_dim = 3;
  cfg.generator_hidden = {4};
  Rng rng(0);
  Generator gen = Generator::initialize(classes, cfg, TransitionMatrix::uniform(classes), rng);
  for (auto block : gen.net.parameter_blocks()) std::fill(block.begin(), block.end(), 0.0);
  return gen;
}

constexpr double kSigmoidAtZero = 4.5397868702434395e-5;

}  // namespace

TEST_CASE("row-major flattening round trips") {
  Matrix m(2, 2);
  m << 1, 2, 3, 4;
  const Matrix flat = flatten_row_major(m);
  CHECK(flat(0, 1) == 2.0);
  CHECK(flat(0, 2) == 3.0);
  CHECK(unflatten_row_major(flat, 2) == m);
  CHECK_THROWS_AS(unflatten_row_major(flat, 3), ShapeError);
}

TEST_CASE("sampling transition matrices") {
  SUBCASE("zero generator gives the uniform matrix") {
    Rng rng(1);
    const TransitionMatrix s = sample_s(zero_generator(5), rng);
    CHECK((s.values().array() - 0.2).abs().maxCoeff() < 1e-15);
  }
  MaskingConfig cfg;
  Rng init(2);
  const Generator gen = Generator::initialize(
      4, cfg, build_transition(build_mask(MaskKind::tri_diagonal, 4), 0.3), init);
  SUBCASE("fixed seed, same sample") {
    Rng a(7), b(7);
    CHECK(sample_s(gen, a).values() == sample_s(gen, b).values());
  }
  SUBCASE("every sample is row-stochastic") {
    Rng rng(3);
    for (int k = 0; k < 1000; ++k) {
      const Matrix s = sample_s(gen, rng).values();
      REQUIRE((s.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    }
  }
  SUBCASE("the bias starts the generator near its init matrix") {
    Rng rng(4);
    const TransitionMatrix truth = build_transition(build_mask(MaskKind::tri_diagonal, 4), 0.3);
    CHECK(transition_error(extract_T(gen, 64, rng).mean, truth) < 0.1);
  }
}

TEST_CASE("structure extraction") {
  const TemperedSigmoidParams p;
  const StructureMask u = extract_structure(TransitionMatrix::uniform(10), p);
  CHECK((u.values().array() - (1.0 - kSigmoidAtZero)).abs().maxCoeff() < 1e-15);
  const StructureMask id = extract_structure(TransitionMatrix::identity(3), p);
  CHECK(id(0, 0) == doctest::Approx(1.0));
  CHECK(std::abs(id(0, 1) - kSigmoidAtZero) < 1e-17);
  Matrix at_alpha(2, 2);
  at_alpha << 0.95, 0.05, 0.05, 0.95;
  CHECK(extract_structure(TransitionMatrix(at_alpha), p)(0, 1) == 0.5);
}

TEST_CASE("critic losses") {
  MaskingConfig cfg;
  cfg.critic_hidden = {6};
  const StructureMask prior = build_mask(MaskKind::tri_diagonal, 3);
  Rng rng(5);
  SUBCASE("zero critic: both losses vanish, penalty sits at one") {
    const std::vector<Matrix> fakes(4, Matrix::Constant(3, 3, 0.5));
    const CriticLosses l = critic_losses(Critic::zero(3, cfg), fakes, prior, 0.01, 10.0, rng);
    CHECK(l.fake_score == 0.0);
    CHECK(l.alignment_loss == 0.0);
    CHECK(l.penalty == 1.0);
    CHECK(l.critic_loss == 10.0);
  }
  SUBCASE("fakes equal to the prior") {
    Rng init(6);
    const std::vector<Matrix> fakes(4, prior.values());
    const CriticLosses l = critic_losses(Critic::initialize(3, cfg, init), fakes, prior, 0.0, 0.0, rng);
    CHECK(std::abs(l.critic_loss) < 1e-15);
  }
  SUBCASE("a trained critic prefers the prior over uniform fakes") {
    Rng init(7);
    Critic critic = Critic::initialize(3, cfg, init);
    const Matrix fake = extract_structure(TransitionMatrix::uniform(3), cfg.sigmoid).values();
    const std::vector<Matrix> fakes(8, fake);
    OptimizerState opt = OptimizerState::rmsprop(1e-3);
    for (int t = 0; t < 500; ++t) {
      const CriticLosses l = critic_losses(critic, fakes, prior, 0.01, 10.0, rng);
      step(critic.net.parameter_blocks(), l.critic_grads.blocks(), opt);
    }
    CHECK(critic.score(prior.values()) > critic.score(fake));
  }
  SUBCASE("critic gradients match finite differences") {
    Rng init(8);
    MaskingConfig smooth = cfg;
    Critic critic = Critic::initialize(3, smooth, init);
    // relu kinks are measure-zero; tanh keeps the check clean
    critic.net = DenseNet::mlp(9, smooth.critic_hidden, 1, Activation::tanh, Activation::identity, init);
    std::vector<Matrix> fakes;
    for (int k = 0; k < 3; ++k) fakes.push_back(testing::random_stochastic(3, rng));
    auto params = critic.net.parameter_blocks();
    const std::uint64_t seed = 99;
    Rng r0(seed);
    const CriticLosses l = critic_losses(critic, fakes, prior, 0.01, 10.0, r0);
    auto objective = [&] {
      Rng r(seed);
      return critic_losses(critic, fakes, prior, 0.01, 10.0, r).critic_loss;
    };
    const auto analytic = l.critic_grads.blocks();
    CHECK(max_relative_gradient_error(params, analytic, objective, 1e-5) < 1e-5);
  }
}

TEST_CASE("reconstructor loss") {
  Rng rng(9);
  const std::vector<std::size_t> hidden{5};
  Classifier clf{DenseNet::mlp(4, hidden, 3, Activation::relu, Activation::softmax, rng)};
  const Matrix x = testing::random_matrix(10, 4, rng);
  const auto y = testing::random_labels(10, 3, rng);

  const Matrix p = clf.predict(x);
  double ce = 0.0;
  for (Eigen::Index r = 0; r < 10; ++r) ce -= std::log(p(r, y[static_cast<std::size_t>(r)])) / 10.0;
  CHECK(reconstructor_loss(clf, TransitionMatrix::identity(3), x, y) == doctest::Approx(ce).epsilon(1e-14));
  CHECK(reconstructor_loss(clf, TransitionMatrix::uniform(3), x, y) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-14));

  SUBCASE("true T with the oracle posterior gives the conditional entropy") {
    // x in {0,1,2} one-hot, uniform over x; a softmax layer with log-probability weights is exact
    Matrix table(3, 3);
    table << 0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.25, 0.25, 0.5;
    DenseLayer layer{table.array().log().matrix().transpose(), Vector::Zero(3), Activation::softmax};
    const Classifier oracle{DenseNet({layer})};
    const TransitionMatrix t = build_transition(build_mask(MaskKind::tri_diagonal, 3), 0.2);
    double expected_loss = 0.0;
    for (int xv = 0; xv < 3; ++xv) {
      const Matrix feature = Matrix::Identity(3, 3).row(xv);
      const Matrix q = table.row(xv) * t.values();
      for (int yv = 0; yv < 3; ++yv) {
        const std::vector<int> label{yv};
        expected_loss += q(0, yv) * reconstructor_loss(oracle, t, feature, label) / 3.0;
      }
    }
    CHECK(std::abs(expected_loss - 0.94207132821717149949) < 1e-6);
  }
}

TEST_CASE("extracting T") {
  SUBCASE("a generator that ignores z gives its single sample, zero standard error") {
    Generator gen = zero_generator(3);
    gen.net.mutable_layer(gen.net.depth() - 1).bias << 2, 0, 0, 0, 1, 0, 0, 0, 3;
    Rng a(1), b(2);
    const ExtractedTransition e = extract_T(gen, 256, a);
    CHECK((e.mean.values() - sample_s(gen, b).values()).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(e.standard_error.cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("mean of random samples is row-stochastic with nonzero spread") {
    MaskingConfig cfg;
    Rng init(3), rng(4);
    const Generator gen = Generator::initialize(4, cfg, TransitionMatrix::uniform(4), init);
    const ExtractedTransition e = extract_T(gen, 256, rng);
    CHECK((e.mean.values().rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
    CHECK(e.standard_error.maxCoeff() > 0.0);
  }
}

TEST_CASE("generator alignment chain matches finite differences") {
  MaskingConfig cfg;
  cfg.z_dim = 3;
  cfg.generator_hidden = {6};
  cfg.critic_hidden = {6};
  Rng rng(10);
  Generator gen = Generator::initialize(3, cfg, TransitionMatrix::uniform(3), rng);
  gen.net = DenseNet::mlp(3, cfg.generator_hidden, 9, Activation::tanh, Activation::identity, rng);
  Critic critic{DenseNet::mlp(9, cfg.critic_hidden, 1, Activation::tanh, Activation::identity, rng)};
  const Matrix z = gen.draw_noise(rng);
  auto params = gen.net.parameter_blocks();
  auto chain = [&](const Matrix& out) {
    const Matrix s = gen.transition_from_output(out);
    return alignment_gradient(critic, tempered_sigmoid(s, cfg.sigmoid));
  };
  const ForwardCache pass = forward(gen.net, z);
  const Matrix s = gen.transition_from_output(pass.output());
  const AlignmentGradient a = chain(pass.output());
  const Matrix grad_s = a.grad.cwiseProduct(tempered_sigmoid_derivative(s, cfg.sigmoid));
  const NetGradients g = backward(gen.net, pass, flatten_row_major(row_softmax_backward(s, grad_s)));
  auto objective = [&] { return chain(forward(gen.net, z).output()).loss; };
  const auto analytic = g.blocks();
  CHECK(max_relative_gradient_error(params, analytic, objective, 1e-6) < 1e-3);
}

TEST_CASE("train_masking") {
  const LabeledDataset data = tri_data(3);
  const StructureMask prior = build_mask(MaskKind::tri_diagonal, 4);
  SUBCASE("fixed seed reproduces the estimate bit for bit") {
    const MaskingResult a = train_masking(data, prior, small_config(1));
    const MaskingResult b = train_masking(data, prior, small_config(1));
    CHECK(a.estimate.mean.values() == b.estimate.mean.values());
    CHECK(a.log.size() == b.log.size());
    CHECK(a.log.back().transition_error.has_value());
  }
  SUBCASE("inert critic: objective is the corrected likelihood of the sampled matrix") {
    MaskingConfig cfg = small_config(2);
    cfg.freeze_critic = true;
    std::size_t steps = 0;
    double worst = 0.0;
    auto observer = [&](const MaskingStep& st) {
      const auto labels = data.noisy_at(st.batch);
      const double s_adapt = corrected_cross_entropy(st.probabilities, st.transition, labels).loss;
      worst = std::max(worst, std::abs(st.generator_objective - s_adapt));
      ++steps;
    };
    train_masking(data, build_mask(MaskKind::full, 4), cfg, observer);
    CHECK(steps == cfg.train.iterations - cfg.warmup_iterations);
    CHECK(worst <= 1e-12);
  }
  SUBCASE("prior validation") {
    CHECK_THROWS_AS(train_masking(data, build_mask(MaskKind::tri_diagonal, 5), small_config(0)),
                    ValidationError);
    Matrix soft = prior.values();
    soft(0, 2) = 0.3;
    CHECK_THROWS_AS(train_masking(data, StructureMask(soft, MaskKind::custom), small_config(0)),
                    ValidationError);
    MaskingConfig bad = small_config(0);
    bad.warmup_iterations = 500;
    CHECK_THROWS_AS(train_masking(data, prior, bad), ValidationError);
  }
}

TEST_CASE("ELBO toys") {
  auto point = [](double q, double prior, Matrix t) {
    return ElboToy::SupportPoint{q, prior, TransitionMatrix(std::move(t))};
  };
  SUBCASE("point-mass support is tight") {
    ElboToy toy;
    Matrix t(2, 2);
    t << 0.9, 0.1, 0.3, 0.7;
    toy.support = {point(1.0, 1.0, t)};
    toy.p_y_given_x = Matrix(1, 2);
    toy.p_y_given_x << 0.6, 0.4;
    toy.observations = {{0, 0}, {0, 1}};
    const ElboCheck r = elbo_toy_check(toy);
    CHECK(std::abs(r.elbo - r.loglik) <= 1e-12);
  }
  SUBCASE("two-point support with a mismatched Q") {
    ElboToy toy;
    Matrix half = Matrix::Constant(2, 2, 0.5);
    toy.support = {point(0.5, 0.3, Matrix::Identity(2, 2)), point(0.5, 0.7, half)};
    toy.p_y_given_x = Matrix(1, 2);
    toy.p_y_given_x << 0.9, 0.1;
    toy.observations = {{0, 0}, {0, 1}, {0, 0}};
    const ElboCheck r = elbo_toy_check(toy);
    CHECK(r.loglik == doctest::Approx(-2.19104371826113826712840).epsilon(1e-14));
    CHECK(r.elbo == doctest::Approx(-2.38355052656715598371280).epsilon(1e-14));
    CHECK(r.elbo < r.loglik);

    const auto post = exact_posterior(toy);
    toy.support[0].q = post[0];
    toy.support[1].q = post[1];
    const ElboCheck tight = elbo_toy_check(toy);
    CHECK(std::abs(tight.elbo - tight.loglik) <= 1e-12);
  }
  SUBCASE("uniform everything, C=2") {
    ElboToy toy;
    toy.support = {point(1.0, 1.0, Matrix::Constant(2, 2, 0.5))};
    toy.p_y_given_x = Matrix::Constant(1, 2, 0.5);
    toy.observations = {{0, 1}};
    const ElboCheck r = elbo_toy_check(toy);
    CHECK(r.loglik == doctest::Approx(std::log(0.5)).epsilon(1e-15));
    CHECK(r.elbo <= r.loglik + 1e-12);
  }
  SUBCASE("unnormalized inputs and JSON round trip") {
    ElboToy toy;
    toy.support = {point(0.6, 1.0, Matrix::Identity(2, 2))};
    toy.p_y_given_x = Matrix::Constant(1, 2, 0.5);
    toy.observations = {{0, 1}};
    CHECK_THROWS_AS(elbo_toy_check(toy), ValidationError);
    toy.support[0].q = 1.0;
    toy.p_y_given_x(0, 0) = 0.7;
    CHECK_THROWS_AS(elbo_toy_check(toy), ValidationError);
    toy.p_y_given_x(0, 0) = 0.5;
    const ElboToy back = ElboToy::from_json(toy.to_json());
    CHECK(elbo_toy_check(back).loglik == elbo_toy_check(toy).loglik);
  }
}
