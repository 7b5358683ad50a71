#include "masklab/masking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <nlohmann/json.hpp>

#include "masklab/error.hpp"
#include "masklab/metrics.hpp"
#include "masklab/optimizer.hpp"

namespace masklab {

namespace {

constexpr double kLogitSmoothing = 1e-8;
constexpr double kOutputWeightScale = 0.1;

Eigen::Index ix(std::size_t v) { return static_cast<Eigen::Index>(v); }

void require_prior(const StructureMask& prior, std::size_t classes) {
  if (prior.classes() != classes) {
    throw ValidationError("masking: prior has C=" + std::to_string(prior.classes()) +
                          ", dataset has C=" + std::to_string(classes));
  }
  if (!prior.is_binary()) throw ValidationError("masking: prior must be {0,1}-valued");
}

double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// ln P(observations | s) for one support point.
double data_loglik(const ElboToy& toy, const TransitionMatrix& t) {
  double total = 0.0;
  for (const auto& [x, y] : toy.observations) {
    const double q = toy.p_y_given_x.row(ix(x)).dot(t.values().col(y));
    total += std::log(q);
  }
  return total;
}

}  // namespace

void MaskingConfig::validate() const {
  train.validate();
  sigmoid.validate();
  if (z_dim == 0) throw ValidationError("masking config: z_dim must be positive");
  if (critic_steps_per_gen_step == 0) {
    throw ValidationError("masking config: critic_steps_per_gen_step must be positive");
  }
  if (critic_batch == 0) throw ValidationError("masking config: critic_batch must be positive");
  if (!(gradient_penalty_weight >= 0.0)) {
    throw ValidationError("masking config: gradient_penalty_weight must be nonnegative");
  }
  if (!(prior_jitter >= 0.0 && prior_jitter < 0.5)) {
    throw ValidationError("masking config: prior_jitter must lie in [0, 0.5)");
  }
  if (!(generator_rate > 0.0) || !(critic_rate > 0.0)) {
    throw ValidationError("masking config: generator/critic rates must be positive");
  }
  if (warmup_iterations > train.iterations) {
    throw ValidationError("masking config: warmup_iterations exceeds iterations");
  }
  if (extract_samples == 0 || log_extract_samples == 0) {
    throw ValidationError("masking config: extraction sample counts must be positive");
  }
  for (std::size_t h : generator_hidden) {
    if (h == 0) throw ValidationError("masking config: generator widths must be positive");
  }
  for (std::size_t h : critic_hidden) {
    if (h == 0) throw ValidationError("masking config: critic widths must be positive");
  }
}

Matrix flatten_row_major(const Matrix& m) {
  Matrix row(1, m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) row(0, i * m.cols() + j) = m(i, j);
  }
  return row;
}

Matrix unflatten_row_major(const Matrix& row, std::size_t classes) {
  const auto c = ix(classes);
  if (row.rows() != 1 || row.cols() != c * c) {
    throw ShapeError("unflatten: expected 1x" + std::to_string(c * c));
  }
  Matrix m(c, c);
  for (Eigen::Index i = 0; i < c; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = row(0, i * c + j);
  }
  return m;
}

Generator Generator::initialize(std::size_t classes, const MaskingConfig& cfg,
                                const TransitionMatrix& init, Rng& rng) {
  if (init.classes() != classes) throw ValidationError("generator: init matrix size mismatch");
  Generator gen;
  gen.classes = classes;
  gen.z_dim = cfg.z_dim;
  gen.net = DenseNet::mlp(cfg.z_dim, cfg.generator_hidden, classes * classes, Activation::relu,
                          Activation::identity, rng);
  auto& last = gen.net.mutable_layer(gen.net.depth() - 1);
  last.weight *= kOutputWeightScale;
  const Matrix logits = (init.values().array() + kLogitSmoothing).log().matrix();
  last.bias = flatten_row_major(logits).transpose();
  return gen;
}

Matrix Generator::draw_noise(Rng& rng) const {
  Matrix z(1, ix(z_dim));
  for (Eigen::Index j = 0; j < z.cols(); ++j) z(0, j) = rng.normal();
  return z;
}

Matrix Generator::transition_from_output(const Matrix& output_row) const {
  return row_softmax(unflatten_row_major(output_row, classes));
}

Critic Critic::initialize(std::size_t classes, const MaskingConfig& cfg, Rng& rng) {
  return {DenseNet::mlp(classes * classes, cfg.critic_hidden, 1, Activation::relu,
                        Activation::identity, rng)};
}

Critic Critic::zero(std::size_t classes, const MaskingConfig& cfg) {
  Rng unused(0);
  Critic critic = initialize(classes, cfg, unused);
  for (auto block : critic.net.parameter_blocks()) std::fill(block.begin(), block.end(), 0.0);
  return critic;
}

double Critic::score(const Matrix& structure) const {
  return forward(net, flatten_row_major(structure)).output()(0, 0);
}

TransitionMatrix sample_s(const Generator& gen, Rng& rng) {
  const Matrix z = gen.draw_noise(rng);
  return TransitionMatrix(gen.transition_from_output(forward(gen.net, z).output()));
}

StructureMask extract_structure(const TransitionMatrix& s, const TemperedSigmoidParams& p) {
  return StructureMask(tempered_sigmoid(s.values(), p), MaskKind::custom);
}

CriticLosses critic_losses(const Critic& critic, std::span<const Matrix> fakes,
                           const StructureMask& prior, double jitter, double gp_weight, Rng& rng) {
  if (fakes.empty()) throw ValidationError("critic_losses: no fake structures");
  const std::size_t c = prior.classes();
  const auto k = ix(fakes.size());
  const auto width = ix(c * c);
  Matrix fake(k, width), real(k, width), mixed(k, width);
  for (Eigen::Index r = 0; r < k; ++r) {
    const Matrix& f = fakes[static_cast<std::size_t>(r)];
    if (f.rows() != ix(c) || f.cols() != ix(c)) throw ShapeError("critic_losses: fake size mismatch");
    fake.row(r) = flatten_row_major(f);
    for (Eigen::Index j = 0; j < width; ++j) {
      const double v = prior.values()(j / ix(c), j % ix(c));
      real(r, j) = jitter > 0.0 ? std::clamp(v + rng.uniform(-jitter, jitter), 0.0, 1.0) : v;
    }
    const double eps = rng.uniform();
    mixed.row(r) = eps * real.row(r) + (1.0 - eps) * fake.row(r);
  }

  const ForwardCache fake_pass = forward(critic.net, fake);
  const ForwardCache real_pass = forward(critic.net, real);
  CriticLosses out;
  out.fake_score = fake_pass.output().mean();
  out.real_score = real_pass.output().mean();
  if (!std::isfinite(out.fake_score) || !std::isfinite(out.real_score)) {
    throw RuntimeAbort("critic produced a non-finite score");
  }
  const double inv_k = 1.0 / static_cast<double>(k);
  out.critic_grads = backward(critic.net, fake_pass, Matrix::Constant(k, 1, inv_k));
  out.critic_grads += backward(critic.net, real_pass, Matrix::Constant(k, 1, -inv_k));
  if (gp_weight > 0.0) {
    GradientPenalty gp = input_gradient_penalty(critic.net, mixed);
    out.penalty = gp.value;
    gp.grads *= gp_weight;
    out.critic_grads += gp.grads;
  } else {
    out.penalty = 0.0;
  }
  out.critic_loss = out.fake_score - out.real_score + gp_weight * out.penalty;
  out.alignment_loss = -out.fake_score;
  return out;
}

AlignmentGradient alignment_gradient(const Critic& critic, const Matrix& structure) {
  const ForwardCache pass = forward(critic.net, flatten_row_major(structure));
  const NetGradients g = backward(critic.net, pass, Matrix::Constant(1, 1, -1.0));
  return {-pass.output()(0, 0), unflatten_row_major(g.input, static_cast<std::size_t>(structure.rows()))};
}

double reconstructor_loss(const Classifier& clf, const TransitionMatrix& s, const Matrix& features,
                          std::span<const int> noisy_labels) {
  if (features.rows() == 0) throw ValidationError("reconstructor_loss: empty batch");
  return corrected_cross_entropy(clf.predict(features), s.values(), noisy_labels).loss;
}

ExtractedTransition extract_T(const Generator& gen, std::size_t n_samples, Rng& rng) {
  if (n_samples == 0) throw ValidationError("extract_T: n_samples must be positive");
  const auto c = ix(gen.classes);
  std::vector<Matrix> samples;
  samples.reserve(n_samples);
  Matrix sum = Matrix::Zero(c, c);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const Matrix z = gen.draw_noise(rng);
    samples.push_back(gen.transition_from_output(forward(gen.net, z).output()));
    sum += samples.back();
  }
  const double n = static_cast<double>(n_samples);
  const Matrix centre = sum / n;
  Matrix se = Matrix::Zero(c, c);
  if (n_samples > 1) {
    Matrix ss = Matrix::Zero(c, c);
    for (const Matrix& t : samples) ss += (t - centre).cwiseAbs2();
    se = (ss / ((n - 1.0) * n)).cwiseSqrt();
  }
  Matrix mean = centre;
  // Renormalize away accumulated rounding so the mean passes the row check.
  for (Eigen::Index i = 0; i < c; ++i) mean.row(i) /= mean.row(i).sum();
  return {TransitionMatrix(std::move(mean)), std::move(se)};
}

MaskingResult train_masking(const LabeledDataset& data, const StructureMask& prior,
                            const MaskingConfig& cfg, const MaskingObserver& observer) {
  cfg.validate();
  data.validate();
  require_prior(prior, data.classes);
  if (data.train_index.empty() || data.test_index.empty()) {
    throw ValidationError("masking: dataset needs nonempty train and test splits");
  }
  const std::size_t classes = data.classes;
  const auto c = ix(classes);
  const TrainConfig& tc = cfg.train;
  Rng root(tc.seed);
  Rng noise_rng = root.fork("masking-noise");
  Rng critic_rng = root.fork("masking-critic");
  Rng log_rng = root.fork("masking-log");

  Classifier clf = Classifier::initialize(data.dim(), classes, tc);
  OptimizerState clf_opt = tc.optimizer();
  BatchSampler sampler(data.train_index, tc.batch_size, root.fork("batches"));
  const Matrix train_features = data.rows(data.train_index);
  const auto test_labels = data.reference_at(data.test_index);
  const Matrix test_features = data.rows(data.test_index);
  const Matrix identity = Matrix::Identity(c, c);

  std::vector<MaskingLogRow> log;
  auto should_log = [&](std::uint64_t t) { return (t + 1) % tc.eval_every == 0 || t + 1 == tc.iterations; };

  for (std::uint64_t t = 0; t < cfg.warmup_iterations; ++t) {
    const auto idx = sampler.next();
    const ForwardCache pass = forward(clf.net, data.rows(idx));
    const CorrectedLoss loss = corrected_cross_entropy(pass.output(), identity, data.noisy_at(idx));
    if (!std::isfinite(loss.loss)) {
      throw RuntimeAbort("masking warmup diverged at step " + std::to_string(t));
    }
    step(clf.net.parameter_blocks(), backward(clf.net, pass, loss.grad_probs).blocks(), clf_opt);
    if (should_log(t)) {
      log.push_back({t + 1, loss.loss, 0.0, 0.0, accuracy(clf.predict(test_features), test_labels),
                     std::nullopt});
    }
  }

  // The generator starts at the anchor estimate read off the warmed-up classifier.
  const AnchorEstimate init = estimate_T_anchor(clf, train_features, tc.anchor_percentile);
  Rng gen_init_rng = root.fork("generator-init");
  Generator gen = Generator::initialize(classes, cfg, init.matrix, gen_init_rng);
  Rng critic_init_rng = root.fork("critic-init");
  Critic critic = cfg.freeze_critic ? Critic::zero(classes, cfg)
                                    : Critic::initialize(classes, cfg, critic_init_rng);
  // Restart the classifier: the warmed one has begun fitting the noisy labels.
  clf = Classifier::initialize(data.dim(), classes, tc);
  clf_opt = tc.optimizer();
  OptimizerState gen_opt = OptimizerState::rmsprop(cfg.generator_rate);
  OptimizerState critic_opt = OptimizerState::rmsprop(cfg.critic_rate);
  const double structure_weight =
      static_cast<double>(tc.batch_size) / static_cast<double>(data.train_index.size());

  Matrix last_good = init.matrix.values();
  auto abort_with = [&](const std::string& what, std::uint64_t t) {
    throw RuntimeAbort("masking: " + what + " at step " + std::to_string(t) +
                       "; last good transition: " + rows_to_json(last_good).dump());
  };

  std::vector<Matrix> fakes(cfg.critic_batch);
  for (std::uint64_t t = cfg.warmup_iterations; t < tc.iterations; ++t) {
    double critic_loss = 0.0;
    if (!cfg.freeze_critic) {
      for (std::size_t k = 0; k < cfg.critic_steps_per_gen_step; ++k) {
        for (auto& f : fakes) {
          const Matrix z = gen.draw_noise(noise_rng);
          f = tempered_sigmoid(gen.transition_from_output(forward(gen.net, z).output()), cfg.sigmoid);
        }
        const CriticLosses cl = critic_losses(critic, fakes, prior, cfg.prior_jitter,
                                              cfg.gradient_penalty_weight, critic_rng);
        if (!std::isfinite(cl.critic_loss)) abort_with("non-finite critic loss", t);
        step(critic.net.parameter_blocks(), cl.critic_grads.blocks(), critic_opt);
        critic_loss = cl.critic_loss;
      }
    }

    const Matrix z = gen.draw_noise(noise_rng);
    const ForwardCache gen_pass = forward(gen.net, z);
    const Matrix s = gen.transition_from_output(gen_pass.output());
    const auto idx = sampler.next();
    const ForwardCache clf_pass = forward(clf.net, data.rows(idx));
    const auto labels = data.noisy_at(idx);
    const CorrectedLoss recon = corrected_cross_entropy(clf_pass.output(), s, labels);
    const AlignmentGradient align = alignment_gradient(critic, tempered_sigmoid(s, cfg.sigmoid));
    const double objective = recon.loss + structure_weight * align.loss;
    if (!std::isfinite(objective)) abort_with("non-finite generator objective", t);

    if (observer) {
      observer(MaskingStep{t, s, idx, clf_pass.output(), recon.loss, align.loss, structure_weight,
                           objective});
    }

    const Matrix grad_s =
        recon.grad_transition +
        structure_weight * align.grad.cwiseProduct(tempered_sigmoid_derivative(s, cfg.sigmoid));
    const Matrix grad_logits = flatten_row_major(row_softmax_backward(s, grad_s));
    const NetGradients gen_grads = backward(gen.net, gen_pass, grad_logits);
    const NetGradients clf_grads = backward(clf.net, clf_pass, recon.grad_probs);
    step(gen.net.parameter_blocks(), gen_grads.blocks(), gen_opt);
    step(clf.net.parameter_blocks(), clf_grads.blocks(), clf_opt);
    last_good = s;

    if (should_log(t)) {
      MaskingLogRow row{t + 1, recon.loss, critic_loss, align.loss,
                        accuracy(clf.predict(test_features), test_labels), std::nullopt};
      if (data.corruption) {
        Rng probe = log_rng.fork(t);
        row.transition_error =
            transition_error(extract_T(gen, cfg.log_extract_samples, probe).mean, *data.corruption);
      }
      log.push_back(row);
    }
  }

  Rng extract_rng = root.fork("extract");
  ExtractedTransition estimate = extract_T(gen, cfg.extract_samples, extract_rng);
  return {std::move(clf), std::move(gen), std::move(estimate), std::move(log)};
}

void ElboToy::validate() const {
  if (support.empty()) throw ValidationError("elbo toy: empty support");
  const std::size_t c = support.front().transition.classes();
  double q_sum = 0.0, prior_sum = 0.0;
  for (const auto& point : support) {
    if (!(point.q >= 0.0) || !(point.prior >= 0.0)) {
      throw ValidationError("elbo toy: negative support weight");
    }
    if (point.transition.classes() != c) throw ValidationError("elbo toy: transition sizes differ");
    q_sum += point.q;
    prior_sum += point.prior;
  }
  if (std::abs(q_sum - 1.0) > 1e-9) throw ValidationError("elbo toy: q does not sum to 1");
  if (std::abs(prior_sum - 1.0) > 1e-9) throw ValidationError("elbo toy: prior does not sum to 1");
  if (p_y_given_x.cols() != ix(c) || p_y_given_x.rows() == 0) {
    throw ValidationError("elbo toy: P(y|x) table must have C columns");
  }
  for (Eigen::Index r = 0; r < p_y_given_x.rows(); ++r) {
    if ((p_y_given_x.row(r).array() < 0.0).any() ||
        std::abs(p_y_given_x.row(r).sum() - 1.0) > 1e-9) {
      throw ValidationError("elbo toy: P(y|x) row " + std::to_string(r) + " is not normalized");
    }
  }
  if (observations.empty()) throw ValidationError("elbo toy: no observations");
  for (const auto& [x, y] : observations) {
    if (x >= static_cast<std::size_t>(p_y_given_x.rows()) || y < 0 || static_cast<std::size_t>(y) >= c) {
      throw ValidationError("elbo toy: observation out of range");
    }
  }
}

ElboToy ElboToy::from_json(const nlohmann::json& doc) {
  ElboToy toy;
  for (const auto& point : doc.at("support")) {
    toy.support.push_back({point.at("q").get<double>(), point.at("prior").get<double>(),
                           TransitionMatrix(rows_from_json(point.at("T")))});
  }
  toy.p_y_given_x = rows_from_json(doc.at("p_y_given_x"));
  for (const auto& obs : doc.at("observations")) {
    if (!obs.is_array() || obs.size() != 2) {
      throw ValidationError("elbo toy: observations are [x_row, noisy_label] pairs");
    }
    toy.observations.emplace_back(obs[0].get<std::size_t>(), obs[1].get<int>());
  }
  toy.validate();
  return toy;
}

nlohmann::json ElboToy::to_json() const {
  nlohmann::json doc;
  doc["support"] = nlohmann::json::array();
  for (const auto& point : support) {
    doc["support"].push_back(
        {{"q", point.q}, {"prior", point.prior}, {"T", rows_to_json(point.transition.values())}});
  }
  doc["p_y_given_x"] = rows_to_json(p_y_given_x);
  doc["observations"] = nlohmann::json::array();
  for (const auto& [x, y] : observations) doc["observations"].push_back({x, y});
  return doc;
}

std::vector<double> exact_posterior(const ElboToy& toy) {
  toy.validate();
  std::vector<double> log_joint;
  for (const auto& point : toy.support) {
    log_joint.push_back(point.prior > 0.0 ? std::log(point.prior) + data_loglik(toy, point.transition)
                                          : -std::numeric_limits<double>::infinity());
  }
  const double norm = log_sum_exp(log_joint);
  std::vector<double> post;
  for (double v : log_joint) post.push_back(std::exp(v - norm));
  return post;
}

ElboCheck elbo_toy_check(const ElboToy& toy) {
  toy.validate();
  std::vector<double> log_joint;
  double elbo = 0.0;
  for (const auto& point : toy.support) {
    const double ll = data_loglik(toy, point.transition);
    log_joint.push_back(point.prior > 0.0 ? std::log(point.prior) + ll
                                          : -std::numeric_limits<double>::infinity());
    if (point.q > 0.0) {
      elbo += point.q * (ll - std::log(point.q) + std::log(point.prior));
    }
  }
  const ElboCheck out{elbo, log_sum_exp(log_joint)};
  if (out.elbo > out.loglik + 1e-12) {
    throw RuntimeAbort("elbo_toy_check: bound violated (elbo " + std::to_string(out.elbo) +
                       " > loglik " + std::to_string(out.loglik) + ")");
  }
  return out;
}

}  // namespace masklab
