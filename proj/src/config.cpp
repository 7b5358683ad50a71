#include "masklab/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "masklab/error.hpp"
#include "masklab/rng.hpp"

namespace masklab {

namespace {

using nlohmann::json;

void reject_unknown(const json& section, const std::string& name,
                    std::initializer_list<const char*> allowed) {
  if (!section.is_object()) throw ValidationError("config: section '" + name + "' must be an object");
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [key, _] : section.items()) {
    if (!keys.count(key)) {
      throw ValidationError("config: unknown key '" + key + "' in section '" + name + "'");
    }
  }
}

template <typename T>
void read(const json& section, const char* key, T& into, const std::string& where) {
  if (!section.contains(key)) return;
  try {
    into = section.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError("config: bad value for '" + where + "." + key + "': " + e.what());
  }
}

}  // namespace

double default_noise_rate(MaskKind structure) {
  return structure == MaskKind::column_diagonal ? 0.4 : 0.3;
}

MaskParams NoiseConfig::mask_params(std::size_t classes) const {
  MaskParams p;
  p.noise_columns = noise_columns;
  if (p.noise_columns.empty() && classes >= 2) {
    const std::size_t second = classes / 2;
    p.noise_columns = {second >= 2 ? second - 2 : 0, second};
    if (p.noise_columns[0] == p.noise_columns[1]) p.noise_columns.pop_back();
  }
  p.block_sizes = block_sizes;
  if (p.block_sizes.empty()) {
    for (std::size_t left = classes; left > 0;) {
      const std::size_t b = std::min<std::size_t>(5, left);
      p.block_sizes.push_back(b);
      left -= b;
    }
  }
  return p;
}

StructureMask NoiseConfig::mask(std::size_t classes) const {
  return build_mask(structure, classes, mask_params(classes));
}

TransitionMatrix NoiseConfig::transition(std::size_t classes) const {
  return build_transition(mask(classes), rate);
}

RunConfig RunConfig::from_json(const json& doc) {
  if (!doc.is_object()) throw ValidationError("config: top level must be a JSON object");
  reject_unknown(doc, "<root>", {"data", "noise", "train", "masking", "experiment"});
  RunConfig cfg;

  if (doc.contains("data")) {
    const auto& s = doc.at("data");
    reject_unknown(s, "data", {"classes", "n_per_class", "dim", "separation", "seed"});
    read(s, "classes", cfg.data.classes, "data");
    read(s, "n_per_class", cfg.data.n_per_class, "data");
    read(s, "dim", cfg.data.dim, "data");
    read(s, "separation", cfg.data.separation, "data");
    read(s, "seed", cfg.data.seed, "data");
  }
  if (doc.contains("noise")) {
    const auto& s = doc.at("noise");
    reject_unknown(s, "noise", {"structure", "rate", "noise_columns", "block_sizes"});
    if (s.contains("structure")) {
      cfg.noise.structure = mask_kind_from_string(s.at("structure").get<std::string>());
      cfg.noise.rate = default_noise_rate(cfg.noise.structure);
    }
    read(s, "rate", cfg.noise.rate, "noise");
    read(s, "noise_columns", cfg.noise.noise_columns, "noise");
    read(s, "block_sizes", cfg.noise.block_sizes, "noise");
  }
  if (doc.contains("train")) {
    const auto& s = doc.at("train");
    reject_unknown(s, "train", {"iterations", "batch_size", "hidden", "learning_rate", "decay_factor",
                                "decay_every", "eval_every", "anchor_percentile"});
    read(s, "iterations", cfg.train.iterations, "train");
    read(s, "batch_size", cfg.train.batch_size, "train");
    read(s, "hidden", cfg.train.hidden, "train");
    read(s, "learning_rate", cfg.train.learning_rate, "train");
    read(s, "decay_factor", cfg.train.decay_factor, "train");
    read(s, "decay_every", cfg.train.decay_every, "train");
    read(s, "eval_every", cfg.train.eval_every, "train");
    read(s, "anchor_percentile", cfg.train.anchor_percentile, "train");
  }
  if (doc.contains("masking")) {
    const auto& s = doc.at("masking");
    reject_unknown(s, "masking",
                   {"alpha", "beta", "z_dim", "generator_hidden", "critic_hidden",
                    "critic_steps_per_gen_step", "critic_batch", "gradient_penalty_weight",
                    "prior_jitter", "generator_rate", "critic_rate", "warmup_iterations",
                    "extract_samples", "log_extract_samples", "structure_term_weight_mode"});
    auto& m = cfg.masking;
    read(s, "alpha", m.sigmoid.alpha, "masking");
    read(s, "beta", m.sigmoid.beta, "masking");
    read(s, "z_dim", m.z_dim, "masking");
    read(s, "generator_hidden", m.generator_hidden, "masking");
    read(s, "critic_hidden", m.critic_hidden, "masking");
    read(s, "critic_steps_per_gen_step", m.critic_steps_per_gen_step, "masking");
    read(s, "critic_batch", m.critic_batch, "masking");
    read(s, "gradient_penalty_weight", m.gradient_penalty_weight, "masking");
    read(s, "prior_jitter", m.prior_jitter, "masking");
    read(s, "generator_rate", m.generator_rate, "masking");
    read(s, "critic_rate", m.critic_rate, "masking");
    read(s, "warmup_iterations", m.warmup_iterations, "masking");
    read(s, "extract_samples", m.extract_samples, "masking");
    read(s, "log_extract_samples", m.log_extract_samples, "masking");
    if (s.contains("structure_term_weight_mode") &&
        s.at("structure_term_weight_mode") != "elbo_per_example") {
      throw ValidationError("config: masking.structure_term_weight_mode must be 'elbo_per_example'");
    }
  }
  if (doc.contains("experiment")) {
    const auto& s = doc.at("experiment");
    reject_unknown(s, "experiment", {"seeds", "methods", "prior"});
    read(s, "seeds", cfg.experiment.seeds, "experiment");
    read(s, "methods", cfg.experiment.methods, "experiment");
    read(s, "prior", cfg.experiment.prior, "experiment");
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(doc);
}

void RunConfig::validate() const {
  if (data.classes < 2) throw ValidationError("config: data.classes must be >= 2");
  if (data.dim < 2) throw ValidationError("config: data.dim must be >= 2");
  if (data.n_per_class < 5) throw ValidationError("config: data.n_per_class must be >= 5");
  if (!(data.separation >= 0.0)) throw ValidationError("config: data.separation must be >= 0");
  (void)noise.transition(data.classes);
  train.validate();
  if (std::find(experiment.methods.begin(), experiment.methods.end(), "masking") != experiment.methods.end()) {
    masking_config().validate();
  }
  if (experiment.seeds.empty()) throw ValidationError("config: experiment.seeds must be nonempty");
  if (experiment.methods.empty()) throw ValidationError("config: experiment.methods must be nonempty");
  std::set<std::string> seen;
  for (const auto& m : experiment.methods) {
    if (std::find(kAllMethods.begin(), kAllMethods.end(), m) == kAllMethods.end()) {
      throw ValidationError("config: unknown method '" + m +
                            "' (expected clean, noisy, f_correction, s_adaptation, masking)");
    }
    if (!seen.insert(m).second) throw ValidationError("config: duplicate method '" + m + "'");
  }
  if (experiment.prior != "true" && experiment.prior != "full") {
    throw ValidationError("config: experiment.prior must be 'true' or 'full'");
  }
}

MaskingConfig RunConfig::masking_config() const {
  MaskingConfig m = masking;
  m.train = train;
  return m;
}

json RunConfig::to_json() const {
  const MaskParams params = noise.mask_params(data.classes);
  json doc;
  doc["data"] = {{"classes", data.classes},
                 {"n_per_class", data.n_per_class},
                 {"dim", data.dim},
                 {"separation", data.separation},
                 {"seed", data.seed}};
  doc["noise"] = {{"structure", std::string(to_string(noise.structure))},
                  {"rate", noise.rate},
                  {"noise_columns", params.noise_columns},
                  {"block_sizes", params.block_sizes}};
  doc["train"] = {{"iterations", train.iterations},
                  {"batch_size", train.batch_size},
                  {"hidden", train.hidden},
                  {"learning_rate", train.learning_rate},
                  {"decay_factor", train.decay_factor},
                  {"decay_every", train.decay_every},
                  {"eval_every", train.eval_every},
                  {"anchor_percentile", train.anchor_percentile}};
  doc["masking"] = {{"alpha", masking.sigmoid.alpha},
                    {"beta", masking.sigmoid.beta},
                    {"z_dim", masking.z_dim},
                    {"generator_hidden", masking.generator_hidden},
                    {"critic_hidden", masking.critic_hidden},
                    {"critic_steps_per_gen_step", masking.critic_steps_per_gen_step},
                    {"critic_batch", masking.critic_batch},
                    {"gradient_penalty_weight", masking.gradient_penalty_weight},
                    {"prior_jitter", masking.prior_jitter},
                    {"generator_rate", masking.generator_rate},
                    {"critic_rate", masking.critic_rate},
                    {"warmup_iterations", masking.warmup_iterations},
                    {"extract_samples", masking.extract_samples},
                    {"log_extract_samples", masking.log_extract_samples},
                    {"structure_term_weight_mode", "elbo_per_example"}};
  doc["experiment"] = {{"seeds", experiment.seeds},
                       {"methods", experiment.methods},
                       {"prior", experiment.prior}};
  return doc;
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(to_json().dump())));
  return buf;
}

}  // namespace masklab
