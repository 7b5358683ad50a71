#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "masklab/baselines.hpp"
#include "masklab/masking.hpp"
#include "masklab/noise_model.hpp"

namespace masklab {

struct DataConfig {
  std::size_t classes = 10;
  std::size_t n_per_class = 250;  // 200 train + 50 test after the 80/20 split
  std::size_t dim = 16;
  double separation = 3.0;
  std::uint64_t seed = 0;  // used by `synth`; `compare` uses the experiment seeds
};

struct NoiseConfig {
  MaskKind structure = MaskKind::tri_diagonal;
  double rate = 0.3;
  std::vector<std::size_t> noise_columns;  // column_diagonal; default {C/2 - 2, C/2}
  std::vector<std::size_t> block_sizes;    // block_diagonal; default blocks of 5

  MaskParams mask_params(std::size_t classes) const;
  StructureMask mask(std::size_t classes) const;
  TransitionMatrix transition(std::size_t classes) const;
};

inline const std::vector<std::string> kAllMethods = {"clean", "noisy", "f_correction",
                                                     "s_adaptation", "masking"};

struct ExperimentConfig {
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<std::string> methods = kAllMethods;
  std::string prior = "true";  // "true": the corrupting structure; "full": all transitions
};

/// Single JSON document covering data, noise, classifier training, MASKING and
/// the experiment grid. Every section is optional and falls back to the
/// defaults; unknown keys are rejected.
struct RunConfig {
  DataConfig data;
  NoiseConfig noise;
  TrainConfig train;
  MaskingConfig masking;
  ExperimentConfig experiment;

  static RunConfig from_json(const nlohmann::json& doc);
  static RunConfig load(const std::string& path);
  nlohmann::json to_json() const;
  /// Hex FNV-1a of the canonical (sorted-key) serialization.
  std::string hash() const;
  void validate() const;

  /// MASKING settings with `train` folded in.
  MaskingConfig masking_config() const;
};

double default_noise_rate(MaskKind structure);

}  // namespace masklab
