#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "masklab/dense_net.hpp"
#include "masklab/noise_model.hpp"
#include "masklab/rng.hpp"

namespace masklab {

/// Features with noisy training labels and, when known, the clean labels and
/// the matrix that corrupted them. Train/test membership is fixed at
/// construction by a seeded shuffle.
struct LabeledDataset {
  Matrix features;  // n x d
  std::optional<std::vector<int>> clean_labels;
  std::vector<int> noisy_labels;
  std::size_t classes = 0;
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> test_index;
  std::optional<TransitionMatrix> corruption;
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t size() const { return noisy_labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }

  /// Throws ValidationError on any broken invariant.
  void validate() const;

  Matrix rows(const std::vector<std::size_t>& index) const;
  std::vector<int> noisy_at(const std::vector<std::size_t>& index) const;
  /// Clean labels when available, noisy otherwise. Test evaluation uses this.
  std::vector<int> reference_at(const std::vector<std::size_t>& index) const;

  /// 80/20 split by seeded shuffle.
  void split(std::uint64_t seed, double train_fraction = 0.8);
};

/// Gaussian classes with unit variance. Class k has mean separation * u_k where
/// u_k = e_k when C <= d, and otherwise a fixed pseudo-random unit vector.
LabeledDataset synth_dataset(std::size_t classes, std::size_t n_per_class, std::size_t dim,
                             double separation, std::uint64_t seed);

Matrix class_means(std::size_t classes, std::size_t dim, double separation);

/// Replaces noisy labels by draws from `transition` applied to the clean labels.
void corrupt_dataset(LabeledDataset& data, const TransitionMatrix& transition, Rng& rng);

struct CsvSchema {
  std::optional<std::size_t> classes;  // inferred as max label + 1 when absent
  std::uint64_t split_seed = 0;
};

struct CsvLoadStats {
  std::size_t ingested = 0;
  std::size_t skipped = 0;
};

/// Header must be f0,...,f{d-1},label and may carry a trailing clean_label
/// column. Rows of the wrong arity are skipped and counted; malformed numbers
/// and out-of-range labels are errors citing the line.
LabeledDataset load_csv_dataset(const std::filesystem::path& path, const CsvSchema& schema = {},
                                CsvLoadStats* stats = nullptr);

void write_csv_dataset(const LabeledDataset& data, const std::filesystem::path& path,
                       bool include_clean = true);

}  // namespace masklab
