#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "masklab/dense_net.hpp"
#include "masklab/rng.hpp"

namespace masklab {

enum class MaskKind { column_diagonal, tri_diagonal, block_diagonal, full, identity, custom };

std::string_view to_string(MaskKind kind);
MaskKind mask_kind_from_string(std::string_view name);

/// C x C matrix in [0,1] marking which class transitions are allowed. Binary
/// masks (built, distilled, or supplied as a prior) always have a unit
/// diagonal; soft masks come out of structure extraction and only need to lie
/// in [0,1].
class StructureMask {
 public:
  StructureMask(Matrix values, MaskKind kind);

  std::size_t classes() const { return static_cast<std::size_t>(values_.rows()); }
  const Matrix& values() const { return values_; }
  MaskKind kind() const { return kind_; }
  bool is_binary() const;
  double operator()(std::size_t i, std::size_t j) const {
    return values_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }

  /// Entries >= 0.5 become 1; the diagonal is forced to 1.
  StructureMask thresholded() const;

 private:
  Matrix values_;
  MaskKind kind_;
};

/// Row-stochastic C x C matrix; entry (i, j) = Pr(noisy = j | true = i).
class TransitionMatrix {
 public:
  static constexpr double kRowTolerance = 1e-9;

  explicit TransitionMatrix(Matrix values);
  static TransitionMatrix identity(std::size_t classes);
  static TransitionMatrix uniform(std::size_t classes);

  std::size_t classes() const { return static_cast<std::size_t>(values_.rows()); }
  const Matrix& values() const { return values_; }
  double operator()(std::size_t i, std::size_t j) const {
    return values_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }

 private:
  Matrix values_;
};

struct TemperedSigmoidParams {
  double alpha = 0.05;
  double beta = 0.005;

  void validate() const;
};

struct MaskParams {
  std::vector<std::size_t> noise_columns;
  std::size_t bandwidth = 1;
  std::vector<std::size_t> block_sizes;
};

StructureMask build_mask(MaskKind kind, std::size_t classes, const MaskParams& params = {});

/// Diagonal gets 1 - noise_rate; the rest of the row is split evenly over the
/// unmasked off-diagonal entries. Rows with no such entry stay on the diagonal.
TransitionMatrix build_transition(const StructureMask& mask, double noise_rate);

std::vector<int> corrupt_labels(std::span<const int> clean, const TransitionMatrix& transition,
                                Rng& rng);

/// f(s) = 1 / (1 + exp(-(s - alpha) / beta)), with the exponent clamped to
/// [-500, 500].
Matrix tempered_sigmoid(const Matrix& s, const TemperedSigmoidParams& p);
double tempered_sigmoid(double s, const TemperedSigmoidParams& p);
/// df/ds = f (1 - f) / beta.
Matrix tempered_sigmoid_derivative(const Matrix& s, const TemperedSigmoidParams& p);

/// Entries above `hi` are valid, below `lo` invalid; the band in between is
/// kept valid. Diagonal always valid.
StructureMask distill_mask(const TransitionMatrix& estimate, double hi, double lo);

nlohmann::json to_json(const StructureMask& mask);
nlohmann::json to_json(const TransitionMatrix& matrix);
StructureMask mask_from_json(const nlohmann::json& doc);
TransitionMatrix transition_from_json(const nlohmann::json& doc);

Matrix rows_from_json(const nlohmann::json& rows);
nlohmann::json rows_to_json(const Matrix& m);

}  // namespace masklab
