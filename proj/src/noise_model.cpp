#include "masklab/noise_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <nlohmann/json.hpp>

#include "masklab/error.hpp"

namespace masklab {

namespace {

constexpr double kExponentClamp = 500.0;

Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }

}  // namespace

std::string_view to_string(MaskKind kind) {
  switch (kind) {
    case MaskKind::column_diagonal: return "column_diagonal";
    case MaskKind::tri_diagonal: return "tri_diagonal";
    case MaskKind::block_diagonal: return "block_diagonal";
    case MaskKind::full: return "full";
    case MaskKind::identity: return "identity";
    case MaskKind::custom: return "custom";
  }
  return "custom";
}

MaskKind mask_kind_from_string(std::string_view name) {
  for (MaskKind k : {MaskKind::column_diagonal, MaskKind::tri_diagonal, MaskKind::block_diagonal,
                     MaskKind::full, MaskKind::identity, MaskKind::custom}) {
    if (to_string(k) == name) return k;
  }
  // Short names used on the command line and in configs.
  if (name == "column") return MaskKind::column_diagonal;
  if (name == "tri") return MaskKind::tri_diagonal;
  if (name == "block") return MaskKind::block_diagonal;
  throw ValidationError("unknown mask kind '" + std::string(name) + "'");
}

StructureMask::StructureMask(Matrix values, MaskKind kind) : values_(std::move(values)), kind_(kind) {
  if (values_.rows() != values_.cols() || values_.rows() < 2) {
    throw ShapeError("StructureMask: expected a square matrix with C >= 2, got " +
                     std::to_string(values_.rows()) + "x" + std::to_string(values_.cols()));
  }
  for (Eigen::Index i = 0; i < values_.rows(); ++i) {
    for (Eigen::Index j = 0; j < values_.cols(); ++j) {
      const double v = values_(i, j);
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ValidationError("StructureMask: entry (" + std::to_string(i) + "," +
                              std::to_string(j) + ") = " + std::to_string(v) +
                              " outside [0,1]");
      }
    }
  }
  if (is_binary()) {
    for (Eigen::Index i = 0; i < values_.rows(); ++i) {
      if (values_(i, i) != 1.0) {
        throw ValidationError("StructureMask: diagonal entry " + std::to_string(i) +
                              " must be 1 (self-transitions are always valid)");
      }
    }
  }
}

bool StructureMask::is_binary() const {
  return (values_.array() == 0.0 || values_.array() == 1.0).all();
}

StructureMask StructureMask::thresholded() const {
  Matrix out = (values_.array() >= 0.5).cast<double>().matrix();
  out.diagonal().setOnes();
  return StructureMask(std::move(out), kind_ == MaskKind::custom ? MaskKind::custom : kind_);
}

TransitionMatrix::TransitionMatrix(Matrix values) : values_(std::move(values)) {
  if (values_.rows() != values_.cols() || values_.rows() < 2) {
    throw ShapeError("TransitionMatrix: expected a square matrix with C >= 2, got " +
                     std::to_string(values_.rows()) + "x" + std::to_string(values_.cols()));
  }
  for (Eigen::Index i = 0; i < values_.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < values_.cols(); ++j) {
      const double v = values_(i, j);
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw ValidationError("TransitionMatrix: entry (" + std::to_string(i) + "," +
                              std::to_string(j) + ") is negative or non-finite");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > kRowTolerance) {
      throw ValidationError("TransitionMatrix: row " + std::to_string(i) + " sums to " +
                            std::to_string(sum));
    }
  }
}

TransitionMatrix TransitionMatrix::identity(std::size_t classes) {
  return TransitionMatrix(Matrix::Identity(ix(classes), ix(classes)));
}

TransitionMatrix TransitionMatrix::uniform(std::size_t classes) {
  return TransitionMatrix(
      Matrix::Constant(ix(classes), ix(classes), 1.0 / static_cast<double>(classes)));
}

void TemperedSigmoidParams::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("tempered sigmoid: alpha must lie in (0,1)");
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw ValidationError("tempered sigmoid: beta must be positive");
  }
}

StructureMask build_mask(MaskKind kind, std::size_t classes, const MaskParams& params) {
  if (classes < 2) throw ValidationError("build_mask: need at least 2 classes");
  const Eigen::Index c = ix(classes);
  Matrix m = Matrix::Identity(c, c);
  switch (kind) {
    case MaskKind::column_diagonal:
      if (params.noise_columns.empty()) {
        throw ValidationError("build_mask: column_diagonal needs at least one noise column");
      }
      for (std::size_t col : params.noise_columns) {
        if (col >= classes) {
          throw ValidationError("build_mask: noise column " + std::to_string(col) +
                                " out of range for C=" + std::to_string(classes));
        }
        m.col(ix(col)).setOnes();
      }
      break;
    case MaskKind::tri_diagonal: {
      if (params.bandwidth < 1) throw ValidationError("build_mask: bandwidth must be >= 1");
      const auto band = ix(params.bandwidth);
      for (Eigen::Index i = 0; i < c; ++i) {
        for (Eigen::Index j = std::max<Eigen::Index>(0, i - band);
             j <= std::min<Eigen::Index>(c - 1, i + band); ++j) {
          m(i, j) = 1.0;
        }
      }
      break;
    }
    case MaskKind::block_diagonal: {
      if (params.block_sizes.empty()) throw ValidationError("build_mask: block sizes required");
      std::size_t sum = 0;
      for (std::size_t b : params.block_sizes) {
        if (b == 0) throw ValidationError("build_mask: block sizes must be positive");
        sum += b;
      }
      if (sum != classes) {
        throw ValidationError("build_mask: block sizes sum to " + std::to_string(sum) +
                              ", expected C=" + std::to_string(classes));
      }
      Eigen::Index start = 0;
      for (std::size_t b : params.block_sizes) {
        m.block(start, start, ix(b), ix(b)).setOnes();
        start += ix(b);
      }
      break;
    }
    case MaskKind::full:
      m.setOnes();
      break;
    case MaskKind::identity:
      break;
    case MaskKind::custom:
      throw ValidationError("build_mask: custom masks are loaded, not built");
  }
  return StructureMask(std::move(m), kind);
}

TransitionMatrix build_transition(const StructureMask& mask, double noise_rate) {
  if (!mask.is_binary()) {
    throw ValidationError("build_transition: mask must be {0,1}-valued");
  }
  if (!(noise_rate >= 0.0 && noise_rate < 1.0)) {
    throw ValidationError("build_transition: noise_rate must lie in [0,1)");
  }
  const auto c = ix(mask.classes());
  Matrix t = Matrix::Zero(c, c);
  for (Eigen::Index i = 0; i < c; ++i) {
    int open = 0;
    for (Eigen::Index j = 0; j < c; ++j) {
      if (j != i && mask.values()(i, j) == 1.0) ++open;
    }
    if (open == 0 || noise_rate == 0.0) {
      t(i, i) = 1.0;
      continue;
    }
    t(i, i) = 1.0 - noise_rate;
    const double share = noise_rate / open;
    for (Eigen::Index j = 0; j < c; ++j) {
      if (j != i && mask.values()(i, j) == 1.0) t(i, j) = share;
    }
  }
  return TransitionMatrix(std::move(t));
}

std::vector<int> corrupt_labels(std::span<const int> clean, const TransitionMatrix& transition,
                                Rng& rng) {
  const auto c = static_cast<int>(transition.classes());
  // Row CDFs, row-major; the last reachable entry of each row absorbs rounding.
  std::vector<double> cdf(static_cast<std::size_t>(c * c));
  std::vector<int> last_positive(static_cast<std::size_t>(c), 0);
  for (int i = 0; i < c; ++i) {
    double acc = 0.0;
    for (int j = 0; j < c; ++j) {
      acc += transition.values()(i, j);
      cdf[static_cast<std::size_t>(i * c + j)] = acc;
      if (transition.values()(i, j) > 0.0) last_positive[static_cast<std::size_t>(i)] = j;
    }
  }
  std::vector<int> noisy(clean.size());
  for (std::size_t n = 0; n < clean.size(); ++n) {
    const int y = clean[n];
    if (y < 0 || y >= c) {
      throw ValidationError("corrupt_labels: label " + std::to_string(y) + " at index " +
                            std::to_string(n) + " outside [0," + std::to_string(c) + ")");
    }
    const double u = rng.uniform() * cdf[static_cast<std::size_t>(y * c + c - 1)];
    int drawn = last_positive[static_cast<std::size_t>(y)];
    for (int j = 0; j < c; ++j) {
      if (transition.values()(y, j) > 0.0 && u < cdf[static_cast<std::size_t>(y * c + j)]) {
        drawn = j;
        break;
      }
    }
    noisy[n] = drawn;
  }
  return noisy;
}

double tempered_sigmoid(double s, const TemperedSigmoidParams& p) {
  const double z = std::clamp(-(s - p.alpha) / p.beta, -kExponentClamp, kExponentClamp);
  return 1.0 / (1.0 + std::exp(z));
}

Matrix tempered_sigmoid(const Matrix& s, const TemperedSigmoidParams& p) {
  p.validate();
  return s.unaryExpr([&](double v) { return tempered_sigmoid(v, p); });
}

Matrix tempered_sigmoid_derivative(const Matrix& s, const TemperedSigmoidParams& p) {
  p.validate();
  return s.unaryExpr([&](double v) {
    const double f = tempered_sigmoid(v, p);
    return f * (1.0 - f) / p.beta;
  });
}

StructureMask distill_mask(const TransitionMatrix& estimate, double hi, double lo) {
  if (!(lo >= 0.0 && lo < hi && hi <= 1.0)) {
    throw ValidationError("distill_mask: need 0 <= lo < hi <= 1");
  }
  const auto c = ix(estimate.classes());
  Matrix m(c, c);
  for (Eigen::Index i = 0; i < c; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) {
      m(i, j) = (i == j || estimate.values()(i, j) >= lo) ? 1.0 : 0.0;
    }
  }
  return StructureMask(std::move(m), MaskKind::custom);
}

nlohmann::json rows_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix rows_from_json(const nlohmann::json& rows) {
  if (!rows.is_array() || rows.empty()) throw ValidationError("matrix JSON: 'rows' must be a nonempty array");
  const auto r = static_cast<Eigen::Index>(rows.size());
  const auto c = static_cast<Eigen::Index>(rows.front().is_array() ? rows.front().size() : 0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != c) {
      throw ValidationError("matrix JSON: row " + std::to_string(i) + " has wrong length");
    }
    for (Eigen::Index j = 0; j < c; ++j) {
      const auto& v = row[static_cast<std::size_t>(j)];
      if (!v.is_number()) throw ValidationError("matrix JSON: non-numeric entry in row " + std::to_string(i));
      m(i, j) = v.get<double>();
    }
  }
  return m;
}

namespace {

Matrix checked_rows(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("C") || !doc.contains("rows")) {
    throw ValidationError("matrix JSON: expected an object with 'C' and 'rows'");
  }
  Matrix m = rows_from_json(doc.at("rows"));
  const auto c = doc.at("C").get<std::int64_t>();
  if (m.rows() != c || m.cols() != c) {
    throw ShapeError("matrix JSON: 'C' = " + std::to_string(c) + " does not match rows");
  }
  return m;
}

}  // namespace

nlohmann::json to_json(const StructureMask& mask) {
  return {{"C", mask.classes()}, {"kind", std::string(to_string(mask.kind()))},
          {"rows", rows_to_json(mask.values())}};
}

nlohmann::json to_json(const TransitionMatrix& matrix) {
  return {{"C", matrix.classes()}, {"kind", "transition"}, {"rows", rows_to_json(matrix.values())}};
}

StructureMask mask_from_json(const nlohmann::json& doc) {
  Matrix m = checked_rows(doc);
  MaskKind kind = MaskKind::custom;
  if (doc.contains("kind") && doc.at("kind").get<std::string>() != "transition") {
    kind = mask_kind_from_string(doc.at("kind").get<std::string>());
  }
  return StructureMask(std::move(m), kind);
}

TransitionMatrix transition_from_json(const nlohmann::json& doc) {
  return TransitionMatrix(checked_rows(doc));
}

}  // namespace masklab
