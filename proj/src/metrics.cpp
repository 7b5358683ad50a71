#include "masklab/metrics.hpp"

#include <cmath>
#include <string>

#include "masklab/error.hpp"

namespace masklab {

double transition_error(const TransitionMatrix& estimate, const TransitionMatrix& truth) {
  if (estimate.classes() != truth.classes()) {
    throw ShapeError("transition_error: C=" + std::to_string(estimate.classes()) + " vs C=" +
                     std::to_string(truth.classes()));
  }
  const double total = (estimate.values() - truth.values()).cwiseAbs().sum();
  return 0.5 * total / static_cast<double>(truth.classes());
}

StructureScore structure_f1(const StructureMask& estimate, const StructureMask& truth) {
  if (estimate.classes() != truth.classes()) {
    throw ShapeError("structure_f1: masks differ in size");
  }
  if (!estimate.is_binary() || !truth.is_binary()) {
    throw ValidationError("structure_f1: soft mask given; threshold at 0.5 first");
  }
  const auto c = static_cast<Eigen::Index>(truth.classes());
  double tp = 0, fp = 0, fn = 0;
  for (Eigen::Index i = 0; i < c; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) {
      if (i == j) continue;
      const bool predicted = estimate.values()(i, j) == 1.0;
      const bool actual = truth.values()(i, j) == 1.0;
      if (predicted && actual) ++tp;
      else if (predicted) ++fp;
      else if (actual) ++fn;
    }
  }
  StructureScore s;
  s.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  s.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

double accuracy(const Matrix& probabilities, std::span<const int> labels) {
  if (static_cast<std::size_t>(probabilities.rows()) != labels.size() || labels.empty()) {
    throw ShapeError("accuracy: prediction and label counts differ or are empty");
  }
  std::size_t hits = 0;
  for (Eigen::Index r = 0; r < probabilities.rows(); ++r) {
    Eigen::Index best = 0;
    probabilities.row(r).maxCoeff(&best);
    if (best == labels[static_cast<std::size_t>(r)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

MeanSd mean_sd(std::span<const double> values) {
  MeanSd out;
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

}  // namespace masklab
