#pragma once

#include <span>
#include <vector>

#include "masklab/dense_net.hpp"
#include "masklab/noise_model.hpp"

namespace masklab {

/// Mean over rows of the total-variation distance between matching rows.
double transition_error(const TransitionMatrix& estimate, const TransitionMatrix& truth);

struct StructureScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Precision/recall/F1 over off-diagonal entries, treating 1 (valid) as the
/// positive class. Both masks must be binary; threshold soft masks first.
/// With no predicted positives, precision is reported as 0.
StructureScore structure_f1(const StructureMask& estimate, const StructureMask& truth);

double accuracy(const Matrix& probabilities, std::span<const int> labels);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation; 0 for a single value
};
MeanSd mean_sd(std::span<const double> values);

}  // namespace masklab
