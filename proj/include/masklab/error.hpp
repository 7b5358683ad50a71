#pragma once

#include <stdexcept>
#include <string>

namespace masklab {

// Bad input: shapes, ranges, malformed files or configs. The CLI maps these to
// exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dimension mismatch between a tensor and the layer consuming it.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Numerical failure during compute (non-finite loss or gradient). The CLI maps
// these to exit code 2.
class RuntimeAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace masklab
