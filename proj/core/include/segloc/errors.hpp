#pragma once

#include <stdexcept>
#include <string>

namespace segloc {

/// Tensor shape disagreement between operands.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input data: manifests, feature files, label records, logs.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A NaN or infinity appeared where a finite value is required.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace segloc
