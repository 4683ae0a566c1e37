#pragma once

#include <stdexcept>
#include <string>

namespace defog {

/// Malformed shapes, inconsistent specs and invalid arguments.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Unreadable, truncated or corrupt files and malformed configs.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loss or tensor became NaN/Inf during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace defog
