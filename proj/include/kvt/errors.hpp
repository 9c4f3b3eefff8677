#pragma once

#include <stdexcept>
#include <string>

namespace kvt {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Sequence longer than the configured maximum length.
struct CapacityError : std::length_error {
  using std::length_error::length_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf where finite values are required, or an empty distribution.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AutogradError : std::logic_error {
  using std::logic_error::logic_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace kvt
