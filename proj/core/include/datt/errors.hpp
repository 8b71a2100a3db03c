#pragma once

#include <stdexcept>
#include <string>

namespace datt {

// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents that do not fit an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid model or training configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf or divergence during training or evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Metric undefined for the given data (e.g. MAPE with a zero target).
class MetricError : public Error {
 public:
  using Error::Error;
};

// Preprocessing fit failed (e.g. constant column).
class FitError : public Error {
 public:
  using Error::Error;
};

// Input data rejected: missing file, bad header, malformed cell, invariant.
class DataError : public Error {
 public:
  using Error::Error;
};

// Model file rejected on load.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Attribution could not be computed.
class ExplanationError : public Error {
 public:
  using Error::Error;
};

}  // namespace datt
