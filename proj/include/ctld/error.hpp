#pragma once

#include <stdexcept>
#include <string>

namespace ctld {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad shapes, hyperparameters or variant combinations. Maps to CLI exit 2.
struct ConfigError : Error {
  using Error::Error;
};

// API misuse (calling backward on a non-scalar, stepping without gradients).
struct UsageError : Error {
  using Error::Error;
};

// Missing or malformed files: manifests, checkpoints, CSVs. CLI exit 3.
struct DataError : Error {
  using Error::Error;
};

// Non-finite values during training. CLI exit 4.
struct NumericalError : Error {
  using Error::Error;
};

}  // namespace ctld
