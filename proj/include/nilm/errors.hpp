#pragma once

#include <stdexcept>
#include <string>

namespace nilm {

// Error taxonomy shared by the whole library.  The CLI maps these onto its
// exit codes: ConfigError -> 1 (bad configuration / arguments), DataError,
// IoError and ShapeError -> 2 (broken inputs at runtime), NumericError and
// DomainError -> 3 (numerical failure such as a non-finite loss).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/layer dimension mismatches; messages name both offending shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid configuration values (kernel sizes, rates, manifest fields ...).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed or inconsistent input data; messages carry file/line context.
struct DataError : Error {
  using Error::Error;
};

// Filesystem and serialization failures.
struct IoError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required (diverged training ...).
struct NumericError : Error {
  using Error::Error;
};

// Arguments outside a function's mathematical domain (log of x <= 0 ...).
struct DomainError : Error {
  using Error::Error;
};

}  // namespace nilm
