#pragma once

#include <stdexcept>
#include <string>

namespace maxcombo {

// Runtime failure of a numerical procedure (degenerate variance,
// non-convergence, monotone likelihood, ...).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid input: bad file contents, out-of-range configuration values.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace maxcombo
