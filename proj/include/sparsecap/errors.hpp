#pragma once

#include <stdexcept>
#include <string>

namespace sparsecap {

// Bad input: malformed files, out-of-range arguments, inconsistent shapes.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values or degenerate numerical state during a computation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sparsecap
