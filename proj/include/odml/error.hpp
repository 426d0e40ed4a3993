#pragma once

#include <stdexcept>
#include <string>

namespace odml {

/// Invalid input: shape mismatch, violated precondition, bad argument.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed, truncated or incompatible file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace odml
