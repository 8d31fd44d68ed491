#pragma once

#include <stdexcept>
#include <string>

namespace nfhmm {

// Base class for everything the library throws. Subclasses map onto the
// distinct exit-code classes of the command-line tool.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File missing, unreadable, malformed container or unsupported encoding.
class IoError : public Error {
 public:
  using Error::Error;
};

// Precondition violated: bad dimensions, invalid parameters, empty input.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Zero-probability evidence, zero-support bins, non-finite results.
class NumericalError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace detail
}  // namespace nfhmm
