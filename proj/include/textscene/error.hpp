#pragma once

#include <stdexcept>
#include <string>

namespace textscene {

// Base of every exception raised by the library. The CLI maps the subclass
// to its exit code: UsageError -> 1, DataError -> 2, NumericalError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed arguments that violate an operation's preconditions.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Input files or records are malformed or inconsistent.
class DataError : public Error {
 public:
  using Error::Error;
};

// A computation produced or consumed non-finite values.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace textscene
