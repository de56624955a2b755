#pragma once

#include <stdexcept>
#include <string>

namespace lbn {

// Base class of every error raised by the library. Each subclass maps onto
// one failure category so callers (the CLI in particular) can translate it
// into an exit status without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, invalid probability rows and similar numeric failures.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

class EmptyBatchError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Required input file (dataset, checkpoint) does not exist or is unreadable.
class MissingInputError : public Error {
 public:
  using Error::Error;
};

}  // namespace lbn
