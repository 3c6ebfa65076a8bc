#pragma once

#include <stdexcept>
#include <string>

namespace mhai {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input file does not have the required columns.
struct SchemaError : Error {
  using Error::Error;
};

// A field could not be parsed or is out of range.
struct ParseError : Error {
  using Error::Error;
};

// Precondition on a value violated (dimension mismatch, subset not owned, ...).
struct DomainError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Operation requested in the wrong client phase.
struct LifecycleError : Error {
  using Error::Error;
};

}  // namespace mhai
