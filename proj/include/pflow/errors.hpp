#pragma once

#include <stdexcept>
#include <string>

namespace pflow {

// Every error the library raises derives from Error so callers (the CLI in
// particular) can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or extents disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced or consumed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// API called with arguments that violate its contract.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Object used before it reached the required state.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Value outside the domain of a function (e.g. a joint limit).
class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pflow
