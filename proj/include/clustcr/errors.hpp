#pragma once

#include <stdexcept>
#include <string>

namespace clustcr {

/// Base class for every error raised by the library. Callers that need to
/// distinguish failure classes catch the subclasses below.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg), msg_(msg) {}

  const char* what() const noexcept override { return msg_.c_str(); }

  /// Prefix the message with the pipeline stage that raised it, e.g.
  /// "cause 2: singular pseudo-Hessian".
  void add_context(const std::string& stage) { msg_ = stage + ": " + msg_; }

 private:
  std::string msg_;
};

/// Input could not be turned into a valid Dataset.
class DataError : public Error {
 public:
  enum class Kind { MalformedRow, InvariantViolation, EmptyDataset, UnknownColumn, MissingColumn, Io };

  DataError(Kind kind, const std::string& msg) : Error(msg), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// A matrix that must be inverted is (numerically) singular.
class SingularMatrix : public Error {
 public:
  using Error::Error;
};

/// An iterative solver hit its iteration cap.
class NoConvergence : public Error {
 public:
  using Error::Error;
};

/// Nobody is at risk at a time where a risk-set average is required.
class EmptyRiskSet : public Error {
 public:
  using Error::Error;
};

/// Argument outside the domain of a transform or distribution.
class DomainError : public Error {
 public:
  using Error::Error;
};

}  // namespace clustcr
