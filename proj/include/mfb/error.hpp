#pragma once

#include <stdexcept>
#include <string>

namespace mfb {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on the arguments of an operation was violated.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// The pair (u, W) does not satisfy the admissibility invariants.
class AdmissibilityError : public Error {
 public:
  using Error::Error;
};

/// An iterative linear solve hit its iteration cap.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, double residual, int iterations)
      : Error(what), residual_(residual), iterations_(iterations) {}

  double residual() const noexcept { return residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

/// A run configuration failed validation; key() names the offending entry.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(key + ": " + what), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace mfb
