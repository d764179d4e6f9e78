#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace elliptic {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes of vectors or matrices do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside the domain of the operation (e.g. inverting a
/// squash at a point outside its image, a nonpositive mixing value).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A Gram matrix could not be factorized even at the largest jitter level.
class DegenerateKernelError : public Error {
 public:
  using Error::Error;
};

/// A computation produced a non-finite value or failed to converge.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Invalid model or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace elliptic

namespace elliptic {

/// An iterative fit produced a non-finite objective; carries the objective
/// values recorded up to that point.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, std::vector<double> trace)
      : NumericalError(what), trace_(std::move(trace)) {}
  [[nodiscard]] const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

}  // namespace elliptic
