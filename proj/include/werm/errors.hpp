// Exception hierarchy shared by every werm module.
#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace werm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed domain value (bad change point vector, invalid label sequence, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Infeasible or inconsistent configuration (min_gap too large, unknown key, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite input or a numerical routine that could not produce a value.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Iterative routine ran out of iterations. Carries the best iterate and the
/// per-iteration update norms so callers can inspect what happened.
class ConvergenceError : public NumericError {
 public:
  ConvergenceError(const std::string& what, std::vector<double> best_iterate,
                   std::vector<double> trajectory = {})
      : NumericError(what),
        best_iterate_(std::move(best_iterate)),
        trajectory_(std::move(trajectory)) {}

  const std::vector<double>& best_iterate() const noexcept { return best_iterate_; }
  const std::vector<double>& trajectory() const noexcept { return trajectory_; }

 private:
  std::vector<double> best_iterate_;
  std::vector<double> trajectory_;
};

/// The estimator (or the fixed point characterizing it) most likely does not
/// exist for these parameters, e.g. separable logistic data.
class ExistenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace werm
