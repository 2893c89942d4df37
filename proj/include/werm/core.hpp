// Domain data model: datasets, signal configurations, change point vectors,
// GLM links, noise laws and the Hausdorff localization metric.
//
// Indexing convention: samples are numbered 1..n in the public interface. A
// change point eta_l is the first index of a new segment, so for n = 5 the
// vector eta = [3] means samples 1,2 use signal 1 and samples 3,4,5 use
// signal 2. Valid change points satisfy 1 < eta_1 < ... < eta_m <= n.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/random/laplace_distribution.hpp>
#include <boost/random/student_t_distribution.hpp>

#include "werm/errors.hpp"
#include "werm/rng.hpp"

namespace werm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Change points and signal configurations
// ---------------------------------------------------------------------------

class ChangePoints {
 public:
  ChangePoints() = default;

  /// Throws ValidationError unless 1 < eta_1 < ... < eta_m <= n.
  ChangePoints(std::vector<int> eta, int n) : eta_(std::move(eta)), n_(n) {
    if (n_ < 1) throw ValidationError("ChangePoints: n must be >= 1");
    for (std::size_t k = 0; k < eta_.size(); ++k) {
      if (eta_[k] <= 1 || eta_[k] > n_)
        throw ValidationError("ChangePoints: entry " + std::to_string(eta_[k]) +
                              " outside (1, n]");
      if (k > 0 && eta_[k] <= eta_[k - 1])
        throw ValidationError("ChangePoints: entries must be strictly increasing");
    }
  }

  const std::vector<int>& eta() const noexcept { return eta_; }
  int n() const noexcept { return n_; }
  std::size_t size() const noexcept { return eta_.size(); }
  bool empty() const noexcept { return eta_.empty(); }
  int num_segments() const noexcept { return static_cast<int>(eta_.size()) + 1; }

  friend bool operator==(const ChangePoints&, const ChangePoints&) = default;

 private:
  std::vector<int> eta_;
  int n_ = 0;
};

/// psi_i in {1..L}: label of the signal generating sample i. Labels start at 1
/// and increase by at most one between neighbours.
class SignalConfig {
 public:
  SignalConfig() = default;

  explicit SignalConfig(std::vector<int> psi) : psi_(std::move(psi)) {
    if (psi_.empty()) throw ValidationError("SignalConfig: empty label vector");
    if (psi_.front() != 1) throw ValidationError("SignalConfig: psi_1 must equal 1");
    for (std::size_t i = 1; i < psi_.size(); ++i) {
      const int step = psi_[i] - psi_[i - 1];
      if (step != 0 && step != 1)
        throw ValidationError("SignalConfig: labels must be consecutive and nondecreasing");
    }
  }

  const std::vector<int>& psi() const noexcept { return psi_; }
  int n() const noexcept { return static_cast<int>(psi_.size()); }
  int num_signals() const noexcept { return psi_.empty() ? 0 : psi_.back(); }
  /// 1-based access.
  int operator()(int i) const { return psi_[static_cast<std::size_t>(i - 1)]; }

  friend bool operator==(const SignalConfig&, const SignalConfig&) = default;

 private:
  std::vector<int> psi_;
};

inline SignalConfig config_from_changepoints(const ChangePoints& cp) {
  std::vector<int> psi(static_cast<std::size_t>(cp.n()));
  int label = 1;
  std::size_t next = 0;
  for (int i = 1; i <= cp.n(); ++i) {
    while (next < cp.size() && cp.eta()[next] == i) {
      ++label;
      ++next;
    }
    psi[static_cast<std::size_t>(i - 1)] = label;
  }
  return SignalConfig(std::move(psi));
}

inline SignalConfig config_from_changepoints(const std::vector<int>& eta, int n) {
  return config_from_changepoints(ChangePoints(eta, n));
}

inline ChangePoints changepoints_from_config(const SignalConfig& cfg) {
  std::vector<int> eta;
  const auto& psi = cfg.psi();
  for (std::size_t i = 1; i < psi.size(); ++i)
    if (psi[i] != psi[i - 1]) eta.push_back(static_cast<int>(i) + 1);
  return ChangePoints(std::move(eta), cfg.n());
}

/// Change points at fractions alpha of n: eta = floor(alpha * n) + 1.
inline ChangePoints changepoints_from_fractions(const std::vector<double>& fractions, int n) {
  std::vector<int> eta;
  eta.reserve(fractions.size());
  for (double a : fractions) {
    if (!(a > 0.0 && a < 1.0))
      throw ValidationError("change point fractions must lie strictly inside (0, 1)");
    eta.push_back(static_cast<int>(std::floor(a * n)) + 1);
  }
  return ChangePoints(std::move(eta), n);
}

// ---------------------------------------------------------------------------
// Hausdorff distance
// ---------------------------------------------------------------------------

/// d_H(a, b). Returns 0 when both sets are empty and std::nullopt when exactly
/// one is empty (such estimates are skipped when averaging errors).
inline std::optional<double> hausdorff(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.empty() && b.empty()) return 0.0;
  if (a.empty() || b.empty()) return std::nullopt;
  auto directed = [](const std::vector<int>& from, const std::vector<int>& to) {
    double worst = 0.0;
    for (int x : from) {
      double best = std::numeric_limits<double>::infinity();
      for (int y : to) best = std::min(best, std::abs(static_cast<double>(x - y)));
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::max(directed(a, b), directed(b, a));
}

// ---------------------------------------------------------------------------
// Noise laws and GLM links
// ---------------------------------------------------------------------------

struct NoiseSpec {
  enum class Kind { gaussian, student_t, laplace, uniform01 };
  Kind kind = Kind::gaussian;
  double scale = 1.0;  // sd for gaussian, scale otherwise
  double df = 4.0;     // student_t only

  static NoiseSpec gaussian(double sd) { return {Kind::gaussian, sd, 0.0}; }
  static NoiseSpec student_t(double df, double scale = 1.0) { return {Kind::student_t, scale, df}; }
  static NoiseSpec laplace(double scale) { return {Kind::laplace, scale, 0.0}; }
  static NoiseSpec uniform01() { return {Kind::uniform01, 1.0, 0.0}; }

  double sample(Stream& s) const {
    switch (kind) {
      case Kind::gaussian:
        return scale * s.normal();
      case Kind::student_t:
        return scale * boost::random::student_t_distribution<double>(df)(s.engine());
      case Kind::laplace:
        return boost::random::laplace_distribution<double>(0.0, scale)(s.engine());
      case Kind::uniform01:
        return s.uniform();
    }
    return 0.0;
  }

  /// Second moment E[eps^2]; every additive law here is centred.
  double variance() const {
    switch (kind) {
      case Kind::gaussian:
        return scale * scale;
      case Kind::student_t:
        if (df <= 2.0) return std::numeric_limits<double>::infinity();
        return scale * scale * df / (df - 2.0);
      case Kind::laplace:
        return 2.0 * scale * scale;
      case Kind::uniform01:
        return 1.0 / 3.0;
    }
    return 0.0;
  }
};

inline double log1pexp(double z) noexcept {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Observation model y = q(z, eps).
struct GlmModel {
  enum class Kind { linear, logistic };
  Kind kind = Kind::linear;

  static GlmModel linear() { return {Kind::linear}; }
  static GlmModel logistic() { return {Kind::logistic}; }

  /// linear: z + v; logistic: 1{v <= zeta'(z)}.
  double q(double z, double v) const noexcept {
    return kind == Kind::linear ? z + v : (v <= sigmoid(z) ? 1.0 : 0.0);
  }

  /// Conditional mean E[y | z]; used for held-out prediction.
  double mean(double z) const noexcept { return kind == Kind::linear ? z : sigmoid(z); }

  /// d q / d z where it exists (linear only).
  bool differentiable() const noexcept { return kind == Kind::linear; }

  NoiseSpec default_noise() const {
    return kind == Kind::logistic ? NoiseSpec::uniform01() : NoiseSpec::gaussian(1.0);
  }
};

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct Truth {
  std::vector<int> eta;            // true change points (1-based)
  std::vector<int> psi;            // true labels, length n (may be empty)
  MatrixXd b;                      // p x L* signals (may be empty)
  std::optional<double> noise_sd;  // meaningful for additive noise only
  MatrixXd gamma;                  // B' Sigma B / n for the generating design (may be empty)
};

struct Dataset {
  MatrixXd x;  // n x p
  VectorXd y;  // n
  std::optional<Truth> meta;

  Dataset() = default;
  Dataset(MatrixXd x_, VectorXd y_, std::optional<Truth> meta_ = std::nullopt)
      : x(std::move(x_)), y(std::move(y_)), meta(std::move(meta_)) {
    validate();
  }

  int n() const noexcept { return static_cast<int>(x.rows()); }
  int p() const noexcept { return static_cast<int>(x.cols()); }

  void validate() const {
    if (x.rows() < 1 || x.cols() < 1) throw ValidationError("Dataset: need n >= 1 and p >= 1");
    if (y.size() != x.rows()) throw ValidationError("Dataset: y length must equal rows of x");
    if (meta && !meta->psi.empty()) {
      if (static_cast<int>(meta->psi.size()) != n())
        throw ValidationError("Dataset: truth psi length must equal n");
      SignalConfig check(meta->psi);
      (void)check;
    }
    if (meta && !meta->eta.empty()) ChangePoints check(meta->eta, n());
  }

  /// Rows selected by 0-based index, metadata dropped.
  Dataset subset(const std::vector<int>& rows) const {
    MatrixXd xs(static_cast<Eigen::Index>(rows.size()), x.cols());
    VectorXd ys(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      xs.row(static_cast<Eigen::Index>(k)) = x.row(rows[k]);
      ys(static_cast<Eigen::Index>(k)) = y(rows[k]);
    }
    return Dataset(std::move(xs), std::move(ys));
  }
};

}  // namespace werm
