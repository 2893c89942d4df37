// Base losses M(u, v) (u = linear predictor, v = response), their derivatives,
// and the scalar proximal operator prox_{rho M(., v)}(z).
//
// The squared loss carries the factor 1/2, so Huber is its exact extension.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "werm/core.hpp"
#include "werm/errors.hpp"

namespace werm {

struct Loss {
  enum class Kind { squared, huber, logistic };
  Kind kind = Kind::squared;
  double tau = 1.345;  // huber only

  static Loss squared() { return {Kind::squared, 0.0}; }
  static Loss huber(double tau = 1.345) {
    if (!(tau > 0.0)) throw ConfigError("huber: tau must be positive");
    return {Kind::huber, tau};
  }
  static Loss logistic() { return {Kind::logistic, 0.0}; }

  std::string name() const {
    switch (kind) {
      case Kind::squared:
        return "squared";
      case Kind::huber:
        return "huber";
      case Kind::logistic:
        return "logistic";
    }
    return "?";
  }

  double value(double u, double v) const noexcept {
    switch (kind) {
      case Kind::squared:
        return 0.5 * (u - v) * (u - v);
      case Kind::huber: {
        const double r = std::abs(u - v);
        return r <= tau ? 0.5 * r * r : tau * (r - 0.5 * tau);
      }
      case Kind::logistic:
        return log1pexp(u) - v * u;
    }
    return 0.0;
  }

  /// dM/du
  double d1(double u, double v) const noexcept {
    switch (kind) {
      case Kind::squared:
        return u - v;
      case Kind::huber:
        return std::clamp(u - v, -tau, tau);
      case Kind::logistic:
        return sigmoid(u) - v;
    }
    return 0.0;
  }

  /// d2M/du2. Huber uses the left limit at the kink.
  double d2(double u, double v) const noexcept {
    switch (kind) {
      case Kind::squared:
        return 1.0;
      case Kind::huber:
        return std::abs(u - v) <= tau ? 1.0 : 0.0;
      case Kind::logistic: {
        const double s = sigmoid(u);
        return s * (1.0 - s);
      }
    }
    return 0.0;
  }

  double d3(double u, double v) const noexcept {
    (void)v;
    if (kind != Kind::logistic) return 0.0;
    const double s = sigmoid(u);
    return s * (1.0 - s) * (1.0 - 2.0 * s);
  }

  /// d/dv of dM/du.
  double d12(double u, double v) const noexcept {
    if (kind == Kind::huber) return -d2(u, v);
    return -1.0;
  }

  /// d/dv of d2M/du2 (zero almost everywhere for all supported losses).
  double d22(double, double) const noexcept { return 0.0; }

  /// Upper bound on M''.
  double curvature_bound() const noexcept { return kind == Kind::logistic ? 0.25 : 1.0; }
};

namespace detail {

inline void require_finite(double rho, double v, double z, const char* who) {
  if (!std::isfinite(rho) || !std::isfinite(v) || !std::isfinite(z))
    throw NumericError(std::string(who) + ": non-finite input");
  if (rho < 0.0) throw NumericError(std::string(who) + ": rho must be nonnegative");
}

// Root of rho*(sigmoid(t) - v) + t - z on [z - rho*(1-v), z + rho*v] for v in [0,1].
inline double logistic_prox(double rho, double v, double z) {
  double lo = z - rho * std::max(0.0, 1.0 - v);
  double hi = z + rho * std::max(0.0, v);
  if (v < 0.0 || v > 1.0) {
    lo = z - rho * (1.0 + std::abs(v));
    hi = z + rho * (1.0 + std::abs(v));
  }
  auto g = [&](double t) { return rho * (sigmoid(t) - v) + t - z; };
  double t = std::clamp(z - rho * (sigmoid(z) - v) / (1.0 + 0.25 * rho), lo, hi);
  const double eps = 1e-12 * (1.0 + std::abs(z));
  for (int it = 0; it < 100; ++it) {
    const double gt = g(t);
    if (std::abs(gt) <= 1e-13 * (1.0 + std::abs(z))) return t;
    if (gt > 0.0)
      hi = t;
    else
      lo = t;
    const double s = sigmoid(t);
    double next = t - gt / (1.0 + rho * s * (1.0 - s));
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (hi - lo <= eps) return next;
    t = next;
  }
  return t;
}

}  // namespace detail

/// argmin_t { rho * M(t, v) + (t - z)^2 / 2 }.
inline double prox(const Loss& loss, double rho, double v, double z) {
  detail::require_finite(rho, v, z, "prox");
  if (rho == 0.0) return z;
  switch (loss.kind) {
    case Loss::Kind::squared:
      return (z + rho * v) / (1.0 + rho);
    case Loss::Kind::huber: {
      const double r = z - v;
      if (std::abs(r) <= loss.tau * (1.0 + rho)) return (z + rho * v) / (1.0 + rho);
      return z - rho * loss.tau * (r > 0.0 ? 1.0 : -1.0);
    }
    case Loss::Kind::logistic:
      return detail::logistic_prox(rho, v, z);
  }
  return z;
}

/// d prox / dz = 1 / (1 + rho M''(prox, v)).
inline double prox_derivative(const Loss& loss, double rho, double v, double z) {
  const double p = prox(loss, rho, v, z);
  return 1.0 / (1.0 + rho * loss.d2(p, v));
}

/// d prox / d rho = -M'(prox, v) / (1 + rho M''(prox, v)).
inline double prox_db(const Loss& loss, double rho, double v, double z) {
  const double p = prox(loss, rho, v, z);
  return -loss.d1(p, v) / (1.0 + rho * loss.d2(p, v));
}

}  // namespace werm
