// Change point priors and the per-sample weights pi_i^(l) they induce, plus
// the continuum limits Phi^(l)(t).
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "werm/core.hpp"
#include "werm/errors.hpp"

namespace werm {

inline double log_binom(double n, double k) {
  if (k < 0.0 || k > n || n < 0.0) return -std::numeric_limits<double>::infinity();
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

inline double binom_ratio(double a1, double k1, double a2, double k2, double a3, double k3) {
  const double l = log_binom(a1, k1) + log_binom(a2, k2) - log_binom(a3, k3);
  return std::isfinite(l) ? std::exp(l) : 0.0;
}

/// n x L matrix of nonnegative weights whose rows sum to one.
struct WeightMatrix {
  Eigen::MatrixXd pi;

  int n() const noexcept { return static_cast<int>(pi.rows()); }
  int L() const noexcept { return static_cast<int>(pi.cols()); }
  Eigen::VectorXd column(int ell) const { return pi.col(ell - 1); }

  static WeightMatrix ones(int n) { return {Eigen::MatrixXd::Ones(n, 1)}; }
};

struct ChangePointPrior {
  enum class Kind { exact_uniform, atmost_uniform, spaced_uniform, alternating, custom };
  Kind kind = Kind::exact_uniform;
  int L = 1;                            // number of segments (at most L for atmost_uniform)
  int min_gap = 1;                      // spaced_uniform
  std::optional<double> min_gap_frac;   // spaced_uniform: gap as a fraction of n
  std::vector<std::pair<std::vector<int>, double>> table;  // custom: (eta, probability)
  int table_n = 0;                                         // custom: n the table refers to

  static ChangePointPrior exact_uniform(int L) { return make(Kind::exact_uniform, L); }
  static ChangePointPrior atmost_uniform(int L) { return make(Kind::atmost_uniform, L); }
  static ChangePointPrior spaced_uniform(int L, int min_gap) {
    auto p = make(Kind::spaced_uniform, L);
    if (min_gap < 1) throw ConfigError("spaced_uniform: min_gap must be >= 1");
    p.min_gap = min_gap;
    return p;
  }
  static ChangePointPrior spaced_uniform_frac(int L, double frac) {
    if (!(frac > 0.0 && frac < 1.0)) throw ConfigError("spaced_uniform: min_gap_frac must be in (0,1)");
    auto p = make(Kind::spaced_uniform, L);
    p.min_gap_frac = frac;
    return p;
  }
  /// Two signals, exactly two change points, segment signals 1, 2, 1.
  static ChangePointPrior alternating() { return make(Kind::alternating, 3); }
  static ChangePointPrior custom(std::vector<std::pair<std::vector<int>, double>> table, int n) {
    if (table.empty()) throw ConfigError("custom prior: empty table");
    ChangePointPrior p;
    p.kind = Kind::custom;
    p.table_n = n;
    double total = 0.0;
    std::size_t max_cp = 0;
    for (auto& [eta, pr] : table) {
      ChangePoints check(eta, n);
      if (!(pr >= 0.0)) throw ConfigError("custom prior: negative probability");
      total += pr;
      max_cp = std::max(max_cp, eta.size());
    }
    if (!(total > 0.0)) throw ConfigError("custom prior: probabilities sum to zero");
    for (auto& e : table) e.second /= total;
    p.table = std::move(table);
    p.L = static_cast<int>(max_cp) + 1;
    return p;
  }

  std::string name() const {
    switch (kind) {
      case Kind::exact_uniform:
        return "exact_uniform";
      case Kind::atmost_uniform:
        return "atmost_uniform";
      case Kind::spaced_uniform:
        return "spaced_uniform";
      case Kind::alternating:
        return "alternating";
      case Kind::custom:
        return "custom";
    }
    return "?";
  }

  /// Number of weight columns (distinct signals).
  int num_columns() const noexcept { return kind == Kind::alternating ? 2 : L; }

  /// Signal column (1-based) used by each of the `segments` consecutive segments.
  std::vector<int> segment_columns(int segments) const {
    std::vector<int> cols(static_cast<std::size_t>(segments));
    for (int s = 0; s < segments; ++s) cols[static_cast<std::size_t>(s)] = s + 1;
    if (kind == Kind::alternating && segments == 3) cols = {1, 2, 1};
    return cols;
  }

  int gap_for(int n) const {
    if (kind != Kind::spaced_uniform) return 1;
    if (min_gap_frac) return std::max(1, static_cast<int>(std::floor(*min_gap_frac * n)));
    return min_gap;
  }

  /// Minimum segment lengths (first, middle, last) of the support at size n.
  std::array<int, 3> segment_minimums(int n) const {
    if (kind == Kind::spaced_uniform) {
      const int g = gap_for(n);
      return {g, g, g + 1};
    }
    return {1, 1, 1};
  }

  /// Same prior family conditioned on exactly `segments` segments.
  ChangePointPrior with_segments(int segments) const {
    ChangePointPrior p = *this;
    if (kind == Kind::atmost_uniform || kind == Kind::exact_uniform || kind == Kind::custom) {
      p.kind = Kind::exact_uniform;
      p.table.clear();
    }
    p.L = segments;
    return p;
  }

  /// log pi(eta); -inf outside the support.
  double log_prob(const ChangePoints& cp) const;

 private:
  static ChangePointPrior make(Kind k, int L) {
    if (L < 1) throw ConfigError("prior: L must be >= 1");
    ChangePointPrior p;
    p.kind = k;
    p.L = L;
    return p;
  }
};

namespace detail {

// log of the number of compositions of `total` into `parts` parts whose
// minimums sum to `min_sum`.
inline double log_compositions(double total, int parts, double min_sum) {
  if (parts == 0) return total == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  const double free = total - min_sum;
  if (free < 0.0) return -std::numeric_limits<double>::infinity();
  return log_binom(free + parts - 1, parts - 1);
}

inline double min_sum(const std::array<int, 3>& m, int first_seg, int count, int segments) {
  double s = 0.0;
  for (int k = first_seg; k < first_seg + count; ++k) {
    if (k == segments - 1)
      s += m[2];
    else if (k == 0)
      s += m[0];
    else
      s += m[1];
  }
  return s;
}

// Segment-label marginals for eta uniform over all configurations with
// `segments` segments whose lengths respect the given minimums. Uses the
// laws of the individual change points, pi^(l) = F_{l-1} - F_l.
inline Eigen::MatrixXd composition_marginals(int n, int segments, const std::array<int, 3>& m) {
  Eigen::MatrixXd pi = Eigen::MatrixXd::Zero(n, segments);
  if (min_sum(m, 0, segments, segments) > n)
    throw ConfigError("prior: no admissible configuration (min_gap too large for n)");
  if (segments == 1) {
    pi.col(0).setOnes();
    return pi;
  }
  // cdf(j, i) = P(eta_j <= i), j = 1..segments-1, i = 1..n
  Eigen::MatrixXd cdf = Eigen::MatrixXd::Zero(segments + 1, n + 1);
  cdf.row(0).setOnes();
  for (int j = 1; j < segments; ++j) {
    std::vector<double> logw(static_cast<std::size_t>(n + 1), -std::numeric_limits<double>::infinity());
    double mx = -std::numeric_limits<double>::infinity();
    const double left_min = min_sum(m, 0, j, segments);
    const double right_min = min_sum(m, j, segments - j, segments);
    for (int x = 2; x <= n; ++x) {
      const double l = log_compositions(x - 1, j, left_min) +
                       log_compositions(n - x + 1, segments - j, right_min);
      logw[static_cast<std::size_t>(x)] = l;
      mx = std::max(mx, l);
    }
    double total = 0.0;
    std::vector<double> w(static_cast<std::size_t>(n + 1), 0.0);
    for (int x = 2; x <= n; ++x) {
      const double l = logw[static_cast<std::size_t>(x)];
      w[static_cast<std::size_t>(x)] = std::isfinite(l) ? std::exp(l - mx) : 0.0;
      total += w[static_cast<std::size_t>(x)];
    }
    double acc = 0.0;
    for (int i = 1; i <= n; ++i) {
      acc += w[static_cast<std::size_t>(i)];
      cdf(j, i) = std::min(1.0, acc / total);
    }
    cdf(j, n) = 1.0;
  }
  for (int i = 1; i <= n; ++i)
    for (int ell = 1; ell <= segments; ++ell)
      pi(i - 1, ell - 1) = std::max(0.0, cdf(ell - 1, i) - cdf(ell, i));
  return pi;
}

inline double exact_uniform_entry(int n, int L, int i, int ell) {
  return binom_ratio(i - 1, ell - 1, n - i, L - ell, n - 1, L - 1);
}

inline double atmost_uniform_entry(int n, int L, int i, int ell) {
  double s = 0.0;
  for (int k = ell; k <= L; ++k) s += binom_ratio(i - 1, ell - 1, n - i, k - ell, n - 1, k - 1);
  return s / L;
}

}  // namespace detail

/// Exact marginals pi_i^(l) = P(psi_i = l) under the prior, as an n x L matrix.
inline WeightMatrix marginal_weights(const ChangePointPrior& prior, int n) {
  using K = ChangePointPrior::Kind;
  if (n < 1) throw ConfigError("marginal_weights: n must be >= 1");
  const int L = prior.L;
  if (prior.kind != K::custom && n < L) throw ConfigError("marginal_weights: need n >= L");
  Eigen::MatrixXd pi;
  switch (prior.kind) {
    case K::exact_uniform:
      pi.resize(n, L);
      for (int i = 1; i <= n; ++i)
        for (int ell = 1; ell <= L; ++ell) pi(i - 1, ell - 1) = detail::exact_uniform_entry(n, L, i, ell);
      break;
    case K::atmost_uniform:
      pi.resize(n, L);
      for (int i = 1; i <= n; ++i)
        for (int ell = 1; ell <= L; ++ell) pi(i - 1, ell - 1) = detail::atmost_uniform_entry(n, L, i, ell);
      break;
    case K::spaced_uniform:
      pi = detail::composition_marginals(n, L, prior.segment_minimums(n));
      break;
    case K::alternating: {
      pi.resize(n, 2);
      for (int i = 1; i <= n; ++i) {
        const double mid = detail::exact_uniform_entry(n, 3, i, 2);
        pi(i - 1, 1) = mid;
        pi(i - 1, 0) = detail::exact_uniform_entry(n, 3, i, 1) + detail::exact_uniform_entry(n, 3, i, 3);
      }
      break;
    }
    case K::custom: {
      if (n != prior.table_n) throw ConfigError("custom prior: table was built for a different n");
      pi = Eigen::MatrixXd::Zero(n, L);
      for (const auto& [eta, pr] : prior.table) {
        const auto psi = config_from_changepoints(eta, n);
        for (int i = 1; i <= n; ++i) pi(i - 1, psi(i) - 1) += pr;
      }
      break;
    }
  }
  return {std::move(pi)};
}

/// Continuum limit Phi^(l)(t) of pi_{floor(nt)+1}^(l).
inline double limit_weights(const ChangePointPrior& prior, double t, int ell) {
  using K = ChangePointPrior::Kind;
  t = std::clamp(t, 0.0, 1.0);
  auto bernstein = [](int L, int l, double s) {
    return std::exp(log_binom(L - 1, l - 1)) * std::pow(s, l - 1) * std::pow(1.0 - s, L - l);
  };
  switch (prior.kind) {
    case K::exact_uniform:
      return bernstein(prior.L, ell, t);
    case K::atmost_uniform: {
      double s = 0.0;
      for (int k = ell; k <= prior.L; ++k) s += bernstein(k, ell, t);
      return s / prior.L;
    }
    case K::alternating:
      return ell == 2 ? bernstein(3, 2, t) : bernstein(3, 1, t) + bernstein(3, 3, t);
    case K::spaced_uniform: {
      constexpr int big = 100000;
      const auto w = marginal_weights(prior, big);
      const int row = std::min(big - 1, static_cast<int>(std::floor(t * big)));
      return w.pi(row, ell - 1);
    }
    case K::custom: {
      const int n = prior.table_n;
      const auto w = marginal_weights(prior, n);
      const int row = std::min(n - 1, static_cast<int>(std::floor(t * n)));
      return w.pi(row, ell - 1);
    }
  }
  return 0.0;
}

/// Limit weights evaluated at `nodes` (fractions in [0,1]) for every column.
inline Eigen::MatrixXd limit_weight_table(const ChangePointPrior& prior, const std::vector<double>& nodes) {
  using K = ChangePointPrior::Kind;
  const int L = prior.num_columns();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(nodes.size()), L);
  if (prior.kind == K::spaced_uniform || prior.kind == K::custom) {
    const int big = prior.kind == K::custom ? prior.table_n : 100000;
    const auto w = marginal_weights(prior, big);
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const int row = std::min(big - 1, static_cast<int>(std::floor(std::clamp(nodes[k], 0.0, 1.0) * big)));
      out.row(static_cast<Eigen::Index>(k)) = w.pi.row(row);
    }
    return out;
  }
  for (std::size_t k = 0; k < nodes.size(); ++k)
    for (int ell = 1; ell <= L; ++ell) out(static_cast<Eigen::Index>(k), ell - 1) = limit_weights(prior, nodes[k], ell);
  return out;
}

inline double ChangePointPrior::log_prob(const ChangePoints& cp) const {
  const double ninf = -std::numeric_limits<double>::infinity();
  const int n = cp.n();
  const int k = static_cast<int>(cp.size());
  switch (kind) {
    case Kind::exact_uniform:
      return k == L - 1 ? -log_binom(n - 1, k) : ninf;
    case Kind::alternating:
      return k == 2 ? -log_binom(n - 1, 2) : ninf;
    case Kind::atmost_uniform:
      return k <= L - 1 ? -std::log(static_cast<double>(L)) - log_binom(n - 1, k) : ninf;
    case Kind::spaced_uniform: {
      if (k != L - 1) return ninf;
      const auto m = segment_minimums(n);
      int prev = 1;
      for (int s = 0; s < L; ++s) {
        const int next = s < k ? cp.eta()[static_cast<std::size_t>(s)] : n + 1;
        const int need = s == L - 1 ? m[2] : (s == 0 ? m[0] : m[1]);
        if (next - prev < need) return ninf;
        prev = next;
      }
      return -detail::log_compositions(n, L, detail::min_sum(m, 0, L, L));
    }
    case Kind::custom:
      for (const auto& [eta, pr] : table)
        if (eta == cp.eta()) return pr > 0.0 ? std::log(pr) : ninf;
      return ninf;
  }
  return ninf;
}

}  // namespace werm
