// Fixed-point system (Lambda, K, b) characterizing the weighted ERM estimates
// in the proportional regime, and the performance predictions derived from it.
//
// For each column l the diagonal triple (lambda^(l), b^(l), kappa_ll) solves
//   1 - 1/delta = mean_i E[(1 + b sM_i'')^{-1}]
//   0           = mean_i E[Z_i sM_i']
//   kappa_ll    = delta b^2 mean_i E[(sM_i')^2]
// with sM_i' = pi_i M'(prox_{b pi_i M(., y_i)}(Z_i lambda + w), y_i),
// Z_i ~ N(0, Gamma), w ~ N(0, kappa_ll), y_i = q(Z_{i, psi_i}, eps).
// Off-diagonal kappa_{l,l'} = delta b b' mean_i E[sM_i'^(l) sM_i'^(l')] with
// (w, w') jointly Gaussian with covariance given by kappa itself.
//
// The mean over i runs over "nodes": rows of a finite weight matrix, or
// midpoint cells of [0, 1] for limit weights. Expectations are Monte Carlo
// over a fixed bank of draws (common random numbers, antithetic in w), or
// closed form for the squared loss with the linear model.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/tools/roots.hpp>
#include <boost/math/tools/toms748_solve.hpp>

#include "werm/core.hpp"
#include "werm/errors.hpp"
#include "werm/losses.hpp"
#include "werm/rng.hpp"
#include "werm/weights.hpp"

namespace werm {

struct SEProblem {
  enum class Expectation { automatic, monte_carlo, analytic };

  double delta = 2.0;
  MatrixXd gamma;  // d x d, d = number of true signals
  Loss loss;
  GlmModel model;
  NoiseSpec noise = NoiseSpec::gaussian(1.0);

  // True segmentation: interior boundaries as fractions and signal (1..d) per segment.
  std::vector<double> alphas;
  std::vector<int> segment_labels;

  // Either limit weights from a prior (evaluated on n_eval cells) or a finite
  // weight matrix with the true signal label of each row.
  std::optional<ChangePointPrior> prior;
  int n_eval = 512;
  std::optional<WeightMatrix> weights;
  std::vector<int> psi;  // optional explicit row labels for `weights`

  int mc_samples = 200000;
  std::uint64_t seed = 0;
  double damping = 0.5;
  int max_iter = 200;
  double tol = 1e-4;
  Expectation expectation = Expectation::automatic;

  int d() const noexcept { return static_cast<int>(gamma.rows()); }
  int L() const {
    if (weights) return weights->L();
    if (prior) return prior->num_columns();
    return 1;
  }

  bool analytic() const {
    const bool ok = loss.kind == Loss::Kind::squared && model.kind == GlmModel::Kind::linear &&
                    std::isfinite(noise.variance());
    if (expectation == Expectation::analytic && !ok)
      throw ConfigError("se: analytic expectations need squared loss, linear model and finite noise variance");
    return expectation == Expectation::analytic || (expectation == Expectation::automatic && ok);
  }

  void validate() const {
    if (!(delta > 1.0)) throw ConfigError("se: delta must exceed 1");
    if (gamma.rows() < 1 || gamma.rows() != gamma.cols()) throw ConfigError("se: gamma must be square");
    if (!gamma.isApprox(gamma.transpose(), 1e-10)) throw ConfigError("se: gamma must be symmetric");
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(gamma);
    if (es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, es.eigenvalues().maxCoeff()))
      throw ConfigError("se: gamma must be positive semidefinite");
    if (!weights && !prior) throw ConfigError("se: need either weights or prior");
    for (std::size_t k = 0; k < alphas.size(); ++k) {
      if (!(alphas[k] > 0.0 && alphas[k] < 1.0)) throw ConfigError("se: alphas must lie in (0,1)");
      if (k > 0 && !(alphas[k] > alphas[k - 1])) throw ConfigError("se: alphas must be increasing");
    }
    if (!segment_labels.empty() && segment_labels.size() != alphas.size() + 1)
      throw ConfigError("se: segment_labels must have one entry per segment");
    for (int s : segment_labels)
      if (s < 1 || s > d()) throw ConfigError("se: segment label outside 1..d");
    if (segment_labels.empty() && static_cast<int>(alphas.size()) + 1 > d())
      throw ConfigError("se: more segments than signals; give segment_labels");
    if (weights && !psi.empty() && static_cast<int>(psi.size()) != weights->n())
      throw ConfigError("se: psi length must equal weight rows");
    if (mc_samples < 2) throw ConfigError("se: mc_samples must be >= 2");
    if (!(damping > 0.0 && damping <= 1.0)) throw ConfigError("se: damping must be in (0,1]");
  }

  int signal_of_segment(int seg) const {
    return segment_labels.empty() ? seg + 1 : segment_labels[static_cast<std::size_t>(seg)];
  }
};

struct SEParams {
  MatrixXd lambda;  // d x L, column l is lambda^(l)
  MatrixXd kappa;   // L x L
  VectorXd b;       // L
  // Residuals at the solution.
  VectorXd b_residual;       // A(b) - (1 - 1/delta)
  VectorXd fp_residual;      // max-norm of the last undamped (lambda, kappa) update
  MatrixXd kappa_residual;   // |kappa - rhs(kappa)|
  VectorXd stein_residual;   // |mean E[Z sM']|
  VectorXd stein_stderr;
  MatrixXd kappa_stderr;     // Monte Carlo standard error of the kappa right-hand side
  std::vector<int> iterations;
};

namespace detail {

struct SENodes {
  MatrixXd pi;           // N x L
  std::vector<int> sig;  // 0-based true signal per node
  VectorXd mass;         // sums to one
};

inline int signal_at_fraction(const SEProblem& pr, double t) {
  int seg = 0;
  while (seg < static_cast<int>(pr.alphas.size()) && t >= pr.alphas[static_cast<std::size_t>(seg)]) ++seg;
  return pr.signal_of_segment(seg) - 1;
}

inline SENodes build_nodes(const SEProblem& pr) {
  SENodes nd;
  if (pr.weights) {
    const int n = pr.weights->n();
    nd.pi = pr.weights->pi;
    nd.sig.resize(static_cast<std::size_t>(n));
    if (!pr.psi.empty()) {
      for (int i = 0; i < n; ++i) nd.sig[static_cast<std::size_t>(i)] = pr.psi[static_cast<std::size_t>(i)] - 1;
    } else {
      const auto cfg = config_from_changepoints(changepoints_from_fractions(pr.alphas, n));
      for (int i = 1; i <= n; ++i) nd.sig[static_cast<std::size_t>(i - 1)] = pr.signal_of_segment(cfg(i) - 1) - 1;
    }
    nd.mass = VectorXd::Constant(n, 1.0 / n);
  } else {
    const int N = pr.n_eval;
    std::vector<double> t(static_cast<std::size_t>(N));
    for (int k = 0; k < N; ++k) t[static_cast<std::size_t>(k)] = (k + 0.5) / N;
    nd.pi = limit_weight_table(*pr.prior, t);
    nd.sig.resize(static_cast<std::size_t>(N));
    for (int k = 0; k < N; ++k) nd.sig[static_cast<std::size_t>(k)] = signal_at_fraction(pr, t[static_cast<std::size_t>(k)]);
    nd.mass = VectorXd::Constant(N, 1.0 / N);
  }
  for (int s : nd.sig)
    if (s < 0 || s >= pr.d()) throw ConfigError("se: node signal label outside 1..d");
  return nd;
}

inline MatrixXd psd_sqrt(const MatrixXd& g) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(g);
  const VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Fixed bank of Monte Carlo draws shared by every expectation of one solve.
struct SEBank {
  MatrixXd z;                  // S x d
  MatrixXd xi;                 // S x L standard normals (pairs antithetic)
  VectorXd y0, y1, p1;         // outcomes: y1 with probability p1, y0 otherwise
  VectorXd sw;                 // per-sample weight in the node average
  std::vector<int> node;       // node of each sample
  std::vector<int> sig;        // true signal of each sample (0-based)
  int S = 0;
};

inline SEBank build_bank(const SEProblem& pr, const SENodes& nd) {
  SEBank bk;
  const int pairs = std::max(1, pr.mc_samples / 2);
  bk.S = 2 * pairs;
  const int d = pr.d(), L = pr.L();
  const int N = static_cast<int>(nd.mass.size());
  bk.z.resize(bk.S, d);
  bk.xi.resize(bk.S, L);
  bk.y0.resize(bk.S);
  bk.y1.resize(bk.S);
  bk.p1.resize(bk.S);
  bk.sw.resize(bk.S);
  bk.node.resize(static_cast<std::size_t>(bk.S));
  bk.sig.resize(static_cast<std::size_t>(bk.S));
  const MatrixXd root = psd_sqrt(pr.gamma);
  Stream rng(pr.seed, "se-bank");
  std::vector<int> count(static_cast<std::size_t>(N), 0);
  for (int m = 0; m < pairs; ++m) count[static_cast<std::size_t>(m % N)] += 2;
  double covered = 0.0;
  for (int k = 0; k < N; ++k)
    if (count[static_cast<std::size_t>(k)] > 0) covered += nd.mass(k);
  VectorXd g(d);
  for (int m = 0; m < pairs; ++m) {
    const int k = m % N;
    for (int j = 0; j < d; ++j) g(j) = rng.normal();
    const VectorXd zz = root * g;
    const int sg = nd.sig[static_cast<std::size_t>(k)];
    double y0 = 0.0, y1 = 0.0, p1 = 0.0;
    if (pr.model.kind == GlmModel::Kind::logistic) {
      y0 = 0.0;
      y1 = 1.0;
      p1 = sigmoid(zz(sg));
    } else {
      y0 = pr.model.q(zz(sg), pr.noise.sample(rng));
    }
    for (int a = 0; a < 2; ++a) {
      const int s = 2 * m + a;
      bk.z.row(s) = zz.transpose();
      for (int l = 0; l < L; ++l) bk.xi(s, l) = 0.0;
      bk.y0(s) = y0;
      bk.y1(s) = y1;
      bk.p1(s) = p1;
      bk.node[static_cast<std::size_t>(s)] = k;
      bk.sig[static_cast<std::size_t>(s)] = sg;
      bk.sw(s) = nd.mass(k) / covered / count[static_cast<std::size_t>(k)];
    }
    for (int l = 0; l < L; ++l) {
      const double x = rng.normal();
      bk.xi(2 * m, l) = x;
      bk.xi(2 * m + 1, l) = -x;
    }
  }
  return bk;
}

struct ColumnStats {
  double A = 0.0;        // mean E[(1 + b sM'')^{-1}]
  VectorXd lam_explicit; // rearranged lambda update (differentiable links)
  double m1sq = 0.0;     // mean E[(sM')^2]
  double m1sq_se = 0.0;
  VectorXd stein;        // mean E[Z sM']
  VectorXd stein_se;
};

class SEEngine {
 public:
  explicit SEEngine(SEProblem pr) : pr_(std::move(pr)) {
    pr_.validate();
    nodes_ = build_nodes(pr_);
    analytic_ = pr_.analytic();
    if (!analytic_) bank_ = build_bank(pr_, nodes_);
    sigma2_ = analytic_ ? pr_.noise.variance() : 0.0;
    target_ = 1.0 - 1.0 / pr_.delta;
  }

  const SEProblem& problem() const noexcept { return pr_; }
  bool analytic() const noexcept { return analytic_; }
  const SENodes& nodes() const noexcept { return nodes_; }

  /// mean_i E[(1 + b sM_i'')^{-1}] for column l (0-based).
  double rhs_b(int l, const VectorXd& lam, double kappa, double b) const {
    if (analytic_) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < nodes_.mass.size(); ++k) s += nodes_.mass(k) / (1.0 + b * nodes_.pi(k, l));
      return s;
    }
    return stats(l, lam, kappa, b, false).A;
  }

  ColumnStats stats(int l, const VectorXd& lam, double kappa, double b, bool full = true) const {
    const int d = pr_.d();
    ColumnStats cs;
    cs.lam_explicit = VectorXd::Zero(d);
    cs.stein = VectorXd::Zero(d);
    cs.stein_se = VectorXd::Zero(d);
    const double sk = std::sqrt(std::max(0.0, kappa));
    const Loss& loss = pr_.loss;
    const bool logistic = pr_.model.kind == GlmModel::Kind::logistic;
    VectorXd pair_m1sq, pair_w;
    MatrixXd pair_stein;
    if (full) {
      pair_m1sq = VectorXd::Zero(bank_.S / 2);
      pair_w = VectorXd::Zero(bank_.S / 2);
      pair_stein = MatrixXd::Zero(bank_.S / 2, d);
    }
    for (int s = 0; s < bank_.S; ++s) {
      const int k = bank_.node[static_cast<std::size_t>(s)];
      const double pi = nodes_.pi(k, l);
      const double rho = b * pi;
      const double a = bank_.z.row(s).dot(lam) + sk * bank_.xi(s, l);
      const double w = bank_.sw(s);
      double A = 0.0, lamc = 0.0, m1sq = 0.0, m1 = 0.0;
      auto outcome = [&](double y, double prob) {
        if (prob <= 0.0) return;
        const double p = prox(loss, rho, y, a);
        const double d1 = pi * loss.d1(p, y);
        const double d2 = pi * loss.d2(p, y);
        const double den = 1.0 + b * d2;
        A += prob / den;
        if (full) {
          lamc += prob * (-pi * loss.d12(p, y)) / den;
          m1sq += prob * d1 * d1;
          m1 += prob * d1;
        }
      };
      if (logistic) {
        outcome(bank_.y1(s), bank_.p1(s));
        outcome(bank_.y0(s), 1.0 - bank_.p1(s));
      } else {
        outcome(bank_.y0(s), 1.0);
      }
      cs.A += w * A;
      if (full) {
        cs.lam_explicit(bank_.sig[static_cast<std::size_t>(s)]) += w * lamc;
        cs.m1sq += w * m1sq;
        cs.stein += w * m1 * bank_.z.row(s).transpose();
        const int m = s / 2;
        pair_w(m) += w;
        pair_m1sq(m) += w * m1sq;
        pair_stein.row(m) += w * m1 * bank_.z.row(s);
      }
    }
    if (full) {
      cs.lam_explicit *= pr_.delta * b;
      double v = 0.0;
      VectorXd vs = VectorXd::Zero(d);
      for (Eigen::Index m = 0; m < pair_w.size(); ++m) {
        if (pair_w(m) <= 0.0) continue;
        const double c = pair_m1sq(m) / pair_w(m) - cs.m1sq;
        v += pair_w(m) * pair_w(m) * c * c;
        const VectorXd cz = pair_stein.row(m).transpose() / pair_w(m) - cs.stein;
        vs += pair_w(m) * pair_w(m) * cz.cwiseAbs2();
      }
      cs.m1sq_se = std::sqrt(v);
      cs.stein_se = vs.cwiseSqrt();
    }
    return cs;
  }

  /// mean_i E[sM'^(l) sM'^(m)] with corr(w_l, w_m) from kappa_lm.
  std::pair<double, double> cross_moment(int l, int m, const VectorXd& lam_l, const VectorXd& lam_m,
                                         double k_ll, double k_mm, double k_lm, double b_l, double b_m) const {
    const double sl = std::sqrt(std::max(0.0, k_ll)), sm = std::sqrt(std::max(0.0, k_mm));
    double r = (sl > 0.0 && sm > 0.0) ? k_lm / (sl * sm) : 0.0;
    r = std::clamp(r, -1.0, 1.0);
    const double rc = std::sqrt(std::max(0.0, 1.0 - r * r));
    const Loss& loss = pr_.loss;
    const bool logistic = pr_.model.kind == GlmModel::Kind::logistic;
    double est = 0.0;
    VectorXd pair_v = VectorXd::Zero(bank_.S / 2), pair_w = VectorXd::Zero(bank_.S / 2);
    for (int s = 0; s < bank_.S; ++s) {
      const int k = bank_.node[static_cast<std::size_t>(s)];
      const double pl = nodes_.pi(k, l), pm = nodes_.pi(k, m);
      const double zl = bank_.z.row(s).dot(lam_l), zm = bank_.z.row(s).dot(lam_m);
      const double al = zl + sl * bank_.xi(s, l);
      const double am = zm + sm * (r * bank_.xi(s, l) + rc * bank_.xi(s, m));
      double c = 0.0;
      auto outcome = [&](double y, double prob) {
        if (prob <= 0.0) return;
        const double ql = prox(loss, b_l * pl, y, al);
        const double qm = prox(loss, b_m * pm, y, am);
        c += prob * pl * loss.d1(ql, y) * pm * loss.d1(qm, y);
      };
      if (logistic) {
        outcome(bank_.y1(s), bank_.p1(s));
        outcome(bank_.y0(s), 1.0 - bank_.p1(s));
      } else {
        outcome(bank_.y0(s), 1.0);
      }
      est += bank_.sw(s) * c;
      pair_v(s / 2) += bank_.sw(s) * c;
      pair_w(s / 2) += bank_.sw(s);
    }
    double v = 0.0;
    for (Eigen::Index q = 0; q < pair_w.size(); ++q) {
      if (pair_w(q) <= 0.0) continue;
      const double dv = pair_v(q) / pair_w(q) - est;
      v += pair_w(q) * pair_w(q) * dv * dv;
    }
    return {est, std::sqrt(v)};
  }

  /// b solving rhs_b(b) = 1 - 1/delta, searched on [1e-8, 1e8].
  double solve_b(int l, const VectorXd& lam, double kappa, double hint = 0.0) const {
    auto f = [&](double u) { return rhs_b(l, lam, kappa, std::exp(u)) - target_; };
    double lo = std::log(1e-8), hi = std::log(1e8);
    if (hint > 0.0) {
      const double a = std::log(hint) - 1.0, c = std::log(hint) + 1.0;
      if (a > lo && c < hi && f(a) > 0.0 && f(c) < 0.0) {
        lo = a;
        hi = c;
      }
    }
    const double flo = f(lo), fhi = f(hi);
    if (!(flo > 0.0) || !(fhi < 0.0))
      throw ExistenceError(
          "b root not bracketed in [1e-8, 1e8]: the estimator likely does not exist for these parameters");
    boost::uintmax_t it = 100;
    auto r = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi,
                                               boost::math::tools::eps_tolerance<double>(45), it);
    return std::exp(0.5 * (r.first + r.second));
  }

  struct Triple {
    VectorXd lam;
    double b = 0.0, kappa = 0.0;
    double b_res = 0.0, fp_res = 0.0, kappa_res = 0.0, kappa_se = 0.0;
    VectorXd stein, stein_se;
    int iterations = 0;
  };

  Triple solve_triple(int l) const {
    const int d = pr_.d();
    Triple t;
    t.lam = VectorXd::Zero(d);
    if (analytic_) return analytic_triple(l);
    t.kappa = 1.0;
    t.b = 0.0;
    std::vector<double> traj;
    for (int it = 1; it <= pr_.max_iter; ++it) {
      t.b = solve_b(l, t.lam, t.kappa, t.b);
      const ColumnStats cs = stats(l, t.lam, t.kappa, t.b);
      VectorXd lam_new;
      if (pr_.model.differentiable()) {
        lam_new = cs.lam_explicit;
      } else {
        // Implicit moment equation; exact one-step update under Stein's lemma.
        lam_new = t.lam - pr_.delta * t.b * pr_.gamma.ldlt().solve(cs.stein);
      }
      const double kappa_new = pr_.delta * t.b * t.b * cs.m1sq;
      const double res = std::max((lam_new - t.lam).cwiseAbs().maxCoeff(),
                                  std::abs(kappa_new - t.kappa) / std::max(1.0, t.kappa));
      traj.push_back(res);
      t.fp_res = res;
      t.iterations = it;
      if (!std::isfinite(res)) throw NumericError("se: non-finite iterate");
      if (res <= pr_.tol) {
        t.lam = lam_new;
        t.kappa = kappa_new;
        finalize(l, t);
        return t;
      }
      const double g = pr_.damping;
      t.lam = (1.0 - g) * t.lam + g * lam_new;
      t.kappa = (1.0 - g) * t.kappa + g * kappa_new;
    }
    std::vector<double> best(t.lam.data(), t.lam.data() + t.lam.size());
    best.push_back(t.b);
    best.push_back(t.kappa);
    throw ConvergenceError("se: diagonal triple did not converge", best, traj);
  }

  /// Solves kappa_lm given both diagonal triples.
  std::pair<double, double> solve_cross(int l, int m, const Triple& tl, const Triple& tm) const {
    if (l == m) return {tl.kappa, 0.0};
    const double bound = std::sqrt(tl.kappa * tm.kappa);
    if (analytic_) return {analytic_cross(l, m, tl, tm), 0.0};
    double k = 0.0, se = 0.0;
    for (int it = 0; it < pr_.max_iter; ++it) {
      const auto [mom, mse] = cross_moment(l, m, tl.lam, tm.lam, tl.kappa, tm.kappa, k, tl.b, tm.b);
      double next = pr_.delta * tl.b * tm.b * mom;
      se = pr_.delta * tl.b * tm.b * mse;
      next = std::clamp(next, -bound, bound);
      const double res = std::abs(next - k);
      k = (1.0 - pr_.damping) * k + pr_.damping * next;
      if (res <= pr_.tol * std::max(1.0, bound)) return {next, se};
    }
    throw ConvergenceError("se: cross covariance did not converge", {k});
  }

 private:
  void finalize(int l, Triple& t) const {
    const ColumnStats cs = stats(l, t.lam, t.kappa, t.b);
    t.b_res = cs.A - target_;
    t.kappa_res = std::abs(t.kappa - pr_.delta * t.b * t.b * cs.m1sq);
    t.kappa_se = pr_.delta * t.b * t.b * cs.m1sq_se;
    t.stein = cs.stein.cwiseAbs();
    t.stein_se = cs.stein_se;
  }

  double quad(const VectorXd& u, const VectorXd& v) const { return u.dot(pr_.gamma * v); }

  Triple analytic_triple(int l) const {
    const int d = pr_.d();
    Triple t;
    t.b = solve_b(l, VectorXd::Zero(d), 0.0);
    const double b = t.b;
    t.lam = VectorXd::Zero(d);
    for (Eigen::Index k = 0; k < nodes_.mass.size(); ++k) {
      const double pi = nodes_.pi(k, l);
      t.lam(nodes_.sig[static_cast<std::size_t>(k)]) += nodes_.mass(k) * pi / (1.0 + b * pi);
    }
    t.lam *= pr_.delta * b;
    // kappa = c1 + c2 kappa
    double c1 = 0.0, c2 = 0.0;
    for (Eigen::Index k = 0; k < nodes_.mass.size(); ++k) {
      const double pi = nodes_.pi(k, l);
      const double f = nodes_.mass(k) * pi * pi / ((1.0 + b * pi) * (1.0 + b * pi));
      VectorXd dv = t.lam;
      dv(nodes_.sig[static_cast<std::size_t>(k)]) -= 1.0;
      c1 += f * (quad(dv, dv) + sigma2_);
      c2 += f;
    }
    c1 *= pr_.delta * b * b;
    c2 *= pr_.delta * b * b;
    if (!(c2 < 1.0)) throw ExistenceError("se: kappa equation has no finite solution");
    t.kappa = c1 / (1.0 - c2);
    t.b_res = rhs_b(l, t.lam, t.kappa, b) - target_;
    t.stein = VectorXd::Zero(d);
    // Raw moment mean E[Z sM'] = Gamma * mean pi (lambda - e_psi) / (1 + b pi).
    for (Eigen::Index k = 0; k < nodes_.mass.size(); ++k) {
      const double pi = nodes_.pi(k, l);
      VectorXd dv = t.lam;
      dv(nodes_.sig[static_cast<std::size_t>(k)]) -= 1.0;
      t.stein += nodes_.mass(k) * pi / (1.0 + b * pi) * (pr_.gamma * dv);
    }
    t.stein = t.stein.cwiseAbs();
    t.stein_se = VectorXd::Zero(d);
    t.iterations = 1;
    return t;
  }

  double analytic_cross(int l, int m, const Triple& tl, const Triple& tm) const {
    double c1 = 0.0, c2 = 0.0;
    for (Eigen::Index k = 0; k < nodes_.mass.size(); ++k) {
      const double pl = nodes_.pi(k, l), pm = nodes_.pi(k, m);
      const double f = nodes_.mass(k) * pl * pm / ((1.0 + tl.b * pl) * (1.0 + tm.b * pm));
      VectorXd ul = tl.lam, um = tm.lam;
      ul(nodes_.sig[static_cast<std::size_t>(k)]) -= 1.0;
      um(nodes_.sig[static_cast<std::size_t>(k)]) -= 1.0;
      c1 += f * (quad(ul, um) + sigma2_);
      c2 += f;
    }
    const double s = pr_.delta * tl.b * tm.b;
    return s * c1 / (1.0 - s * c2);
  }

  SEProblem pr_;
  SENodes nodes_;
  SEBank bank_;
  bool analytic_ = false;
  double sigma2_ = 0.0;
  double target_ = 0.0;
};

}  // namespace detail

/// Monte Carlo (or closed form) value of mean_i E[(1 + b sM_i'')^{-1}], column l 1-based.
inline double se_rhs_b(const SEProblem& problem, int ell, const VectorXd& lambda_l, double kappa_ll, double b) {
  detail::SEEngine eng(problem);
  return eng.rhs_b(ell - 1, lambda_l, kappa_ll, b);
}

struct DiagonalTriple {
  VectorXd lambda;
  double b = 0.0;
  double kappa = 0.0;
};

inline DiagonalTriple solve_diagonal_triple(const SEProblem& problem, int ell) {
  detail::SEEngine eng(problem);
  const auto t = eng.solve_triple(ell - 1);
  return {t.lam, t.b, t.kappa};
}

inline SEParams solve_se(const SEProblem& problem) {
  detail::SEEngine eng(problem);
  const int L = problem.L(), d = problem.d();
  std::vector<detail::SEEngine::Triple> tr;
  tr.reserve(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) tr.push_back(eng.solve_triple(l));
  SEParams p;
  p.lambda.resize(d, L);
  p.kappa.resize(L, L);
  p.b.resize(L);
  p.b_residual.resize(L);
  p.fp_residual.resize(L);
  p.kappa_residual = MatrixXd::Zero(L, L);
  p.kappa_stderr = MatrixXd::Zero(L, L);
  p.stein_residual.resize(L);
  p.stein_stderr.resize(L);
  for (int l = 0; l < L; ++l) {
    const auto& t = tr[static_cast<std::size_t>(l)];
    p.lambda.col(l) = t.lam;
    p.b(l) = t.b;
    p.kappa(l, l) = t.kappa;
    p.b_residual(l) = t.b_res;
    p.fp_residual(l) = t.fp_res;
    p.kappa_residual(l, l) = t.kappa_res;
    p.kappa_stderr(l, l) = t.kappa_se;
    p.stein_residual(l) = t.stein.size() ? t.stein.maxCoeff() : 0.0;
    p.stein_stderr(l) = t.stein_se.size() ? t.stein_se.maxCoeff() : 0.0;
    p.iterations.push_back(t.iterations);
  }
  for (int l = 0; l < L; ++l)
    for (int m = l + 1; m < L; ++m) {
      const auto [k, se] = eng.solve_cross(l, m, tr[static_cast<std::size_t>(l)], tr[static_cast<std::size_t>(m)]);
      p.kappa(l, m) = p.kappa(m, l) = k;
      p.kappa_stderr(l, m) = p.kappa_stderr(m, l) = se;
    }
  return p;
}

/// kappa_lm (1-based) from already solved diagonal triples.
inline double solve_cross_cov(const SEProblem& problem, int ell, int ellp, const std::vector<DiagonalTriple>& triples) {
  detail::SEEngine eng(problem);
  auto conv = [](const DiagonalTriple& t) {
    detail::SEEngine::Triple r;
    r.lam = t.lambda;
    r.b = t.b;
    r.kappa = t.kappa;
    return r;
  };
  return eng.solve_cross(ell - 1, ellp - 1, conv(triples[static_cast<std::size_t>(ell - 1)]),
                         conv(triples[static_cast<std::size_t>(ellp - 1)])).first;
}

struct PerformancePrediction {
  double mean_hausdorff_frac = 0.0;  // averaged over trials with a defined distance
  double mean_size = 0.0;            // mean number of estimated change points
  std::vector<double> hausdorff_frac;
  std::vector<int> sizes;
};

/// Samples the asymptotic law of (Theta_hat, y) at finite n and runs the given
/// segmentation on the synthetic loss matrix.
inline PerformancePrediction predict_performance(
    const SEProblem& problem, const SEParams& params, const WeightMatrix& weights, const SignalConfig& psi_true,
    const std::function<std::vector<int>(const MatrixXd&)>& estimator, int trials, std::uint64_t seed) {
  const int n = weights.n(), L = weights.L(), d = problem.d();
  if (psi_true.n() != n) throw ValidationError("predict: psi length must equal weight rows");
  std::vector<int> sig(static_cast<std::size_t>(n));
  if (!problem.segment_labels.empty()) {
    for (int i = 1; i <= n; ++i) sig[static_cast<std::size_t>(i - 1)] = problem.signal_of_segment(psi_true(i) - 1) - 1;
  } else {
    for (int i = 1; i <= n; ++i) sig[static_cast<std::size_t>(i - 1)] = psi_true(i) - 1;
  }
  const auto eta_true = changepoints_from_config(psi_true).eta();
  const MatrixXd gr = detail::psd_sqrt(problem.gamma);
  const MatrixXd kr = detail::psd_sqrt(params.kappa);
  PerformancePrediction out;
  double hsum = 0.0;
  int hcount = 0;
  for (int t = 0; t < trials; ++t) {
    Stream rng(seed, "predict", static_cast<std::uint64_t>(t));
    MatrixXd lossmat(n, L);
    VectorXd gz(d), gg(L);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) gz(j) = rng.normal();
      for (int j = 0; j < L; ++j) gg(j) = rng.normal();
      const VectorXd z = gr * gz;
      const VectorXd g = kr * gg;
      const double eps = problem.noise.sample(rng);
      const double y = problem.model.q(z(sig[static_cast<std::size_t>(i)]), eps);
      for (int l = 0; l < L; ++l) {
        const double a = z.dot(params.lambda.col(l)) + g(l);
        const double th = prox(problem.loss, params.b(l) * weights.pi(i, l), y, a);
        lossmat(i, l) = problem.loss.value(th, y);
      }
    }
    const auto eta = estimator(lossmat);
    out.sizes.push_back(static_cast<int>(eta.size()));
    const auto h = hausdorff(eta, eta_true);
    if (h) {
      out.hausdorff_frac.push_back(*h / n);
      hsum += *h / n;
      ++hcount;
    } else {
      out.hausdorff_frac.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }
  double ssum = 0.0;
  for (int s : out.sizes) ssum += s;
  out.mean_size = trials > 0 ? ssum / trials : 0.0;
  out.mean_hausdorff_frac = hcount > 0 ? hsum / hcount : std::numeric_limits<double>::quiet_NaN();
  return out;
}

}  // namespace werm
