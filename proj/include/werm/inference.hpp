// Adjusted estimates, configuration likelihoods, posteriors over change point
// configurations and data-driven estimation of the signal strength matrix.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
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
#include "werm/solver.hpp"
#include "werm/state_evolution.hpp"
#include "werm/weights.hpp"

namespace werm {

struct AdjustedEstimates {
  MatrixXd theta_adj;  // n x L
  VectorXd b_hat;      // L
  VectorXd residual;   // residual of the b-hat equation per column
};

/// b solving 1 - 1/delta = mean_i (1 + b c_i)^{-1} for c_i >= 0.
inline double solve_b_hat(const VectorXd& c, double delta) {
  const double target = 1.0 - 1.0 / delta;
  const double n = static_cast<double>(c.size());
  auto f = [&](double u) {
    const double b = std::exp(u);
    return (1.0 / (1.0 + b * c.array())).sum() / n - target;
  };
  double lo = std::log(1e-8), hi = std::log(1e8);
  const double flo = f(lo), fhi = f(hi);
  if (!(flo > 0.0) || !(fhi < 0.0))
    throw ExistenceError("b-hat equation has no root in [1e-8, 1e8]: the estimator likely does not exist");
  boost::uintmax_t it = 200;
  auto r = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, boost::math::tools::eps_tolerance<double>(52), it);
  return std::exp(0.5 * (r.first + r.second));
}

inline AdjustedEstimates adjust(const FitResult& fit, const Dataset& data, const Loss& loss, const WeightMatrix& weights) {
  const int n = data.n(), L = fit.L();
  const double delta = static_cast<double>(n) / data.p();
  if (!(delta > 1.0)) throw ConfigError("adjust: need n / p > 1");
  AdjustedEstimates a;
  a.theta_adj.resize(n, L);
  a.b_hat.resize(L);
  a.residual.resize(L);
  for (int l = 0; l < L; ++l) {
    VectorXd c(n), g(n);
    for (int i = 0; i < n; ++i) {
      const double th = fit.theta_hat(i, l);
      c(i) = weights.pi(i, l) * loss.d2(th, data.y(i));
      g(i) = weights.pi(i, l) * loss.d1(th, data.y(i));
    }
    const double b = solve_b_hat(c, delta);
    a.b_hat(l) = b;
    a.residual(l) = (1.0 / (1.0 + b * c.array())).sum() / n - (1.0 - 1.0 / delta);
    a.theta_adj.col(l) = fit.theta_hat.col(l) + b * g;
  }
  return a;
}

namespace detail {

struct GaussHermite {
  std::vector<double> x, w;  // E[f(Z)], Z ~ N(0,1), equals sum w_k f(x_k)
};

inline const GaussHermite& gauss_hermite32() {
  static const GaussHermite gh = [] {
    constexpr int N = 32;
    MatrixXd J = MatrixXd::Zero(N, N);
    for (int k = 1; k < N; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(k / 2.0);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(J);
    GaussHermite r;
    for (int k = 0; k < N; ++k) {
      const double v0 = es.eigenvectors()(0, k);
      r.x.push_back(std::sqrt(2.0) * es.eigenvalues()(k));
      r.w.push_back(v0 * v0);
    }
    return r;
  }();
  return gh;
}

inline double log_normal_pdf(double x, double mean, double var) {
  constexpr double log2pi = 1.8378770664093454836;
  return -0.5 * (log2pi + std::log(var) + (x - mean) * (x - mean) / var);
}

// Precomputed conditional structure of (V, u) for one candidate configuration.
struct LikelihoodKernel {
  Eigen::LLT<MatrixXd> s_llt;
  double s_logdet = 0.0;
  MatrixXd coef;     // d x L: row j = c_j' S^{-1}
  VectorXd cvar;     // d: Gamma_jj - c_j' S^{-1} c_j
  bool ridged = false;
};

inline LikelihoodKernel make_kernel(const SEParams& params, const MatrixXd& gamma) {
  LikelihoodKernel k;
  MatrixXd S = params.lambda.transpose() * gamma * params.lambda + params.kappa;
  S = 0.5 * (S + S.transpose());
  k.s_llt.compute(S);
  if (k.s_llt.info() != Eigen::Success || k.s_llt.matrixLLT().diagonal().minCoeff() <= 1e-12) {
    S.diagonal().array() += 1e-10 * std::max(S.trace(), 1e-300);
    k.s_llt.compute(S);
    k.ridged = true;
  }
  k.s_logdet = 2.0 * k.s_llt.matrixLLT().diagonal().array().log().sum();
  const MatrixXd C = params.lambda.transpose() * gamma;  // L x d, column j = c_j
  const MatrixXd SiC = k.s_llt.solve(C);                 // L x d
  k.coef = SiC.transpose();
  k.cvar.resize(gamma.rows());
  for (Eigen::Index j = 0; j < gamma.rows(); ++j)
    k.cvar(j) = std::max(gamma(j, j) - C.col(j).dot(SiC.col(j)), 0.0);
  return k;
}

inline double marginal_v(const LikelihoodKernel& k, const VectorXd& v) {
  constexpr double log2pi = 1.8378770664093454836;
  const VectorXd sol = k.s_llt.matrixL().solve(v);
  return -0.5 * (static_cast<double>(v.size()) * log2pi + k.s_logdet + sol.squaredNorm());
}

inline double conditional_u(const LikelihoodKernel& k, const VectorXd& v, double u, int j, const GlmModel& model,
                            double noise_var) {
  const double m = k.coef.row(j).dot(v);
  const double var = k.cvar(j);
  if (model.kind == GlmModel::Kind::linear) return log_normal_pdf(u, m, std::max(var + noise_var, 1e-300));
  const auto& gh = gauss_hermite32();
  const double sd = std::sqrt(var);
  double p1 = 0.0;
  for (std::size_t q = 0; q < gh.x.size(); ++q) p1 += gh.w[q] * sigmoid(m + sd * gh.x[q]);
  p1 = std::clamp(p1, 1e-300, 1.0 - 1e-16);
  return u > 0.5 ? std::log(p1) : std::log1p(-p1);
}

}  // namespace detail

/// log density of (V_i, u_i) given psi_i = j (1-based signal label).
inline double config_loglik(const VectorXd& v_row, double u, int psi_i, const SEParams& params, const MatrixXd& gamma,
                            const GlmModel& model, double noise_var) {
  const auto k = detail::make_kernel(params, gamma);
  return detail::marginal_v(k, v_row) + detail::conditional_u(k, v_row, u, psi_i - 1, model, noise_var);
}

struct PosteriorEntry {
  std::vector<int> eta;
  double log_likelihood = 0.0;
  double log_prior = 0.0;
  double probability = 0.0;
};

struct PosteriorTable {
  std::vector<PosteriorEntry> entries;
  double log_normalizer = 0.0;
  int n = 0;
  bool ridged = false;

  /// Marginal probability that some change point sits at each location (1..n).
  std::map<int, double> location_marginal() const {
    std::map<int, double> m;
    for (const auto& e : entries)
      for (int x : e.eta) m[x] += e.probability;
    return m;
  }
  const PosteriorEntry& mode() const {
    return *std::max_element(entries.begin(), entries.end(),
                             [](const auto& a, const auto& b) { return a.probability < b.probability; });
  }
};

struct PosteriorOptions {
  MatrixXd gamma;            // d x d signal strength matrix
  double delta = 2.0;        // n / p
  Loss loss;
  GlmModel model;
  std::optional<double> noise_var;  // linear model; 1 when absent (see estimate_noise_variance)
  NoiseSpec se_noise = NoiseSpec::gaussian(1.0);  // law used inside the SE solves
  int round_digits = 2;      // kappa/lambda cache key precision on segment fractions
  int mc_samples = 100000;
  std::uint64_t seed = 0;
  // Segment -> signal map for a given number of segments; identity if empty.
  std::function<std::vector<int>(int)> segment_signals;
};

/// Noise variance estimate: best weighted mean squared residual, rescaled by 1/(1 - 1/delta).
inline double estimate_noise_variance(const FitResult& fit, const Dataset& data, const WeightMatrix& weights) {
  const double delta = static_cast<double>(data.n()) / data.p();
  double best = std::numeric_limits<double>::infinity();
  for (int l = 0; l < fit.L(); ++l) {
    const VectorXd r = data.y - fit.theta_hat.col(l);
    const double w = weights.pi.col(l).sum();
    if (w <= 0.0) continue;
    best = std::min(best, (weights.pi.col(l).array() * r.array().square()).sum() / w);
  }
  return best / (1.0 - 1.0 / delta);
}

/// Caches SE solutions per rounded segment-fraction signature.
class SECache {
 public:
  SECache(const WeightMatrix& weights, const PosteriorOptions& opt) : weights_(weights), opt_(opt) {}

  const SEParams& get(const std::vector<int>& eta, const std::vector<int>& signals) {
    const int n = weights_.n();
    const double scale = std::pow(10.0, opt_.round_digits);
    std::vector<long long> key;
    std::vector<double> fr;
    for (int e : eta) {
      const long long k = std::llround(static_cast<double>(e - 1) / n * scale);
      key.push_back(k);
      fr.push_back(static_cast<double>(k) / scale);
    }
    for (int s : signals) key.push_back(-s);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    for (std::size_t q = 0; q < fr.size(); ++q)
      if (!(fr[q] > 0.0 && fr[q] < 1.0) || (q > 0 && !(fr[q] > fr[q - 1])))
        throw ValidationError("posterior: candidate segment fractions degenerate after rounding");
    SEProblem pr;
    pr.delta = opt_.delta;
    pr.gamma = opt_.gamma;
    pr.loss = opt_.loss;
    pr.model = opt_.model;
    pr.noise = opt_.model.kind == GlmModel::Kind::linear && opt_.noise_var
                   ? NoiseSpec::gaussian(std::sqrt(*opt_.noise_var))
                   : opt_.se_noise;
    pr.alphas = fr;
    pr.segment_labels = signals;
    pr.weights = weights_;
    pr.mc_samples = opt_.mc_samples;
    pr.seed = opt_.seed;
    return cache_.emplace(key, solve_se(pr)).first->second;
  }

  std::size_t size() const noexcept { return cache_.size(); }

 private:
  const WeightMatrix& weights_;
  const PosteriorOptions& opt_;
  std::map<std::vector<long long>, SEParams> cache_;
};

/// Posterior over `support` given observations (V, u), e.g. (Theta_adj, y).
inline PosteriorTable posterior_from(const MatrixXd& V, const VectorXd& u, const WeightMatrix& weights,
                                     const ChangePointPrior& prior, const std::vector<ChangePoints>& support,
                                     const PosteriorOptions& opt, SECache* shared_cache = nullptr) {
  if (support.empty()) throw ConfigError("posterior: empty support");
  const int n = static_cast<int>(V.rows());
  if (u.size() != n || weights.n() != n) throw ValidationError("posterior: dimension mismatch");
  const double noise_var = opt.noise_var.value_or(1.0);
  SECache local(weights, opt);
  SECache& cache = shared_cache ? *shared_cache : local;
  const int d = static_cast<int>(opt.gamma.rows());

  // Row log-likelihoods per (cached SE key, signal label) with prefix sums.
  std::map<const SEParams*, MatrixXd> prefix;
  PosteriorTable tab;
  tab.n = n;
  for (const auto& cp : support) {
    if (cp.n() != n) throw ValidationError("posterior: support built for a different n");
    const int segs = cp.num_segments();
    std::vector<int> signals = opt.segment_signals ? opt.segment_signals(segs) : std::vector<int>{};
    if (signals.empty())
      for (int s = 1; s <= segs; ++s) signals.push_back(s);
    for (int s : signals)
      if (s < 1 || s > d) throw ConfigError("posterior: configuration needs more signals than gamma provides");
    const SEParams& par = cache.get(cp.eta(), signals);
    auto it = prefix.find(&par);
    if (it == prefix.end()) {
      const auto ker = detail::make_kernel(par, opt.gamma);
      tab.ridged = tab.ridged || ker.ridged;
      MatrixXd pre = MatrixXd::Zero(n + 1, d);
      for (int i = 0; i < n; ++i) {
        const VectorXd v = V.row(i).transpose();
        const double mv = detail::marginal_v(ker, v);
        for (int j = 0; j < d; ++j)
          pre(i + 1, j) = pre(i, j) + mv + detail::conditional_u(ker, v, u(i), j, opt.model, noise_var);
      }
      it = prefix.emplace(&par, std::move(pre)).first;
    }
    const MatrixXd& pre = it->second;
    double ll = 0.0;
    int start = 0;
    for (int s = 0; s < segs; ++s) {
      const int end = s < static_cast<int>(cp.size()) ? cp.eta()[static_cast<std::size_t>(s)] - 1 : n;
      const int j = signals[static_cast<std::size_t>(s)] - 1;
      ll += pre(end, j) - pre(start, j);
      start = end;
    }
    PosteriorEntry e;
    e.eta = cp.eta();
    e.log_likelihood = ll;
    e.log_prior = prior.log_prob(cp);
    tab.entries.push_back(std::move(e));
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (const auto& e : tab.entries) mx = std::max(mx, e.log_likelihood + e.log_prior);
  if (!std::isfinite(mx)) throw NumericError("posterior: every configuration has zero likelihood or prior mass");
  double s = 0.0;
  for (const auto& e : tab.entries) s += std::exp(e.log_likelihood + e.log_prior - mx);
  tab.log_normalizer = mx + std::log(s);
  for (auto& e : tab.entries) e.probability = std::exp(e.log_likelihood + e.log_prior - tab.log_normalizer);
  return tab;
}

inline PosteriorTable posterior(const AdjustedEstimates& adjusted, const Dataset& data, const WeightMatrix& weights,
                                const ChangePointPrior& prior, const std::vector<ChangePoints>& support,
                                const PosteriorOptions& opt, SECache* cache = nullptr) {
  return posterior_from(adjusted.theta_adj, data.y, weights, prior, support, opt, cache);
}

/// Draw (V, u) = (Z Lambda + G, q(Z, Psi, eps)) from the asymptotic law.
inline std::pair<MatrixXd, VectorXd> sample_theory_observation(const SEParams& params, const MatrixXd& gamma,
                                                               const std::vector<int>& signal_of_row,
                                                               const GlmModel& model, const NoiseSpec& noise,
                                                               std::uint64_t seed, std::uint64_t trial) {
  const int n = static_cast<int>(signal_of_row.size());
  const int d = static_cast<int>(gamma.rows()), L = static_cast<int>(params.kappa.rows());
  const MatrixXd gr = detail::psd_sqrt(gamma), kr = detail::psd_sqrt(params.kappa);
  Stream rng(seed, "theory-observation", trial);
  MatrixXd V(n, L);
  VectorXd u(n), gz(d), gg(L);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) gz(j) = rng.normal();
    for (int j = 0; j < L; ++j) gg(j) = rng.normal();
    const VectorXd z = gr * gz;
    V.row(i) = (params.lambda.transpose() * z + kr * gg).transpose();
    u(i) = model.q(z(signal_of_row[static_cast<std::size_t>(i)] - 1), noise.sample(rng));
  }
  return {V, u};
}

/// All configurations with `k` change points whose locations lie on `grid`
/// and whose segments are at least `min_len` long.
inline std::vector<ChangePoints> grid_support(int n, const std::vector<int>& grid, int k, int min_len) {
  std::vector<ChangePoints> out;
  std::vector<int> cur;
  std::function<void(std::size_t, int)> rec = [&](std::size_t from, int prev) {
    if (static_cast<int>(cur.size()) == k) {
      if (n + 1 - prev >= min_len) out.emplace_back(cur, n);
      return;
    }
    for (std::size_t q = from; q < grid.size(); ++q) {
      if (grid[q] - prev < min_len || grid[q] <= 1 || grid[q] > n) continue;
      cur.push_back(grid[q]);
      rec(q + 1, grid[q]);
      cur.pop_back();
    }
  };
  rec(0, 1);
  return out;
}

struct GammaEstimate {
  MatrixXd gamma;
  SEParams params;
  double residual = 0.0;  // Frobenius norm of Lambda' Gamma Lambda + K - Theta_adj' Theta_adj / n
  bool warning = false;
  int iterations = 0;
};

struct GammaOptions {
  Loss loss;
  GlmModel model;
  double noise_var = 1.0;
  NoiseSpec se_noise = NoiseSpec::gaussian(1.0);
  double damping = 0.5;
  int max_iter = 100;
  double tol = 1e-6;
  double warn_threshold = 0.1;
  int mc_samples = 100000;
  std::uint64_t seed = 0;
};

/// Solves the SE system with Psi := psi_hat jointly with the moment equation
/// Theta_adj' Theta_adj / n = Lambda' Gamma Lambda + K for Gamma.
inline GammaEstimate estimate_gamma(const AdjustedEstimates& adjusted, const Dataset& data, const WeightMatrix& weights,
                                    const SignalConfig& psi_hat, const GammaOptions& opt = {}) {
  const int n = data.n(), L = weights.L();
  if (psi_hat.n() != n) throw ValidationError("estimate_gamma: psi_hat length must equal n");
  if (psi_hat.num_signals() != L)
    throw ValidationError("estimate_gamma: psi_hat must use every one of the L signals");
  const auto cp = changepoints_from_config(psi_hat);
  int prev = 1;
  for (std::size_t s = 0; s <= cp.size(); ++s) {
    const int next = s < cp.size() ? cp.eta()[s] : n + 1;
    if (next - prev < 2) throw ValidationError("estimate_gamma: psi_hat has a vanishing segment");
    prev = next;
  }
  const MatrixXd S = adjusted.theta_adj.transpose() * adjusted.theta_adj / n;
  auto clip = [](const MatrixXd& m) {
    const MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym);
    const VectorXd ev = es.eigenvalues().cwiseMax(1e-8);
    return MatrixXd(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
  };
  SEProblem pr;
  pr.delta = static_cast<double>(n) / data.p();
  pr.loss = opt.loss;
  pr.model = opt.model;
  pr.noise = opt.model.kind == GlmModel::Kind::linear ? NoiseSpec::gaussian(std::sqrt(opt.noise_var)) : opt.se_noise;
  pr.weights = weights;
  pr.psi = psi_hat.psi();
  pr.mc_samples = opt.mc_samples;
  pr.seed = opt.seed;
  GammaEstimate out;
  MatrixXd G = clip(S);
  for (int it = 1; it <= opt.max_iter; ++it) {
    pr.gamma = G;
    out.params = solve_se(pr);
    const MatrixXd& Lam = out.params.lambda;
    Eigen::FullPivLU<MatrixXd> lu(Lam);
    if (!lu.isInvertible()) throw NumericError("estimate_gamma: Lambda is singular");
    const MatrixXd Li = lu.inverse();
    const MatrixXd target = clip(Li.transpose() * (S - out.params.kappa) * Li);
    const MatrixXd next = clip((1.0 - opt.damping) * G + opt.damping * target);
    const double change = (next - G).norm() / std::max(1.0, G.norm());
    G = next;
    out.iterations = it;
    if (change <= opt.tol) break;
  }
  pr.gamma = G;
  out.params = solve_se(pr);
  out.gamma = G;
  out.residual = (out.params.lambda.transpose() * G * out.params.lambda + out.params.kappa - S).norm();
  out.warning = out.residual > opt.warn_threshold;
  return out;
}

}  // namespace werm
