// Command line front end: simulate, fit, segment, se-solve, posterior, bench.
#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "werm/harness.hpp"
#include "werm/inference.hpp"
#include "werm/io.hpp"

namespace werm::cli {

enum ExitCode : int { ok = 0, usage = 1, numeric = 2 };

struct Flags {
  std::string config;
  std::string data;
  std::string out;
  std::string format;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  int trial = 0;
};

namespace detail {

using io::json;

inline json load_config(const Flags& f) {
  if (f.config.empty()) throw ConfigError("--config is required");
  return io::parse_json(io::read_file(f.config), f.config);
}

inline std::filesystem::path config_dir(const Flags& f) {
  return std::filesystem::path(f.config).parent_path();
}

struct Loaded {
  ScenarioConfig cfg;
  io::CliExtras extras;
  json raw;
};

inline Loaded load_scenario(const Flags& f) {
  Loaded l;
  l.raw = load_config(f);
  l.cfg = io::parse_scenario(l.raw, &l.extras, config_dir(f));
  if (f.seed) l.cfg.seed = *f.seed;
  if (f.threads) l.cfg.threads = *f.threads;
  if (!f.data.empty()) l.extras.data = f.data;
  return l;
}

inline Dataset dataset_for(const Loaded& l, int trial) {
  if (!l.extras.data.empty()) return io::load_dataset(l.extras.data);
  return simulate(l.cfg, l.cfg.deltas.front(), trial);
}

/// Writes `text` to out/name when an output directory is given, else to the stream.
inline void emit(const Flags& f, const std::string& name, const std::string& text, std::ostream& out) {
  if (f.out.empty()) {
    out << text;
    return;
  }
  io::write_file(std::filesystem::path(f.out) / name, text);
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline void cmd_simulate(const Flags& f, std::ostream& out) {
  const auto l = load_scenario(f);
  const Dataset d = simulate(l.cfg, l.cfg.deltas.front(), f.trial);
  if (f.format == "json") {
    json j = {{"y", io::to_json(d.y)}, {"x", io::to_json(d.x)}, {"meta", io::truth_json(*d.meta)}};
    emit(f, "data.json", dump(j), out);
    return;
  }
  if (f.out.empty()) {
    out << io::dataset_csv(d);
    return;
  }
  io::save_dataset(d, std::filesystem::path(f.out) / "data.csv");
}

inline void cmd_fit(const Flags& f, std::ostream& out) {
  const auto l = load_scenario(f);
  const Dataset d = dataset_for(l, f.trial);
  const WeightMatrix w = marginal_weights(l.cfg.prior, d.n());
  const FitResult fit = fit_weighted_erm(d, l.cfg.loss, w, effective_fit(l.cfg, d.n()));
  emit(f, "fit.json", dump(io::to_json(fit)), out);
}

inline void cmd_segment(const Flags& f, std::ostream& out) {
  const auto l = load_scenario(f);
  const Dataset d = dataset_for(l, f.trial);
  const auto e = estimate(l.cfg, d);
  json j = io::to_json(e.seg);
  if (e.seg.path.size() > 1) j["elbow"] = elbow(e.seg.path);
  emit(f, "segment.json", dump(j), out);
}

inline void cmd_se_solve(const Flags& f, std::ostream& out) {
  SEProblem p = io::parse_se_problem(load_config(f));
  if (f.seed) p.seed = *f.seed;
  const SEParams s = solve_se(p);
  emit(f, "se_params.json", dump(io::to_json(s)), out);
}

inline std::vector<int> grid_points(const std::vector<double>& fr, int n) {
  std::vector<int> g;
  for (double a : fr) {
    if (!(a > 0.0 && a < 1.0)) throw ConfigError("key 'posterior.grid' entries must lie in (0,1)");
    g.push_back(static_cast<int>(std::floor(a * n)) + 1);
  }
  return g;
}

inline void cmd_posterior(const Flags& f, std::ostream& out) {
  const auto l = load_scenario(f);
  const Dataset d = dataset_for(l, f.trial);
  const ScenarioConfig& cfg = l.cfg;
  const int n = d.n();
  json pj = l.extras.posterior.is_null() ? json::object() : l.extras.posterior;
  io::Reader r(pj, "posterior");
  r.allow({"k", "grid", "min_len_frac", "gamma", "noise_var", "mc_samples", "round_digits"});
  const int k = r.get<int>("k", static_cast<int>(cfg.eta_fractions.size()));
  std::vector<double> grid = r.get<std::vector<double>>("grid", {});
  if (grid.empty())
    for (int q = 1; q < 20; ++q) grid.push_back(q / 20.0);
  const double min_len_frac = r.get<double>("min_len_frac", 0.0);
  const int min_len = std::max(1, static_cast<int>(std::ceil(min_len_frac * n - 1e-9)));
  const auto support = grid_support(n, grid_points(grid, n), k, min_len);

  const WeightMatrix w = marginal_weights(cfg.prior, n);
  const FitResult fit = fit_weighted_erm(d, cfg.loss, w, effective_fit(cfg, n));
  const AdjustedEstimates adj = adjust(fit, d, cfg.loss, w);

  PosteriorOptions opt;
  opt.delta = static_cast<double>(n) / d.p();
  opt.loss = cfg.loss;
  opt.model = cfg.model;
  opt.se_noise = cfg.noise;
  opt.mc_samples = r.get<int>("mc_samples", cfg.mc_samples);
  opt.round_digits = r.get<int>("round_digits", opt.round_digits);
  opt.seed = cfg.seed;
  if (cfg.prior.kind == ChangePointPrior::Kind::alternating) {
    const auto prior = cfg.prior;
    opt.segment_signals = [prior](int segs) { return prior.segment_columns(segs); };
  }
  if (cfg.model.kind == GlmModel::Kind::linear)
    opt.noise_var = r.has("noise_var") ? r.need<double>("noise_var") : estimate_noise_variance(fit, d, w);

  const std::string gmode = r.has("gamma") && r.raw("gamma").is_string() ? r.need<std::string>("gamma") : "";
  if (r.has("gamma") && r.raw("gamma").is_array()) {
    opt.gamma = io::matrix_from(r.raw("gamma"), "posterior.gamma");
  } else if (gmode == "true") {
    if (!d.meta || d.meta->gamma.size() == 0)
      throw ConfigError("key 'posterior.gamma' = \"true\" needs simulated data");
    opt.gamma = d.meta->gamma;
  } else if (gmode.empty() || gmode == "estimate") {
    SearchConfig sc = effective_search(cfg, n);
    sc.L = w.L();
    const int kk = std::min(k, w.L() - 1);
    if (cfg.prior.kind == ChangePointPrior::Kind::alternating) sc.segment_columns = cfg.prior.segment_columns(kk + 1);
    const auto seg = search(weighted_loss_matrix(fit, d, cfg.loss), sc, kk);
    GammaOptions go;
    go.loss = cfg.loss;
    go.model = cfg.model;
    go.noise_var = opt.noise_var.value_or(1.0);
    go.se_noise = cfg.noise;
    go.mc_samples = opt.mc_samples;
    go.seed = cfg.seed;
    opt.gamma = estimate_gamma(adj, d, w, seg.psi_hat, go).gamma;
  } else {
    throw ConfigError("key 'posterior.gamma' must be \"true\", \"estimate\" or a matrix");
  }
  const PosteriorTable tab = posterior(adj, d, w, cfg.prior, support, opt);
  if (f.format == "json") emit(f, "posterior.json", dump(io::to_json(tab)), out);
  else emit(f, "posterior.csv", io::posterior_csv(tab), out);
}

inline void cmd_bench(const Flags& f, std::ostream& out) {
  const auto l = load_scenario(f);
  json canon = l.raw;
  canon["seed"] = l.cfg.seed;
  const RunReport rep = run_scenario(l.cfg, io::config_hash(canon));
  if (f.out.empty()) {
    if (f.format == "csv") out << io::plot_csv(rep);
    else out << dump(io::to_json(rep));
    return;
  }
  emit(f, "report.json", dump(io::to_json(rep)), out);
  emit(f, "plot.csv", io::plot_csv(rep), out);
}

}  // namespace detail

/// Runs the CLI; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Change point estimation by prior-weighted ERM"};
  app.require_subcommand(1);
  Flags f;
  std::uint64_t seed = 0;
  int threads = 1;
  auto common = [&](CLI::App* s, bool data) {
    s->add_option("--config", f.config, "JSON config file")->required();
    s->add_option("--seed", seed, "Override the config seed");
    s->add_option("--out", f.out, "Output directory (default: stdout)");
    s->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
    s->add_option("--format", f.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
    if (data) {
      s->add_option("--data", f.data, "Dataset CSV (default: simulate from the config)");
      s->add_option("--trial", f.trial, "Trial index used when simulating")->check(CLI::NonNegativeNumber);
    }
  };
  auto* sim = app.add_subcommand("simulate", "Emit a simulated dataset as CSV");
  common(sim, false);
  sim->add_option("--trial", f.trial, "Trial index")->check(CLI::NonNegativeNumber);
  auto* fit = app.add_subcommand("fit", "Fit the weighted estimators; FitResult JSON");
  common(fit, true);
  auto* seg = app.add_subcommand("segment", "Fit and estimate change points; JSON");
  common(seg, true);
  auto* se = app.add_subcommand("se-solve", "Solve a state evolution problem; SEParams JSON");
  common(se, false);
  auto* post = app.add_subcommand("posterior", "Posterior over change point locations; CSV");
  common(post, true);
  auto* bench = app.add_subcommand("bench", "Run a scenario sweep; RunReport JSON and plot CSV");
  common(bench, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? ok : usage;
  }
  for (auto* s : app.get_subcommands()) {
    if (s->count("--seed")) f.seed = seed;
    if (s->count("--threads")) f.threads = threads;
  }
  try {
    if (sim->parsed()) detail::cmd_simulate(f, out);
    else if (fit->parsed()) detail::cmd_fit(f, out);
    else if (seg->parsed()) detail::cmd_segment(f, out);
    else if (se->parsed()) detail::cmd_se_solve(f, out);
    else if (post->parsed()) detail::cmd_posterior(f, out);
    else if (bench->parsed()) detail::cmd_bench(f, out);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return numeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return usage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return usage;
  }
  return ok;
}

}  // namespace werm::cli
