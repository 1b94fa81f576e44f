#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "earlypsd/conventional_solver.hpp"
#include "earlypsd/metrics.hpp"
#include "earlypsd/procrustes_solver.hpp"
#include "earlypsd/retf_updater.hpp"
#include "earlypsd/rng.hpp"
#include "earlypsd/scene_model.hpp"
#include "earlypsd/stft_io.hpp"
#include "earlypsd/subspace_estimator.hpp"

namespace earlypsd {

// ------------------------------------------------------------ config

struct SceneSettings {
  int mics = 5;
  double spacing_m = 0.08;
  double speed_of_sound = 340.0;
  std::vector<double> doas_deg{-30.0, 0.0, 60.0};
  double freq_hz = 2000.0;
  double diversity_b = 1.0;
  double late_psd = 0.5;
  double sample_rate = 16000.0;
};

struct SolverSettings {
  double alpha = 1e3;
  int i_max = 20;
  double tol = 1e-8;
  std::string init = "conventional-seed";  // or "sum-constraint"
};

struct RecursionSettings {
  int recursions = 64;
  double eps_h_init_db = 0.0;
  int transition_at = 33;
  int transition_frames = 1;  // frames spent at the moved position
  std::vector<double> transition_doas_deg{-40.0, 0.0, 60.0};
  double beta_scale = 20.0;  // beta = beta_scale * b^2
  double xi_th_db = -2.0;
};

struct AcousticSettings {
  double duration_s = 5.0;
  std::vector<double> doas_deg{-30.0, 40.0};
  std::vector<double> f0_hz{210.0, 110.0};
  std::vector<std::string> source_wavs;             // optional, one per source
  std::vector<std::vector<std::string>> rir_csvs;   // optional, [source][mic]
  double t60_s = 0.61;
  double drr_db = -6.0;
  double rir_length_s = 0.7;
  int n_stft = 512;
  double tau_s = 0.16;
  std::vector<double> alpha_grid{1e-3, 1e-1, 1e1, 1e3, 1e5};
  bool retf_update = true;
  double beta_scale = 20.0;
  double xi_th_db = -2.0;
};

struct ExperimentConfig {
  std::string experiment = "eps-sweep";
  std::uint64_t seed = 1;
  int realizations = 4096;
  int threads = 0;
  SceneSettings scene;
  SolverSettings solver;
  std::vector<double> eps_h_db{-30.0, -25.0, -20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0};
  std::vector<double> alpha_grid{1e-3, 1e-2, 1e-1, 1e0, 1e1, 1e2, 1e3, 1e4, 1e5};
  std::vector<double> freq_grid_hz;
  RecursionSettings recursion;
  AcousticSettings acoustic;

  void validate() const;
};

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> k{"eps-sweep", "alpha-sweep", "freq-sweep",
                                          "convergence", "recursive", "acoustic"};
  return k;
}

inline std::vector<double> linear_grid(double start, double stop, double step) {
  if (!(step > 0.0) || stop < start) throw Error(ErrorKind::ConfigError, "bad grid range");
  std::vector<double> g;
  const auto n = static_cast<long>(std::floor((stop - start) / step + 1e-9));
  for (long i = 0; i <= n; ++i) g.push_back(start + static_cast<double>(i) * step);
  return g;
}

/// Defaults reproducing the model-based and acoustic settings for each kind.
inline ExperimentConfig default_config(const std::string& kind) {
  ExperimentConfig c;
  c.experiment = kind;
  if (kind == "alpha-sweep") {
    c.eps_h_db = {-10.0};
  } else if (kind == "freq-sweep") {
    c.eps_h_db = {0.0, -20.0};
    c.freq_grid_hz = linear_grid(100.0, 8000.0, 10.0);
    c.realizations = 512;
  } else if (kind == "convergence") {
    c.solver.tol = 0.0;
  } else if (kind == "recursive") {
    c.eps_h_db = {0.0};
    c.realizations = 1024;
  } else if (kind == "acoustic") {
    c.realizations = 1;
  }
  return c;
}

inline void ExperimentConfig::validate() const {
  const auto& k = experiment_kinds();
  if (std::find(k.begin(), k.end(), experiment) == k.end())
    throw Error(ErrorKind::ConfigError, "unknown experiment '" + experiment + "'");
  if (realizations < 1) throw Error(ErrorKind::ConfigError, "realizations must be >= 1");
  if (scene.mics < 2) throw Error(ErrorKind::ConfigError, "need at least two microphones");
  if (!(scene.spacing_m > 0.0)) throw Error(ErrorKind::ConfigError, "spacing must be positive");
  if (scene.doas_deg.empty() || static_cast<int>(scene.doas_deg.size()) >= scene.mics)
    throw Error(ErrorKind::ConfigError, "need 1 <= N < M sources");
  if (!(scene.diversity_b > 0.0)) throw Error(ErrorKind::ConfigError, "diversity must be positive");
  if (!(scene.late_psd >= 0.0)) throw Error(ErrorKind::ConfigError, "late PSD must be non-negative");
  if (!(solver.alpha >= 0.0) || !std::isfinite(solver.alpha)) throw Error(ErrorKind::ConfigError, "alpha must be >= 0");
  for (const auto* g : {&alpha_grid, &acoustic.alpha_grid})
    for (double a : *g)
      if (!(a >= 0.0) || !std::isfinite(a)) throw Error(ErrorKind::ConfigError, "alpha grid entries must be >= 0");
  if (!(solver.tol >= 0.0)) throw Error(ErrorKind::ConfigError, "tol must be >= 0");
  if (solver.i_max < 1) throw Error(ErrorKind::ConfigError, "i_max must be >= 1");
  if (solver.init != "conventional-seed" && solver.init != "sum-constraint")
    throw Error(ErrorKind::ConfigError, "init must be conventional-seed or sum-constraint");
  if (experiment == "eps-sweep" || experiment == "convergence" || experiment == "freq-sweep" ||
      experiment == "alpha-sweep")
    if (eps_h_db.empty()) throw Error(ErrorKind::ConfigError, "eps_h_db grid is empty");
  if (experiment == "alpha-sweep" && alpha_grid.empty()) throw Error(ErrorKind::ConfigError, "alpha grid is empty");
  if (experiment == "freq-sweep") {
    if (freq_grid_hz.empty()) throw Error(ErrorKind::ConfigError, "frequency grid is empty");
    for (double f : freq_grid_hz)
      if (!(f > 0.0) || f > scene.sample_rate / 2.0) throw Error(ErrorKind::ConfigError, "frequency outside (0, fs/2]");
  }
  if (experiment == "recursive") {
    if (recursion.recursions < 1) throw Error(ErrorKind::ConfigError, "recursions must be >= 1");
    if (recursion.transition_doas_deg.size() != scene.doas_deg.size())
      throw Error(ErrorKind::ConfigError, "transition DoAs must match the source count");
  }
  if (experiment == "acoustic") {
    const auto& a = acoustic;
    const std::size_t n = a.doas_deg.size();
    if (n == 0 || static_cast<int>(n) >= scene.mics) throw Error(ErrorKind::ConfigError, "need 1 <= N < M sources");
    if (!a.source_wavs.empty() && a.source_wavs.size() != n)
      throw Error(ErrorKind::ConfigError, "one source WAV per DoA required");
    if (a.source_wavs.empty() && a.f0_hz.size() != n) throw Error(ErrorKind::ConfigError, "one f0 per source required");
    if (!a.rir_csvs.empty()) {
      if (a.rir_csvs.size() != n) throw Error(ErrorKind::ConfigError, "one RIR set per source required");
      for (const auto& r : a.rir_csvs)
        if (static_cast<int>(r.size()) != scene.mics) throw Error(ErrorKind::ConfigError, "one RIR per microphone required");
    }
    if (a.n_stft < 4 || a.n_stft % 2) throw Error(ErrorKind::ConfigError, "n_stft must be even");
    if (a.alpha_grid.empty()) throw Error(ErrorKind::ConfigError, "acoustic alpha grid is empty");
    if (!(a.duration_s > 0.0) || !(a.t60_s > 0.0) || !(a.tau_s > 0.0))
      throw Error(ErrorKind::ConfigError, "durations must be positive");
  }
}

namespace detail {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void check_keys(const nlohmann::json& j, const std::vector<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::ConfigError, where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw Error(ErrorKind::ConfigError, "unknown key '" + it.key() + "' in " + where);
}

}  // namespace detail

/// Reads a JSON config on top of the defaults for its experiment kind.
/// Unknown keys are rejected.
inline ExperimentConfig parse_config(const nlohmann::json& j, const std::string& kind_hint = "") {
  using detail::read_opt;
  try {
    detail::check_keys(j,
                       {"experiment", "seed", "realizations", "threads", "scene", "solver", "eps_h_db",
                        "alpha_grid", "freq_grid_hz", "recursion", "acoustic"},
                       "config");
    std::string kind = kind_hint;
    if (j.contains("experiment")) kind = j.at("experiment").get<std::string>();
    if (kind.empty()) throw Error(ErrorKind::ConfigError, "experiment kind missing");
    ExperimentConfig c = default_config(kind);
    read_opt(j, "seed", c.seed);
    read_opt(j, "realizations", c.realizations);
    read_opt(j, "threads", c.threads);
    read_opt(j, "eps_h_db", c.eps_h_db);
    read_opt(j, "alpha_grid", c.alpha_grid);
    if (j.contains("freq_grid_hz")) {
      const auto& f = j.at("freq_grid_hz");
      if (f.is_array()) {
        c.freq_grid_hz = f.get<std::vector<double>>();
      } else {
        detail::check_keys(f, {"start", "stop", "step"}, "freq_grid_hz");
        c.freq_grid_hz = linear_grid(f.at("start").get<double>(), f.at("stop").get<double>(), f.at("step").get<double>());
      }
    }
    if (j.contains("scene")) {
      const auto& s = j.at("scene");
      detail::check_keys(s, {"mics", "spacing_m", "speed_of_sound", "doas_deg", "freq_hz", "diversity_b", "late_psd",
                             "sample_rate"}, "scene");
      read_opt(s, "mics", c.scene.mics);
      read_opt(s, "spacing_m", c.scene.spacing_m);
      read_opt(s, "speed_of_sound", c.scene.speed_of_sound);
      read_opt(s, "doas_deg", c.scene.doas_deg);
      read_opt(s, "freq_hz", c.scene.freq_hz);
      read_opt(s, "diversity_b", c.scene.diversity_b);
      read_opt(s, "late_psd", c.scene.late_psd);
      read_opt(s, "sample_rate", c.scene.sample_rate);
    }
    if (j.contains("solver")) {
      const auto& s = j.at("solver");
      detail::check_keys(s, {"alpha", "i_max", "tol", "init"}, "solver");
      read_opt(s, "alpha", c.solver.alpha);
      read_opt(s, "i_max", c.solver.i_max);
      read_opt(s, "tol", c.solver.tol);
      read_opt(s, "init", c.solver.init);
    }
    if (j.contains("recursion")) {
      const auto& s = j.at("recursion");
      detail::check_keys(s, {"recursions", "eps_h_init_db", "transition_at", "transition_frames",
                             "transition_doas_deg", "beta_scale", "xi_th_db"}, "recursion");
      read_opt(s, "recursions", c.recursion.recursions);
      read_opt(s, "eps_h_init_db", c.recursion.eps_h_init_db);
      read_opt(s, "transition_at", c.recursion.transition_at);
      read_opt(s, "transition_frames", c.recursion.transition_frames);
      read_opt(s, "transition_doas_deg", c.recursion.transition_doas_deg);
      read_opt(s, "beta_scale", c.recursion.beta_scale);
      read_opt(s, "xi_th_db", c.recursion.xi_th_db);
    }
    if (j.contains("acoustic")) {
      const auto& s = j.at("acoustic");
      detail::check_keys(s, {"duration_s", "doas_deg", "f0_hz", "source_wavs", "rir_csvs", "t60_s", "drr_db",
                             "rir_length_s", "n_stft", "tau_s", "alpha_grid", "retf_update", "beta_scale",
                             "xi_th_db"}, "acoustic");
      auto& a = c.acoustic;
      read_opt(s, "duration_s", a.duration_s);
      read_opt(s, "doas_deg", a.doas_deg);
      read_opt(s, "f0_hz", a.f0_hz);
      read_opt(s, "source_wavs", a.source_wavs);
      read_opt(s, "rir_csvs", a.rir_csvs);
      read_opt(s, "t60_s", a.t60_s);
      read_opt(s, "drr_db", a.drr_db);
      read_opt(s, "rir_length_s", a.rir_length_s);
      read_opt(s, "n_stft", a.n_stft);
      read_opt(s, "tau_s", a.tau_s);
      read_opt(s, "alpha_grid", a.alpha_grid);
      read_opt(s, "retf_update", a.retf_update);
      read_opt(s, "beta_scale", a.beta_scale);
      read_opt(s, "xi_th_db", a.xi_th_db);
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ConfigError, e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path, const std::string& kind_hint = "") {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::ConfigError, "cannot open config " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ConfigError, path + ": " + e.what());
  }
  return parse_config(j, kind_hint);
}

// ------------------------------------------------------------ output

struct ResultRow {
  std::string experiment;
  std::optional<double> eps_h_db;
  std::optional<double> alpha;
  std::optional<double> freq_hz;
  std::optional<int> iteration;
  std::optional<int> recursion;
  std::optional<double> band_lo_hz;
  std::optional<double> band_hi_hz;
  std::string statistic;
  std::string metric;
  double value = 0.0;
};

using ResultTable = std::vector<ResultRow>;

inline std::string format_value(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline constexpr const char* kCsvHeader =
    "experiment,eps_h_db,alpha,freq_hz,iteration,recursion,band_lo_hz,band_hi_hz,statistic,metric,value";

inline std::string to_csv(const ResultTable& rows) {
  std::ostringstream os;
  os << kCsvHeader << '\n';
  auto opt = [&](const auto& o) {
    if (o) os << format_value(static_cast<double>(*o));
    os << ',';
  };
  for (const auto& r : rows) {
    os << r.experiment << ',';
    opt(r.eps_h_db);
    opt(r.alpha);
    opt(r.freq_hz);
    opt(r.iteration);
    opt(r.recursion);
    opt(r.band_lo_hz);
    opt(r.band_hi_hz);
    os << r.statistic << ',' << r.metric << ',' << format_value(r.value) << '\n';
  }
  return os.str();
}

inline void write_csv(const std::string& path, const ResultTable& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::IoError, "cannot open " + path);
  os << to_csv(rows);
  if (!os) throw Error(ErrorKind::IoError, "write failed for " + path);
}

/// Adds median, q1 and q3 rows of the finite-or-infinite values; NaN marks a
/// failed trial and is left out (and counted in a separate row).
inline void push_stats(ResultTable& rows, ResultRow base, const std::string& metric, const std::vector<double>& values) {
  std::vector<double> v;
  std::size_t failed = 0;
  for (double x : values) {
    if (std::isnan(x)) ++failed;
    else v.push_back(x);
  }
  base.metric = metric;
  const std::pair<const char*, double> stats[] = {{"median", 0.5}, {"q1", 0.25}, {"q3", 0.75}};
  for (const auto& [name, q] : stats) {
    base.statistic = name;
    base.value = quantile(v, q);
    rows.push_back(base);
  }
  if (failed) {
    base.statistic = "count";
    base.metric = metric + "_failed";
    base.value = static_cast<double>(failed);
    rows.push_back(base);
  }
}

// ------------------------------------------------------------ parallel

inline unsigned resolve_threads(int threads) {
  if (threads > 0) return static_cast<unsigned>(threads);
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs f(i) for i in [0, n) on a small worker pool. The first exception is
/// rethrown after all workers stop.
template <typename F>
void parallel_for(std::size_t n, int threads, F&& f) {
  const unsigned t = static_cast<unsigned>(std::min<std::size_t>(resolve_threads(threads), n));
  if (t <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < t; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n || stop.load()) return;
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(mu);
          if (!err) err = std::current_exception();
          stop = true;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

// ------------------------------------------------------------ model-based

namespace detail {

enum StreamTag : std::uint64_t {
  kEpsSweep = 1,
  kAlphaSweep = 2,
  kFreqSweep = 3,
  kConvergence = 4,
  kRecursive = 5,
  kAcoustic = 6,
};

inline ArrayGeometry make_geometry(const SceneSettings& s) {
  return ArrayGeometry::uniform_linear(s.mics, s.spacing_m, s.speed_of_sound);
}

inline SceneConfig make_scene_config(const SceneSettings& s, double freq_hz) {
  SceneConfig c;
  c.doas_deg = s.doas_deg;
  c.freq_hz = freq_hz;
  c.laplace_diversity_b = s.diversity_b;
  c.late_psd_phi_xl = s.late_psd;
  c.sample_rate = s.sample_rate;
  return c;
}

/// Source draw and RETF error direction of one realization. Reused across
/// every grid point of a sweep.
struct RealizationDraw {
  CVector s;
  CMatrix E;
};

inline RealizationDraw draw_realization(const ExperimentConfig& c, StreamTag tag, std::size_t r) {
  Rng rng = Rng::derive(c.seed, {tag, static_cast<std::uint64_t>(r)});
  const auto N = static_cast<Eigen::Index>(c.scene.doas_deg.size());
  RealizationDraw d;
  d.s = sample_sources(c.scene.diversity_b, N, rng);
  d.E = draw_retf_error(c.scene.mics, N, rng);
  // Guard against an all-zero draw, which has probability zero.
  if (d.s.squaredNorm() == 0.0) d.s(0) = Complex(c.scene.diversity_b, 0.0);
  return d;
}

struct ModelTrial {
  double eps_conventional = 0.0;
  double eps_square_root = 0.0;
  SquareRootSolution sq;
};

inline SquareRootInit make_init(const std::string& mode, const RetfMatrix& H_hat, const HermitianMatrix& psi_xe_hat) {
  if (mode == "sum-constraint") return SumConstraintInit{};
  return ConventionalSeed{conventional_seed(H_hat, psi_xe_hat)};
}

/// One scene at one grid point: both solvers on the subspace estimate of the
/// exact correlation matrix with a perturbed RETF matrix.
inline ModelTrial model_trial(const CorrelationScene& sc, const EarlyEstimate& est, const RetfMatrix& H_hat,
                              const SolverSettings& s, double alpha, double sq_tol, const std::string& init) {
  ModelTrial t;
  ConventionalProblem cp{est.psi_xe_hat, H_hat, alpha, std::nullopt, s.i_max, s.tol};
  t.eps_conventional = psd_error(solve_conventional_mp(cp).phi_s_hat, sc.phi_s_true);
  SquareRootProblem sp{est.psi_xe_sqrt_hat, H_hat, alpha, s.i_max, sq_tol, make_init(init, H_hat, est.psi_xe_hat)};
  t.sq = solve_square_root_mp(sp);
  t.eps_square_root = psd_error(t.sq.phi_s_hat, sc.phi_s_true);
  return t;
}

inline ResultRow base_row(const std::string& exp) {
  ResultRow r;
  r.experiment = exp;
  return r;
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace detail

/// Median and quartiles of the PSD error of both solvers versus RETF error.
inline ResultTable run_eps_sweep(const ExperimentConfig& c) {
  c.validate();
  using namespace detail;
  const ArrayGeometry geom = make_geometry(c.scene);
  const SceneConfig scfg = make_scene_config(c.scene, c.scene.freq_hz);
  const std::size_t R = static_cast<std::size_t>(c.realizations);
  const std::size_t G = c.eps_h_db.size();
  std::vector<std::vector<double>> conv(G, std::vector<double>(R)), sq(G, std::vector<double>(R));
  parallel_for(R, c.threads, [&](std::size_t r) {
    const RealizationDraw d = draw_realization(c, kEpsSweep, r);
    const CorrelationScene sc = synthesize_scene(geom, scfg, d.s);
    const EarlyEstimate est = estimate_early(sc.psi_x, sc.gamma, sc.H_true.sources());
    for (std::size_t g = 0; g < G; ++g) {
      try {
        const RetfMatrix Hh = apply_retf_error(sc.H_true, d.E, c.eps_h_db[g]);
        const ModelTrial t = model_trial(sc, est, Hh, c.solver, c.solver.alpha, c.solver.tol, c.solver.init);
        conv[g][r] = t.eps_conventional;
        sq[g][r] = t.eps_square_root;
      } catch (const Error&) {
        conv[g][r] = sq[g][r] = kNaN;
      }
    }
  });
  ResultTable rows;
  for (std::size_t g = 0; g < G; ++g) {
    ResultRow b = base_row(c.experiment);
    b.eps_h_db = c.eps_h_db[g];
    b.alpha = c.solver.alpha;
    b.freq_hz = c.scene.freq_hz;
    push_stats(rows, b, "eps_phi_conventional_db", conv[g]);
    push_stats(rows, b, "eps_phi_square_root_db", sq[g]);
  }
  return rows;
}

/// PSD error versus the soft-constraint weight at every configured RETF error.
inline ResultTable run_alpha_sweep(const ExperimentConfig& c) {
  c.validate();
  using namespace detail;
  const ArrayGeometry geom = make_geometry(c.scene);
  const SceneConfig scfg = make_scene_config(c.scene, c.scene.freq_hz);
  const std::size_t R = static_cast<std::size_t>(c.realizations);
  const std::size_t E = c.eps_h_db.size(), A = c.alpha_grid.size();
  std::vector<std::vector<double>> conv(E * A, std::vector<double>(R)), sq(E * A, std::vector<double>(R));
  parallel_for(R, c.threads, [&](std::size_t r) {
    const RealizationDraw d = draw_realization(c, kAlphaSweep, r);
    const CorrelationScene sc = synthesize_scene(geom, scfg, d.s);
    const EarlyEstimate est = estimate_early(sc.psi_x, sc.gamma, sc.H_true.sources());
    for (std::size_t e = 0; e < E; ++e) {
      const RetfMatrix Hh = apply_retf_error(sc.H_true, d.E, c.eps_h_db[e]);
      for (std::size_t a = 0; a < A; ++a) {
        try {
          const ModelTrial t = model_trial(sc, est, Hh, c.solver, c.alpha_grid[a], c.solver.tol, c.solver.init);
          conv[e * A + a][r] = t.eps_conventional;
          sq[e * A + a][r] = t.eps_square_root;
        } catch (const Error&) {
          conv[e * A + a][r] = sq[e * A + a][r] = kNaN;
        }
      }
    }
  });
  ResultTable rows;
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t a = 0; a < A; ++a) {
      ResultRow b = base_row(c.experiment);
      b.eps_h_db = c.eps_h_db[e];
      b.alpha = c.alpha_grid[a];
      b.freq_hz = c.scene.freq_hz;
      push_stats(rows, b, "eps_phi_conventional_db", conv[e * A + a]);
      push_stats(rows, b, "eps_phi_square_root_db", sq[e * A + a]);
    }
  return rows;
}

/// 10 log10(|h_n^H h_n'| / M) for every source pair, plus the maximum.
inline std::vector<std::pair<std::string, double>> collinearity_db(const RetfMatrix& H) {
  std::vector<std::pair<std::string, double>> out;
  const CMatrix G = H.matrix().adjoint() * H.matrix();
  const double M = static_cast<double>(H.mics());
  double mx = -kInf;
  for (Eigen::Index n = 0; n < H.sources(); ++n)
    for (Eigen::Index m = n + 1; m < H.sources(); ++m) {
      const double v = to_db(std::abs(G(n, m)) / M);
      mx = std::max(mx, v);
      out.emplace_back("collinearity_db_" + std::to_string(n + 1) + "_" + std::to_string(m + 1), v);
    }
  out.emplace_back("collinearity_max_db", mx);
  return out;
}

/// PSD error versus frequency, with the RETF collinearity diagnostic.
inline ResultTable run_freq_sweep(const ExperimentConfig& c) {
  c.validate();
  using namespace detail;
  const ArrayGeometry geom = make_geometry(c.scene);
  const std::size_t R = static_cast<std::size_t>(c.realizations);
  const std::size_t E = c.eps_h_db.size(), F = c.freq_grid_hz.size();
  std::vector<std::vector<double>> conv(E * F, std::vector<double>(R)), sq(E * F, std::vector<double>(R));
  parallel_for(R, c.threads, [&](std::size_t r) {
    const RealizationDraw d = draw_realization(c, kFreqSweep, r);
    for (std::size_t f = 0; f < F; ++f) {
      const CorrelationScene sc = synthesize_scene(geom, make_scene_config(c.scene, c.freq_grid_hz[f]), d.s);
      const EarlyEstimate est = estimate_early(sc.psi_x, sc.gamma, sc.H_true.sources());
      for (std::size_t e = 0; e < E; ++e) {
        try {
          const RetfMatrix Hh = apply_retf_error(sc.H_true, d.E, c.eps_h_db[e]);
          const ModelTrial t = model_trial(sc, est, Hh, c.solver, c.solver.alpha, c.solver.tol, c.solver.init);
          conv[e * F + f][r] = t.eps_conventional;
          sq[e * F + f][r] = t.eps_square_root;
        } catch (const Error&) {
          conv[e * F + f][r] = sq[e * F + f][r] = kNaN;
        }
      }
    }
  });
  ResultTable rows;
  for (std::size_t f = 0; f < F; ++f) {
    const RetfMatrix H = steering_retf(geom, c.scene.doas_deg, c.freq_grid_hz[f]);
    for (const auto& [name, v] : collinearity_db(H)) {
      ResultRow b = base_row(c.experiment);
      b.freq_hz = c.freq_grid_hz[f];
      b.statistic = "value";
      b.metric = name;
      b.value = v;
      rows.push_back(b);
    }
    for (std::size_t e = 0; e < E; ++e) {
      ResultRow b = base_row(c.experiment);
      b.eps_h_db = c.eps_h_db[e];
      b.alpha = c.solver.alpha;
      b.freq_hz = c.freq_grid_hz[f];
      push_stats(rows, b, "eps_phi_conventional_db", conv[e * F + f]);
      push_stats(rows, b, "eps_phi_square_root_db", sq[e * F + f]);
    }
  }
  return rows;
}

/// Square-root PSD error per iteration for both initializations, plus the
/// per-realization distance to the last iteration.
inline ResultTable run_convergence(const ExperimentConfig& c) {
  c.validate();
  using namespace detail;
  const ArrayGeometry geom = make_geometry(c.scene);
  const SceneConfig scfg = make_scene_config(c.scene, c.scene.freq_hz);
  const std::size_t R = static_cast<std::size_t>(c.realizations);
  const std::size_t E = c.eps_h_db.size();
  const auto I = static_cast<std::size_t>(c.solver.i_max);
  const std::array<std::string, 2> inits{"conventional-seed", "sum-constraint"};
  // [init][eps][iteration][realization]
  std::vector<std::vector<std::vector<std::vector<double>>>> err(
      2, std::vector<std::vector<std::vector<double>>>(E, std::vector<std::vector<double>>(I, std::vector<double>(R))));
  std::vector<std::vector<double>> conv(E, std::vector<double>(R));
  parallel_for(R, c.threads, [&](std::size_t r) {
    const RealizationDraw d = draw_realization(c, kConvergence, r);
    const CorrelationScene sc = synthesize_scene(geom, scfg, d.s);
    const EarlyEstimate est = estimate_early(sc.psi_x, sc.gamma, sc.H_true.sources());
    for (std::size_t e = 0; e < E; ++e) {
      const RetfMatrix Hh = apply_retf_error(sc.H_true, d.E, c.eps_h_db[e]);
      for (std::size_t k = 0; k < 2; ++k) {
        try {
          const ModelTrial t = model_trial(sc, est, Hh, c.solver, c.solver.alpha, c.solver.tol, inits[k]);
          if (k == 0) conv[e][r] = t.eps_conventional;
          for (std::size_t i = 0; i < I; ++i) {
            // A converged run holds its last value.
            const std::size_t src = std::min(i, t.sq.phi_trace.size() - 1);
            err[k][e][i][r] = psd_error(PsdVector(t.sq.phi_trace[src]), sc.phi_s_true);
          }
        } catch (const Error&) {
          for (std::size_t i = 0; i < I; ++i) err[k][e][i][r] = kNaN;
          if (k == 0) conv[e][r] = kNaN;
        }
      }
    }
  });
  ResultTable rows;
  for (std::size_t e = 0; e < E; ++e) {
    ResultRow b = base_row(c.experiment);
    b.eps_h_db = c.eps_h_db[e];
    b.alpha = c.solver.alpha;
    b.freq_hz = c.scene.freq_hz;
    push_stats(rows, b, "eps_phi_conventional_db", conv[e]);
    for (std::size_t i = 0; i < I; ++i) {
      b.iteration = static_cast<int>(i + 1);
      for (std::size_t k = 0; k < 2; ++k) {
        const std::string tag = k == 0 ? "seeded" : "sum";
        push_stats(rows, b, "eps_phi_square_root_" + tag + "_db", err[k][e][i]);
        std::vector<double> delta(R);
        for (std::size_t r = 0; r < R; ++r) {
          const double a = err[k][e][i][r], z = err[k][e][I - 1][r];
          delta[r] = (std::isinf(a) && std::isinf(z) && a == z) ? 0.0 : std::abs(a - z);
        }
        push_stats(rows, b, "abs_delta_to_last_" + tag + "_db", delta);
      }
    }
  }
  return rows;
}

/// Frame recursion at one bin. The square-root arm refines its RETF estimate
/// after every frame; the conventional arm keeps its initial estimate.
inline ResultTable run_recursive(const ExperimentConfig& c) {
  c.validate();
  using namespace detail;
  const ArrayGeometry geom = make_geometry(c.scene);
  const std::size_t R = static_cast<std::size_t>(c.realizations);
  const auto T = static_cast<std::size_t>(c.recursion.recursions);
  const auto& rc = c.recursion;
  const double b = c.scene.diversity_b;
  RetfUpdateConfig ucfg{rc.beta_scale * b * b, rc.xi_th_db, 0.0};
  SceneConfig base = make_scene_config(c.scene, c.scene.freq_hz);
  SceneConfig moved = base;
  moved.doas_deg = rc.transition_doas_deg;
  const RetfMatrix H_base = steering_retf(geom, base.doas_deg, base.freq_hz);
  // [metric][recursion][realization]
  std::vector<std::vector<std::vector<double>>> m(4, std::vector<std::vector<double>>(T, std::vector<double>(R)));
  parallel_for(R, c.threads, [&](std::size_t r) {
    Rng rng = Rng::derive(c.seed, {kRecursive, static_cast<std::uint64_t>(r)});
    const auto N = H_base.sources();
    const RetfMatrix H0 = apply_retf_error(H_base, draw_retf_error(H_base.mics(), N, rng), rc.eps_h_init_db);
    RetfMatrix H_sq = H0;
    const RetfMatrix& H_conv = H0;
    for (std::size_t t = 0; t < T; ++t) {
      const int rec = static_cast<int>(t + 1);
      const bool in_transition = rec >= rc.transition_at && rec < rc.transition_at + rc.transition_frames;
      const CVector s = sample_sources(b, N, rng);
      const CorrelationScene sc = synthesize_scene(geom, in_transition ? moved : base, s);
      m[0][t][r] = retf_error(H_sq, sc.H_true);
      m[1][t][r] = retf_error(H_conv, sc.H_true);
      try {
        const EarlyEstimate est = estimate_early(sc.psi_x, sc.gamma, N);
        ConventionalProblem cp{est.psi_xe_hat, H_conv, c.solver.alpha, std::nullopt, c.solver.i_max, c.solver.tol};
        m[3][t][r] = psd_error(solve_conventional_mp(cp).phi_s_hat, sc.phi_s_true);
        SquareRootProblem sp{est.psi_xe_sqrt_hat, H_sq, c.solver.alpha, c.solver.i_max, c.solver.tol,
                             make_init(c.solver.init, H_sq, est.psi_xe_hat)};
        const SquareRootSolution sol = solve_square_root_mp(sp);
        m[2][t][r] = psd_error(sol.phi_s_hat, sc.phi_s_true);
        const GateVector g = gate(power_ratio(sol.phi_s_hat, ucfg.phi_reg), ucfg);
        H_sq = update_retf(H_sq, est.psi_xe_sqrt_hat, sol.omega_hat, sol.phi_sqrt_hat, g);
      } catch (const Error&) {
        m[2][t][r] = m[3][t][r] = kNaN;
      }
    }
  });
  const std::array<const char*, 4> names{"eps_h_square_root_db", "eps_h_conventional_db", "eps_phi_square_root_db",
                                         "eps_phi_conventional_db"};
  ResultTable rows;
  for (std::size_t t = 0; t < T; ++t) {
    ResultRow bs = base_row(c.experiment);
    bs.alpha = c.solver.alpha;
    bs.freq_hz = c.scene.freq_hz;
    bs.recursion = static_cast<int>(t + 1);
    for (std::size_t k = 0; k < 4; ++k) push_stats(rows, bs, names[k], m[k][t]);
  }
  return rows;
}

// ------------------------------------------------------------ acoustic

struct AcousticBand {
  Band band;
  double sir_db[2]{};  // conventional, square-root
  double sar_db[2]{};
  double sdr_db[2]{};
  double alpha[2]{};
};

struct AcousticReport {
  std::vector<AcousticBand> bands;
  Eigen::Index frames = 0;
  double stft_roundtrip_error = 0.0;
  double max_reconstruction_error = 0.0;
  double max_orthogonality_error = 0.0;
  long ambiguous_associations = 0;
  ResultTable rows;
};

namespace detail {

inline constexpr double kRoundTripTolerance = 1e-9;
inline constexpr double kDecompositionTolerance = 1e-8;

inline void check_decomposition(const PsdTrack& est, const TrackDecomposition& d, double& recon, double& ortho) {
  for (std::size_t n = 0; n < est.data.size(); ++n)
    for (Eigen::Index k = 0; k < est.bins(); ++k) {
      const RVector y = est.data[n].col(k).cwiseSqrt();
      const double scale = std::max(y.squaredNorm(), 1e-300);
      const RVector a = d.bar[n].col(k), b = d.e_int[n].col(k), e = d.e_art[n].col(k);
      recon = std::max(recon, (a + b + e - y).cwiseAbs().maxCoeff() / std::sqrt(scale));
      ortho = std::max({ortho, std::abs(a.dot(b)) / scale, std::abs(a.dot(e)) / scale, std::abs(b.dot(e)) / scale});
    }
}

}  // namespace detail

/// Full acoustic pipeline on a simulated multichannel recording.
inline AcousticReport run_acoustic_report(const ExperimentConfig& c) {
  c.validate();
  using namespace detail;
  const auto& ac = c.acoustic;
  const double fs = c.scene.sample_rate;
  const ArrayGeometry geom = make_geometry(c.scene);
  const std::size_t N = ac.doas_deg.size();
  const Eigen::Index M = geom.mics();
  const auto len = static_cast<Eigen::Index>(std::lround(ac.duration_s * fs));

  // Inputs are loaded and checked before any processing.
  std::vector<Waveform> src;
  std::vector<std::vector<Rir>> rirs;
  for (std::size_t n = 0; n < N; ++n) {
    Waveform w;
    if (!ac.source_wavs.empty()) {
      w = read_wav(ac.source_wavs[n]);
      if (w.sample_rate != fs) throw Error(ErrorKind::ConfigError, ac.source_wavs[n] + ": sample rate mismatch");
      RMatrix x = RMatrix::Zero(len, 1);
      const Eigen::Index k = std::min(len, w.length());
      x.topRows(k) = w.samples.col(0).head(k);
      w.samples = x;
    } else {
      Rng rng = Rng::derive(c.seed, {kAcoustic, 1, n});
      w = speech_like_source({ac.duration_s, ac.f0_hz[n], fs, 4.0}, rng);
    }
    src.push_back(std::move(w));
    if (!ac.rir_csvs.empty()) {
      std::vector<Rir> set;
      for (const auto& p : ac.rir_csvs[n]) set.push_back(read_rir_csv(p, fs, ac.n_stft));
      rirs.push_back(std::move(set));
    } else {
      Rng rng = Rng::derive(c.seed, {kAcoustic, 2, n});
      ArrayRirConfig rc;
      rc.t60_s = ac.t60_s;
      rc.drr_db = ac.drr_db;
      rc.length_s = ac.rir_length_s;
      rc.early_len = ac.n_stft;
      rirs.push_back(synth_array_rirs(geom, ac.doas_deg[n], fs, rc, rng));
    }
  }

  Waveform mic{RMatrix::Zero(len, M), fs};
  for (std::size_t n = 0; n < N; ++n)
    for (Eigen::Index m = 0; m < M; ++m)
      mic.samples.col(m) += fft_convolve(src[n].samples.col(0), rirs[n][static_cast<std::size_t>(m)].taps).head(len);

  AcousticReport rep;
  const Eigen::Index n_stft = ac.n_stft;
  const StftTensor X = stft_analyze(mic, n_stft);
  {
    const Waveform back = stft_synthesize(X);
    const Eigen::Index lo = X.hop, hi = X.frames() * X.hop;
    const double peak = std::max(1.0, mic.samples.cwiseAbs().maxCoeff());
    for (Eigen::Index m = 0; m < M; ++m)
      rep.stft_roundtrip_error = std::max(
          rep.stft_roundtrip_error,
          (back.samples.col(m).segment(lo, hi - lo) - mic.samples.col(m).segment(lo, hi - lo)).cwiseAbs().maxCoeff());
    if (rep.stft_roundtrip_error > kRoundTripTolerance * peak)
      throw Error(ErrorKind::InvariantViolation, "STFT round trip error " + format_value(rep.stft_roundtrip_error));
  }
  const Eigen::Index L = X.frames(), K = X.bins();
  rep.frames = L;

  // Reference early tracks and the early STFT coefficients used for the
  // per-band diversity fit.
  PsdTrack ref(static_cast<Eigen::Index>(N), L, K);
  std::vector<CMatrix> early_stft;
  for (std::size_t n = 0; n < N; ++n) {
    const Rir& r0 = rirs[n][0];
    const RVector y = fft_convolve(src[n].samples.col(0), r0.taps.head(r0.early_len)).head(len);
    const StftTensor t = stft_analyze(Waveform{RMatrix(y), fs}, n_stft);
    early_stft.push_back(t.channels.front());
    ref.data[n] = t.channels.front().cwiseAbs2();
  }
  const std::vector<Band> bands = third_octave_bands(fs, n_stft);
  const double df = fs / static_cast<double>(n_stft);
  std::vector<double> beta_bin(static_cast<std::size_t>(K), 0.0);
  for (const Band& b : bands) {
    double acc = 0.0;
    long cnt = 0;
    for (Eigen::Index k = 1; k < K; ++k) {
      const double f = k * df;
      if (!(f > b.lo_hz && f <= b.hi_hz)) continue;
      for (const auto& S : early_stft)
        for (Eigen::Index l = 0; l < L; ++l) {
          acc += std::abs(S(l, k).real()) + std::abs(S(l, k).imag());
          cnt += 2;
        }
    }
    const double bhat = cnt ? 2.0 * acc / static_cast<double>(cnt) : 0.0;
    for (Eigen::Index k = 1; k < K; ++k) {
      const double f = k * df;
      if (f > b.lo_hz && f <= b.hi_hz) beta_bin[static_cast<std::size_t>(k)] = ac.beta_scale * bhat * bhat;
    }
  }

  const std::size_t A = ac.alpha_grid.size();
  // est[method][alpha]
  std::vector<std::vector<PsdTrack>> est(2, std::vector<PsdTrack>(A, PsdTrack(static_cast<Eigen::Index>(N), L, K)));
  const double zeta = std::exp(-static_cast<double>(n_stft) / (2.0 * fs * ac.tau_s));
  std::vector<long> ambiguous(static_cast<std::size_t>(K), 0);
  parallel_for(static_cast<std::size_t>(K - 1), c.threads, [&](std::size_t kk) {
    const auto k = static_cast<Eigen::Index>(kk + 1);
    const double f = k * df;
    const HermitianMatrix G = diffuse_coherence(geom, f);
    const RetfMatrix H0 = steering_retf(geom, ac.doas_deg, f);
    SmootherState st(zeta);
    std::vector<EarlyEstimate> frames;
    frames.reserve(static_cast<std::size_t>(L));
    CVector x(M);
    for (Eigen::Index l = 0; l < L; ++l) {
      for (Eigen::Index m = 0; m < M; ++m) x(m) = X.channels[static_cast<std::size_t>(m)](l, k);
      const FrameEstimate fe = process_frame(st, HermitianMatrix(CMatrix(x * x.adjoint())), G, static_cast<Eigen::Index>(N));
      if (fe.ambiguous) ++ambiguous[static_cast<std::size_t>(k)];
      frames.push_back(fe.early);
    }
    const double beta = beta_bin[static_cast<std::size_t>(k)];
    for (std::size_t a = 0; a < A; ++a) {
      const double alpha = ac.alpha_grid[a];
      RetfMatrix Hs = H0;
      for (Eigen::Index l = 0; l < L; ++l) {
        const EarlyEstimate& e = frames[static_cast<std::size_t>(l)];
        ConventionalProblem cp{e.psi_xe_hat, H0, alpha, std::nullopt, c.solver.i_max, c.solver.tol};
        const RVector pc = solve_conventional_mp(cp).phi_s_hat.values();
        SquareRootProblem sp{e.psi_xe_sqrt_hat, Hs, alpha, c.solver.i_max, c.solver.tol,
                             make_init(c.solver.init, Hs, e.psi_xe_hat)};
        const SquareRootSolution sol = solve_square_root_mp(sp);
        for (std::size_t n = 0; n < N; ++n) {
          est[0][a].data[n](l, k) = pc(static_cast<Eigen::Index>(n));
          est[1][a].data[n](l, k) = sol.phi_s_hat(static_cast<Eigen::Index>(n));
        }
        if (ac.retf_update && beta > 0.0) {
          const RetfUpdateConfig ucfg{beta, ac.xi_th_db, e.phi_xl_hat};
          const GateVector g = gate(power_ratio(sol.phi_s_hat, ucfg.phi_reg), ucfg);
          Hs = update_retf(Hs, e.psi_xe_sqrt_hat, sol.omega_hat, sol.phi_sqrt_hat, g);
        }
      }
    }
  });
  for (long v : ambiguous) rep.ambiguous_associations += v;

  // ratios[method][alpha][band]
  std::vector<std::vector<std::vector<BandRatios>>> ratios(2, std::vector<std::vector<BandRatios>>(A));
  for (std::size_t meth = 0; meth < 2; ++meth)
    for (std::size_t a = 0; a < A; ++a) {
      const TrackDecomposition d = decompose_tracks(est[meth][a], ref);
      check_decomposition(est[meth][a], d, rep.max_reconstruction_error, rep.max_orthogonality_error);
      ratios[meth][a] = band_ratios(d, fs, n_stft, bands);
    }
  if (rep.max_reconstruction_error > kDecompositionTolerance || rep.max_orthogonality_error > kDecompositionTolerance)
    throw Error(ErrorKind::InvariantViolation, "track decomposition invariants failed");

  const std::array<const char*, 2> names{"conventional", "square_root"};
  for (std::size_t bi = 0; bi < bands.size(); ++bi) {
    AcousticBand ab;
    ab.band = bands[bi];
    for (std::size_t meth = 0; meth < 2; ++meth) {
      // Best weight per band by SIR; NaN never wins.
      std::size_t best = 0;
      for (std::size_t a = 1; a < A; ++a)
        if (ratios[meth][a][bi].sir_db > ratios[meth][best][bi].sir_db || std::isnan(ratios[meth][best][bi].sir_db))
          best = a;
      ab.sir_db[meth] = ratios[meth][best][bi].sir_db;
      ab.sar_db[meth] = ratios[meth][best][bi].sar_db;
      ab.sdr_db[meth] = ratios[meth][best][bi].sdr_db;
      ab.alpha[meth] = ac.alpha_grid[best];
    }
    rep.bands.push_back(ab);
    ResultRow b = base_row(c.experiment);
    b.band_lo_hz = ab.band.lo_hz;
    b.band_hi_hz = ab.band.hi_hz;
    b.statistic = "value";
    for (std::size_t meth = 0; meth < 2; ++meth) {
      const std::string tag = names[meth];
      b.alpha = ab.alpha[meth];
      b.metric = "sir_" + tag + "_db";
      b.value = ab.sir_db[meth];
      rep.rows.push_back(b);
      b.metric = "sar_" + tag + "_db";
      b.value = ab.sar_db[meth];
      rep.rows.push_back(b);
      b.metric = "sdr_" + tag + "_db";
      b.value = ab.sdr_db[meth];
      rep.rows.push_back(b);
    }
  }
  return rep;
}

inline ResultTable run_acoustic(const ExperimentConfig& c) { return run_acoustic_report(c).rows; }

inline ResultTable run_experiment(const ExperimentConfig& c) {
  if (c.experiment == "eps-sweep") return run_eps_sweep(c);
  if (c.experiment == "alpha-sweep") return run_alpha_sweep(c);
  if (c.experiment == "freq-sweep") return run_freq_sweep(c);
  if (c.experiment == "convergence") return run_convergence(c);
  if (c.experiment == "recursive") return run_recursive(c);
  if (c.experiment == "acoustic") return run_acoustic(c);
  throw Error(ErrorKind::ConfigError, "unknown experiment '" + c.experiment + "'");
}

}  // namespace earlypsd
