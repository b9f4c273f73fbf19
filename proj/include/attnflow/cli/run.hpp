#pragma once

// Mode drivers and the process entry point. Exit codes:
//   0  success
//   1  verification failed, or an unexpected runtime failure
//   2  configuration or parse error
//   3  mathematical precondition violated (e.g. singular V where A is needed)

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "attnflow/analyze.hpp"
#include "attnflow/cli/config.hpp"
#include "attnflow/integrate.hpp"
#include "attnflow/params.hpp"

namespace attnflow::cli {

enum ExitCode : int { kOk = 0, kFailed = 1, kConfigError = 2, kMathError = 3 };

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / name);
  if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
  out << std::setprecision(17);
  return out;
}

inline std::string regime_cell(const DerivedWA& wa) {
  auto sign = [](const Mat& m) {
    const Vect ev = sym_eigenvalues(m);
    switch (classify_eigenvalues(ev, default_definiteness_tol(ev))) {
      case Definiteness::PositiveDefinite: return std::string("pos");
      case Definiteness::NegativeDefinite: return std::string("neg");
      case Definiteness::Indefinite: return std::string("indef");
      case Definiteness::NearSingular: return std::string("singular");
    }
    return std::string("?");
  };
  return "Wsym:" + sign(wa.w) + " Asym:" + sign(wa.a);
}

}  // namespace detail

inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
  const std::size_t dim = traj.states.front().cols();
  out << "t,token_index";
  for (std::size_t c = 0; c < dim; ++c) out << ",x_" << c;
  out << '\n';
  for (std::size_t k = 0; k < traj.size(); ++k)
    for (std::size_t l = 0; l < traj.states[k].rows(); ++l) {
      out << traj.times[k] << ',' << l;
      for (std::size_t c = 0; c < dim; ++c) out << ',' << traj.states[k](l, c);
      out << '\n';
    }
}

inline void write_metrics_csv(std::ostream& out, const MetricSeries& m) {
  out << "t,mean_norm,mean_pairwise_dist\n";
  for (std::size_t k = 0; k < m.times.size(); ++k)
    out << m.times[k] << ',' << m.mean_token_norm[k] << ',' << m.mean_pairwise_dist[k] << '\n';
}

struct SimulationRun {
  ModelParams params;
  IntegratorConfig integrator;
  Trajectory trajectory;
};

inline SimulationRun simulate_config(const RunConfig& cfg) {
  SimulationRun run;
  run.params = resolve_params(cfg);
  const Mat x0 = resolve_initial(cfg, run.params.dim);
  run.integrator = resolve_integrator(cfg.integrator, run.params.v);
  run.trajectory = integrate_model(run.params, cfg.posenc, x0, run.integrator);
  return run;
}

inline void write_run_summary(const std::filesystem::path& dir, const SimulationRun& run) {
  auto out = detail::open_out(dir, "run.json");
  json j;
  j["h"] = run.integrator.h;
  j["T"] = run.integrator.horizon;
  j["samples"] = run.trajectory.size();
  j["terminated"] = run.trajectory.blew_up() ? "blowup" : "horizon";
  if (run.trajectory.blew_up()) j["blowup_time"] = run.trajectory.blowup_time;
  j["regime"] = to_string(classify_regime(run.trajectory));
  out << j.dump(2) << '\n';
}

inline int run_simulate(const RunConfig& cfg, std::ostream& log = std::cout) {
  const SimulationRun run = simulate_config(cfg);
  const std::filesystem::path dir = cfg.out_dir;
  {
    auto out = detail::open_out(dir, "trajectory.csv");
    write_trajectory_csv(out, run.trajectory);
  }
  {
    auto out = detail::open_out(dir, "metrics.csv");
    write_metrics_csv(out, trajectory_metrics(run.trajectory, std::nullopt));
  }
  write_run_summary(dir, run);
  log << "simulate: " << run.trajectory.size() << " samples, h=" << run.integrator.h
      << ", terminated=" << (run.trajectory.blew_up() ? "blowup" : "horizon");
  if (run.trajectory.blew_up()) log << " at t=" << run.trajectory.blowup_time;
  log << ", regime=" << to_string(classify_regime(run.trajectory)) << '\n';
  return kOk;
}

inline int run_verify(const RunConfig& cfg, std::ostream& log = std::cout) {
  const SimulationRun run = simulate_config(cfg);
  if (!std::holds_alternative<Rotary>(cfg.posenc)) (void)derive_W_A(run.params);  // singular V → exit 3
  const VerificationReport rep = verify_model(run.params, cfg.posenc, run.trajectory, run.integrator.h, cfg.tolerances);
  const std::filesystem::path dir = cfg.out_dir;
  {
    auto out = detail::open_out(dir, "report.txt");
    rep.write_text(out);
  }
  {
    auto out = detail::open_out(dir, "report.csv");
    rep.write_records(out);
  }
  rep.write_text(log);
  return rep.passed() ? kOk : kFailed;
}

struct SweepRecord {
  std::uint64_t seed = 0;
  std::string cell;
  std::string regime;
  double final_ratio = NAN;
  double h = NAN;
  bool blew_up = false;
  std::string error;
};

inline SweepRecord sweep_one(const SweepSpec& s, const IntegratorSpec& ispec, std::uint64_t seed) {
  SweepRecord rec;
  rec.seed = seed;
  try {
    const ModelParams p = s.scenario == "random"
                              ? random_params(s.dim, seed)
                              : build_scenario({parse_scenario(s.scenario), s.dim, seed, s.symmetric});
    rec.cell = detail::regime_cell(derive_W_A(p));
    CounterRng rng(CounterRng::derive(seed, 0x70CE));
    const Mat x0 = rng.normal_mat(s.tokens, s.dim, s.token_scale);
    const IntegratorConfig ic = resolve_integrator(ispec, p.v);
    rec.h = ic.h;
    const Trajectory traj = integrate(VanillaField::from(p), x0, ic);
    rec.regime = to_string(classify_regime(traj));
    rec.blew_up = traj.blew_up();
    rec.final_ratio = mean_token_norm(traj.final_state()) / mean_token_norm(traj.initial());
  } catch (const std::exception& e) {
    rec.regime = "error";
    rec.error = e.what();
  }
  return rec;
}

/// Runs seeds on up to `jobs` threads; the result order follows the seed order.
inline std::vector<SweepRecord> sweep_records(const SweepSpec& s, const IntegratorSpec& ispec, unsigned jobs) {
  std::vector<SweepRecord> out(s.seed_count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < s.seed_count;) out[i] = sweep_one(s, ispec, s.seed_start + i);
  };
  const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(s.seed_count)));
  std::vector<std::jthread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  return out;
}

struct CellSummary {
  std::size_t runs = 0, converged = 0, diverged = 0, undecided = 0, errors = 0;
  double rate(std::size_t k) const { return runs ? 100.0 * static_cast<double>(k) / static_cast<double>(runs) : 0.0; }
};

inline std::map<std::string, CellSummary> summarize(const std::vector<SweepRecord>& recs) {
  std::map<std::string, CellSummary> cells;
  for (const auto& r : recs) {
    for (const std::string& key : {std::string("all"), r.cell.empty() ? std::string("error") : r.cell}) {
      CellSummary& c = cells[key];
      ++c.runs;
      if (r.regime == "converged") ++c.converged;
      else if (r.regime == "diverged") ++c.diverged;
      else if (r.regime == "undecided") ++c.undecided;
      else ++c.errors;
    }
  }
  return cells;
}

inline int run_sweep(const RunConfig& cfg, unsigned jobs, std::ostream& log = std::cout) {
  IntegratorSpec ispec = cfg.integrator;
  const auto recs = sweep_records(cfg.sweep, ispec, jobs);
  const std::filesystem::path dir = cfg.out_dir;
  {
    auto out = detail::open_out(dir, "sweep.csv");
    out << "seed,cell,regime,final_mean_norm_ratio,h,blowup,error\n";
    for (const auto& r : recs)
      out << r.seed << ',' << r.cell << ',' << r.regime << ',' << r.final_ratio << ',' << r.h << ','
          << (r.blew_up ? 1 : 0) << ",\"" << r.error << "\"\n";
  }
  const auto cells = summarize(recs);
  auto out = detail::open_out(dir, "summary.csv");
  out << std::setprecision(6);
  out << "cell,runs,converged,diverged,undecided,errors,converged_pct,diverged_pct\n";
  log << "sweep: " << cfg.sweep.scenario << " D=" << cfg.sweep.dim << " seeds " << cfg.sweep.seed_start << ".."
      << cfg.sweep.seed_start + cfg.sweep.seed_count - 1 << '\n';
  for (const auto& [cell, c] : cells) {
    out << cell << ',' << c.runs << ',' << c.converged << ',' << c.diverged << ',' << c.undecided << ',' << c.errors
        << ',' << c.rate(c.converged) << ',' << c.rate(c.diverged) << '\n';
    log << "  " << cell << ": runs=" << c.runs << " converged=" << c.rate(c.converged)
        << "% diverged=" << c.rate(c.diverged) << "% undecided=" << c.rate(c.undecided) << "% errors=" << c.errors
        << '\n';
  }
  return kOk;
}

struct MeanStd {
  double mean = 0.0, std = 0.0;
  std::size_t n = 0;
};

/// Population mean and standard deviation.
inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  m.n = xs.size();
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  for (double x : xs) m.std += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(m.std / static_cast<double>(xs.size()));
  return m;
}

inline int run_spectra(const RunConfig& cfg, std::ostream& log = std::cout) {
  std::vector<SpectraSet> sets = cfg.spectra.sets;
  if (const auto& r = cfg.spectra.random)
    for (std::size_t i = 0; i < r->count; ++i) {
      const ModelParams p = random_params(r->dim, CounterRng::derive(r->seed, i), r->scale);
      sets.push_back({"random" + std::to_string(i), p.q, p.k, p.v});
    }
  std::vector<double> w, a, v;
  const std::filesystem::path dir = cfg.out_dir;
  auto out = detail::open_out(dir, "spectra.csv");
  out << "label,pct_pos_wsym,pct_pos_asym,pct_near_zero_v,note\n";
  for (const auto& s : sets) {
    const SpectrumEntry e = spectrum_entry(s.q, s.k, s.v, cfg.spectra.eps);
    w.push_back(e.pct_pos_wsym);
    v.push_back(e.pct_near_zero_v);
    if (e.pct_pos_asym) a.push_back(*e.pct_pos_asym);
    out << s.label << ',' << e.pct_pos_wsym << ',';
    if (e.pct_pos_asym) out << *e.pct_pos_asym;
    out << ',' << e.pct_near_zero_v << ',' << (e.pct_pos_asym ? "" : "singular V; A statistics skipped") << '\n';
  }
  const MeanStd mw = mean_std(w), ma = mean_std(a), mv = mean_std(v);
  auto sum = detail::open_out(dir, "spectra_summary.csv");
  sum << std::setprecision(6) << "statistic,mean,std,n\n"
      << "pct_pos_wsym," << mw.mean << ',' << mw.std << ',' << mw.n << '\n'
      << "pct_pos_asym," << ma.mean << ',' << ma.std << ',' << ma.n << '\n'
      << "pct_near_zero_v," << mv.mean << ',' << mv.std << ',' << mv.n << '\n';
  log << "spectra (eps=" << cfg.spectra.eps << ", " << sets.size() << " sets)\n"
      << std::fixed << std::setprecision(2)
      << "  % positive eig(Wsym): " << mw.mean << " +- " << mw.std << '\n'
      << "  % positive eig(Asym): " << ma.mean << " +- " << ma.std << " (" << sets.size() - ma.n
      << " singular V skipped)\n"
      << "  % |eig(V)| <= eps:    " << mv.mean << " +- " << mv.std << '\n';
  log.unsetf(std::ios::floatfield);
  return kOk;
}

inline int run_config(const RunConfig& cfg, unsigned jobs, std::ostream& log = std::cout) {
  switch (cfg.mode) {
    case Mode::Simulate: return run_simulate(cfg, log);
    case Mode::Verify: return run_verify(cfg, log);
    case Mode::Sweep: return run_sweep(cfg, jobs, log);
    case Mode::Spectra: return run_spectra(cfg, log);
  }
  return kFailed;
}

/// Maps exceptions to the exit-code contract.
template <class F>
int guarded(F&& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ShapeError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const MathError& e) {
    err << "math error: " << e.what() << '\n';
    return kMathError;
  } catch (const GenerationError& e) {
    err << "math error: " << e.what() << '\n';
    return kMathError;
  } catch (const IntegrationError& e) {
    err << "integration error: " << e.what() << '\n';
    return kMathError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailed;
  }
}

inline int main(int argc, char** argv) {
  CLI::App app{"Token dynamics of self-attention: simulate, verify, sweep, spectra"};
  std::string config_path;
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  std::optional<std::string> out_dir;
  app.add_option("--config", config_path, "JSON run configuration")->required();
  app.add_option("--jobs", jobs, "worker threads for sweeps")->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "output directory (overrides output.dir)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }
  return guarded([&] {
    RunConfig cfg = load_config(config_path);
    if (out_dir) cfg.out_dir = *out_dir;
    return run_config(cfg, jobs);
  });
}

}  // namespace attnflow::cli
