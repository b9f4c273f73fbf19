#pragma once

// Run configuration: a versioned JSON document. Every object rejects keys it
// does not know, so a typo fails the run instead of silently using a default.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "attnflow/dynamics.hpp"
#include "attnflow/error.hpp"
#include "attnflow/integrate.hpp"
#include "attnflow/analyze.hpp"
#include "attnflow/params.hpp"
#include "attnflow/reference_sets.hpp"

namespace attnflow::cli {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

enum class Mode { Simulate, Verify, Sweep, Spectra };

struct ScenarioSource {
  ScenarioSpec spec;
};
struct MatricesSource {
  ModelParams params;
};
struct RandomSource {
  std::size_t dim = 2;
  std::uint64_t seed = 0;
  double scale = 1.0;
};
struct ReferenceSource {
  std::string name;
};
using ParamsSource = std::variant<ScenarioSource, MatricesSource, RandomSource, ReferenceSource>;

struct ExplicitTokens {
  Mat rows;
};
struct RandomTokens {
  std::size_t tokens = 4;
  double scale = 1.0;
  std::optional<std::uint64_t> seed;
};
struct ReferenceTokens {};
using InitialSpec = std::variant<ExplicitTokens, RandomTokens, ReferenceTokens>;

struct IntegratorSpec {
  std::optional<double> h;  // empty: auto_step(V)
  double horizon = 10.0;
  std::size_t record_stride = 1;
  double blowup_norm = 1e8;
};

struct SweepSpec {
  std::string scenario = "convergence";  // or divergence, intermediate, random
  std::size_t dim = 4;
  std::uint64_t seed_start = 0;
  std::size_t seed_count = 100;
  std::size_t tokens = 4;
  double token_scale = 1.0;
  bool symmetric = false;
};

struct SpectraSet {
  std::string label;
  Mat q, k, v;
};
struct SpectraRandom {
  std::size_t count = 100;
  std::size_t dim = 16;
  std::uint64_t seed = 0;
  double scale = 1.0;
};
struct SpectraSpec {
  double eps = 1e-3;
  std::vector<SpectraSet> sets;
  std::optional<SpectraRandom> random;
};

struct RunConfig {
  Mode mode = Mode::Simulate;
  std::uint64_t seed = 0;
  std::optional<ParamsSource> params;
  PosEnc posenc = NoEncoding{};
  std::optional<RopeParams> rope;  // from the posenc section
  InitialSpec initial = ReferenceTokens{};
  IntegratorSpec integrator;
  VerifyTolerances tolerances;
  SweepSpec sweep;
  SpectraSpec spectra;
  std::string out_dir = "out";
  std::filesystem::path base_dir;  // relative matrix paths resolve against the config file
};

namespace detail {

inline void expect_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
}

inline void expect_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  expect_object(j, where);
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    if (!ok.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

inline double get_number(const json& j, const char* key, const std::string& where) {
  const json& v = j.at(key);
  if (!v.is_number()) throw ConfigError(where + "." + key + ": expected a number");
  return v.get<double>();
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(where + "." + key + ": expected true/false");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(where + "." + key + ": expected a string");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0 && std::is_unsigned_v<T>))
      throw ConfigError(where + "." + key + ": expected a non-negative integer");
  } else {
    if (!v.is_number()) throw ConfigError(where + "." + key + ": expected a number");
  }
  return v.get<T>();
}

inline Mat read_matrix_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open matrix file '" + path.string() + "'");
  return read_matrix(in, path.string());
}

/// Inline row list `[[..],[..]]` or a path to a text matrix file.
inline Mat parse_matrix(const json& j, const std::string& where, const std::filesystem::path& base) {
  if (j.is_string()) {
    std::filesystem::path p = j.get<std::string>();
    return read_matrix_file(p.is_absolute() ? p : base / p);
  }
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a non-empty list of rows or a file path");
  const std::size_t rows = j.size();
  std::size_t cols = 0;
  std::vector<double> data;
  for (std::size_t r = 0; r < rows; ++r) {
    const json& row = j[r];
    if (!row.is_array() || row.empty()) throw ConfigError(where + ": row " + std::to_string(r) + " is not a list");
    if (r == 0) cols = row.size();
    if (row.size() != cols) throw ConfigError(where + ": ragged rows");
    for (const auto& x : row) {
      if (!x.is_number()) throw ConfigError(where + ": non-numeric entry");
      data.push_back(x.get<double>());
    }
  }
  return Mat(rows, cols, std::move(data));
}

inline ParamsSource parse_params(const json& j, const std::filesystem::path& base) {
  expect_keys(j, {"scenario", "matrices", "random", "reference"}, "params");
  if (j.size() != 1) throw ConfigError("params: exactly one of scenario/matrices/random/reference is required");
  if (j.contains("scenario")) {
    const json& s = j["scenario"];
    expect_keys(s, {"kind", "dim", "seed", "symmetric"}, "params.scenario");
    ScenarioSpec spec;
    spec.scenario = parse_scenario(get_or<std::string>(s, "kind", "convergence", "params.scenario"));
    spec.dim = get_or<std::size_t>(s, "dim", 2, "params.scenario");
    spec.seed = get_or<std::uint64_t>(s, "seed", 0, "params.scenario");
    spec.symmetric = get_or<bool>(s, "symmetric", false, "params.scenario");
    if (spec.dim < 2) throw ConfigError("params.scenario.dim must be >= 2");
    return ScenarioSource{spec};
  }
  if (j.contains("matrices")) {
    const json& m = j["matrices"];
    expect_keys(m, {"Q", "K", "V", "Dk"}, "params.matrices");
    for (const char* key : {"Q", "K", "V"})
      if (!m.contains(key)) throw ConfigError(std::string("params.matrices: missing ") + key);
    ModelParams p;
    p.q = parse_matrix(m["Q"], "params.matrices.Q", base);
    p.k = parse_matrix(m["K"], "params.matrices.K", base);
    p.v = parse_matrix(m["V"], "params.matrices.V", base);
    p.dim = p.q.rows();
    p.key_dim = get_or<double>(m, "Dk", static_cast<double>(p.dim), "params.matrices");
    p.validate();
    return MatricesSource{p};
  }
  if (j.contains("random")) {
    const json& r = j["random"];
    expect_keys(r, {"dim", "seed", "scale"}, "params.random");
    RandomSource src;
    src.dim = get_or<std::size_t>(r, "dim", 2, "params.random");
    src.seed = get_or<std::uint64_t>(r, "seed", 0, "params.random");
    src.scale = get_or<double>(r, "scale", 1.0, "params.random");
    if (src.dim < 2) throw ConfigError("params.random.dim must be >= 2");
    if (!(src.scale > 0.0)) throw ConfigError("params.random.scale must be > 0");
    return src;
  }
  const json& name = j["reference"];
  if (!name.is_string()) throw ConfigError("params.reference: expected a set name");
  (void)reference::by_name(name.get<std::string>());
  return ReferenceSource{name.get<std::string>()};
}

inline void parse_posenc(const json& j, RunConfig& cfg) {
  expect_keys(j, {"kind", "offset", "P", "Qbar", "Kbar", "theta_base", "lambda_mod"}, "posenc");
  const std::string kind = get_or<std::string>(j, "kind", "none", "posenc");
  const bool rotary = kind == "rotary";
  for (const char* key : {"Qbar", "Kbar", "theta_base", "lambda_mod"})
    if (!rotary && j.contains(key)) throw ConfigError(std::string("posenc.") + key + " is only valid for kind 'rotary'");
  if (kind != "sinusoidal" && j.contains("offset")) throw ConfigError("posenc.offset is only valid for kind 'sinusoidal'");
  if (kind != "given" && j.contains("P")) throw ConfigError("posenc.P is only valid for kind 'given'");

  if (kind == "none") {
    cfg.posenc = NoEncoding{};
  } else if (kind == "sinusoidal") {
    cfg.posenc = AbsoluteSinusoidal{get_or<std::size_t>(j, "offset", 0, "posenc")};
  } else if (kind == "given") {
    if (!j.contains("P")) throw ConfigError("posenc: kind 'given' requires P");
    cfg.posenc = AbsoluteGiven{parse_matrix(j["P"], "posenc.P", cfg.base_dir)};
  } else if (rotary) {
    cfg.posenc = Rotary{};
    if (j.contains("Qbar") != j.contains("Kbar")) throw ConfigError("posenc: Qbar and Kbar must be given together");
    if (j.contains("Qbar")) {
      RopeParams r;
      r.qbar = parse_matrix(j["Qbar"], "posenc.Qbar", cfg.base_dir);
      r.kbar = parse_matrix(j["Kbar"], "posenc.Kbar", cfg.base_dir);
      r.theta_base = get_or<double>(j, "theta_base", 10000.0, "posenc");
      if (j.contains("lambda_mod")) {
        const json& l = j["lambda_mod"];
        expect_keys(l, {"kind", "lambda", "diag"}, "posenc.lambda_mod");
        LambdaMod mod;
        const std::string lk = get_or<std::string>(l, "kind", "identity", "posenc.lambda_mod");
        if (lk == "identity")
          mod.kind = LambdaMod::Kind::IdentityScaled;
        else if (lk == "diag")
          mod.kind = LambdaMod::Kind::DiagScaled;
        else
          throw ConfigError("posenc.lambda_mod.kind must be 'identity' or 'diag'");
        if (!l.contains("lambda")) throw ConfigError("posenc.lambda_mod: missing lambda");
        mod.lambda = get_number(l, "lambda", "posenc.lambda_mod");
        if (l.contains("diag")) {
          const json& d = l["diag"];
          if (!d.is_array()) throw ConfigError("posenc.lambda_mod.diag: expected a list");
          Vect v(d.size());
          for (std::size_t i = 0; i < d.size(); ++i) {
            if (!d[i].is_number()) throw ConfigError("posenc.lambda_mod.diag: non-numeric entry");
            v[i] = d[i].get<double>();
          }
          mod.diag = v;
        }
        r.lambda_mod = mod;
      }
      cfg.rope = r;
    } else if (j.contains("theta_base") || j.contains("lambda_mod")) {
      throw ConfigError("posenc: theta_base/lambda_mod require Qbar and Kbar");
    }
  } else {
    throw ConfigError("posenc.kind must be one of none, sinusoidal, given, rotary");
  }
}

inline InitialSpec parse_initial(const json& j, const std::filesystem::path& base) {
  if (j.is_string()) {
    if (j.get<std::string>() != "reference") throw ConfigError("initial: string form must be \"reference\"");
    return ReferenceTokens{};
  }
  expect_keys(j, {"rows", "random"}, "initial");
  if (j.size() != 1) throw ConfigError("initial: exactly one of rows/random is required");
  if (j.contains("rows")) return ExplicitTokens{parse_matrix(j["rows"], "initial.rows", base)};
  const json& r = j["random"];
  expect_keys(r, {"tokens", "scale", "seed"}, "initial.random");
  RandomTokens t;
  t.tokens = get_or<std::size_t>(r, "tokens", 4, "initial.random");
  t.scale = get_or<double>(r, "scale", 1.0, "initial.random");
  if (r.contains("seed")) t.seed = get_or<std::uint64_t>(r, "seed", 0, "initial.random");
  if (t.tokens < 1) throw ConfigError("initial.random.tokens must be >= 1");
  if (!(t.scale > 0.0)) throw ConfigError("initial.random.scale must be > 0");
  return t;
}

inline IntegratorSpec parse_integrator(const json& j) {
  expect_keys(j, {"h", "T", "record_stride", "blowup_norm"}, "integrator");
  IntegratorSpec s;
  if (j.contains("h")) {
    if (j["h"].is_string() && j["h"].get<std::string>() == "auto")
      s.h.reset();
    else
      s.h = get_number(j, "h", "integrator");
  }
  s.horizon = get_or<double>(j, "T", 10.0, "integrator");
  s.record_stride = get_or<std::size_t>(j, "record_stride", 1, "integrator");
  s.blowup_norm = get_or<double>(j, "blowup_norm", 1e8, "integrator");
  IntegratorConfig{s.h.value_or(1e-2), s.horizon, s.record_stride, s.blowup_norm}.validate();
  return s;
}

inline VerifyTolerances parse_tolerances(const json& j) {
  expect_keys(j, {"convergence_threshold", "decay", "stationarity", "absolute_limit", "envelope", "projection", "hull"},
              "verify");
  VerifyTolerances t;
  t.convergence_threshold = get_or<double>(j, "convergence_threshold", t.convergence_threshold, "verify");
  t.decay = get_or<double>(j, "decay", t.decay, "verify");
  t.stationarity = get_or<double>(j, "stationarity", t.stationarity, "verify");
  t.absolute_limit = get_or<double>(j, "absolute_limit", t.absolute_limit, "verify");
  t.envelope = get_or<double>(j, "envelope", t.envelope, "verify");
  t.projection = get_or<double>(j, "projection", t.projection, "verify");
  t.hull = get_or<double>(j, "hull", t.hull, "verify");
  return t;
}

inline SweepSpec parse_sweep(const json& j) {
  expect_keys(j, {"scenario", "dim", "seed_start", "seed_count", "tokens", "token_scale", "symmetric"}, "sweep");
  SweepSpec s;
  s.scenario = get_or<std::string>(j, "scenario", s.scenario, "sweep");
  if (s.scenario != "random") (void)parse_scenario(s.scenario);
  s.dim = get_or<std::size_t>(j, "dim", s.dim, "sweep");
  s.seed_start = get_or<std::uint64_t>(j, "seed_start", s.seed_start, "sweep");
  s.seed_count = get_or<std::size_t>(j, "seed_count", s.seed_count, "sweep");
  s.tokens = get_or<std::size_t>(j, "tokens", s.tokens, "sweep");
  s.token_scale = get_or<double>(j, "token_scale", s.token_scale, "sweep");
  s.symmetric = get_or<bool>(j, "symmetric", s.symmetric, "sweep");
  if (s.seed_count == 0) throw ConfigError("sweep: seed range is empty");
  if (s.dim < 2) throw ConfigError("sweep.dim must be >= 2");
  if (s.tokens < 1) throw ConfigError("sweep.tokens must be >= 1");
  return s;
}

inline SpectraSpec parse_spectra(const json& j, const std::filesystem::path& base) {
  expect_keys(j, {"eps", "sets", "random"}, "spectra");
  SpectraSpec s;
  s.eps = get_or<double>(j, "eps", 1e-3, "spectra");
  if (!(s.eps >= 0.0)) throw ConfigError("spectra.eps must be >= 0");
  if (j.contains("sets")) {
    if (!j["sets"].is_array()) throw ConfigError("spectra.sets: expected a list");
    std::size_t idx = 0;
    for (const auto& e : j["sets"]) {
      const std::string where = "spectra.sets[" + std::to_string(idx) + "]";
      expect_keys(e, {"label", "Q", "K", "V"}, where);
      for (const char* key : {"Q", "K", "V"})
        if (!e.contains(key)) throw ConfigError(where + ": missing " + key);
      SpectraSet set;
      set.label = get_or<std::string>(e, "label", "set" + std::to_string(idx), where);
      set.q = parse_matrix(e["Q"], where + ".Q", base);
      set.k = parse_matrix(e["K"], where + ".K", base);
      set.v = parse_matrix(e["V"], where + ".V", base);
      if (!set.v.square() || set.q.rows() != set.v.rows() || set.k.rows() != set.v.rows() ||
          set.q.cols() != set.k.cols())
        throw ConfigError(where + ": Q, K, V dimensions disagree");
      s.sets.push_back(std::move(set));
      ++idx;
    }
  }
  if (j.contains("random")) {
    const json& r = j["random"];
    expect_keys(r, {"count", "dim", "seed", "scale"}, "spectra.random");
    SpectraRandom sr;
    sr.count = get_or<std::size_t>(r, "count", sr.count, "spectra.random");
    sr.dim = get_or<std::size_t>(r, "dim", sr.dim, "spectra.random");
    sr.seed = get_or<std::uint64_t>(r, "seed", sr.seed, "spectra.random");
    sr.scale = get_or<double>(r, "scale", sr.scale, "spectra.random");
    if (sr.count == 0 || sr.dim < 2) throw ConfigError("spectra.random: count >= 1 and dim >= 2 required");
    s.random = sr;
  }
  if (s.sets.empty() && !s.random) throw ConfigError("spectra: no matrix sets given");
  return s;
}

}  // namespace detail

inline Mode parse_mode(const std::string& m) {
  if (m == "simulate") return Mode::Simulate;
  if (m == "verify") return Mode::Verify;
  if (m == "sweep") return Mode::Sweep;
  if (m == "spectra") return Mode::Spectra;
  throw ConfigError("mode must be one of simulate, verify, sweep, spectra");
}

inline RunConfig parse_config(const json& j, const std::filesystem::path& base_dir = {}) {
  using namespace detail;
  expect_keys(j, {"schema_version", "mode", "seed", "params", "posenc", "initial", "integrator", "verify", "sweep",
                  "spectra", "output"},
              "config");
  if (!j.contains("schema_version")) throw ConfigError("config: missing schema_version");
  if (!j["schema_version"].is_number_integer() || j["schema_version"].get<int>() != kSchemaVersion)
    throw ConfigError("config: unsupported schema_version (expected " + std::to_string(kSchemaVersion) + ")");
  if (!j.contains("mode") || !j["mode"].is_string()) throw ConfigError("config: missing mode");

  RunConfig cfg;
  cfg.base_dir = base_dir;
  cfg.mode = parse_mode(j["mode"].get<std::string>());
  cfg.seed = get_or<std::uint64_t>(j, "seed", 0, "config");

  auto forbid = [&](const char* key) {
    if (j.contains(key)) throw ConfigError(std::string("config: '") + key + "' is not used in this mode");
  };
  const bool trajectory_mode = cfg.mode == Mode::Simulate || cfg.mode == Mode::Verify;
  if (trajectory_mode) {
    if (!j.contains("params")) throw ConfigError("config: missing params");
    cfg.params = parse_params(j["params"], base_dir);
    if (j.contains("posenc")) parse_posenc(j["posenc"], cfg);
    if (j.contains("initial")) cfg.initial = parse_initial(j["initial"], base_dir);
    forbid("sweep");
    forbid("spectra");
  } else {
    for (const char* key : {"params", "posenc", "initial", "verify"}) forbid(key);
  }
  if (cfg.mode == Mode::Spectra) forbid("integrator");
  if (j.contains("integrator")) cfg.integrator = parse_integrator(j["integrator"]);
  if (j.contains("verify")) {
    if (cfg.mode != Mode::Verify) throw ConfigError("config: 'verify' section requires mode verify");
    cfg.tolerances = parse_tolerances(j["verify"]);
  }
  if (cfg.mode == Mode::Sweep) {
    if (!j.contains("sweep")) throw ConfigError("config: mode sweep requires a 'sweep' section");
    cfg.sweep = parse_sweep(j["sweep"]);
    forbid("spectra");
  }
  if (cfg.mode == Mode::Spectra) {
    if (!j.contains("spectra")) throw ConfigError("config: mode spectra requires a 'spectra' section");
    cfg.spectra = parse_spectra(j["spectra"], base_dir);
    forbid("sweep");
  }
  if (j.contains("output")) {
    const json& o = j["output"];
    expect_keys(o, {"dir"}, "output");
    cfg.out_dir = get_or<std::string>(o, "dir", cfg.out_dir, "output");
  }
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

/// Parameters for trajectory modes, with rotary fields merged in.
/// Rotary fields must come from exactly one place, and only with a rotary encoding.
inline ModelParams resolve_params(const RunConfig& cfg) {
  if (!cfg.params) throw ConfigError("config: no params source");
  ModelParams p = std::visit(
      [](const auto& src) -> ModelParams {
        using T = std::decay_t<decltype(src)>;
        if constexpr (std::is_same_v<T, ScenarioSource>)
          return build_scenario(src.spec);
        else if constexpr (std::is_same_v<T, MatricesSource>)
          return src.params;
        else if constexpr (std::is_same_v<T, RandomSource>)
          return random_params(src.dim, src.seed, src.scale);
        else
          return reference::by_name(src.name).params;
      },
      *cfg.params);
  const bool rotary = std::holds_alternative<Rotary>(cfg.posenc);
  if (p.rope && cfg.rope) throw ConfigError("config: rotary matrices given twice (params set and posenc)");
  if (cfg.rope) p.rope = cfg.rope;
  if (rotary && !p.rope) throw ConfigError("posenc: kind 'rotary' requires Qbar and Kbar");
  if (!rotary && p.rope) throw ConfigError("params: set carries rotary matrices but posenc is not 'rotary'");
  if (rotary && p.dim % 2 != 0) throw ConfigError("posenc: rotary encoding requires even D");
  p.validate();
  return p;
}

inline Mat resolve_initial(const RunConfig& cfg, std::size_t dim) {
  Mat x0 = std::visit(
      [&](const auto& init) -> Mat {
        using T = std::decay_t<decltype(init)>;
        if constexpr (std::is_same_v<T, ExplicitTokens>) {
          return init.rows;
        } else if constexpr (std::is_same_v<T, RandomTokens>) {
          CounterRng rng(init.seed.value_or(CounterRng::derive(cfg.seed, 1)));
          return rng.normal_mat(init.tokens, dim, init.scale);
        } else {
          if (const auto* ref = std::get_if<ReferenceSource>(&*cfg.params)) {
            const auto set = reference::by_name(ref->name);
            if (set.initial) return *set.initial;
          }
          if (dim != 2) throw ConfigError("initial: reference tokens are two-dimensional; give rows or random");
          return reference::default_initial();
        }
      },
      cfg.initial);
  if (x0.cols() != dim)
    throw ConfigError("initial: tokens have " + std::to_string(x0.cols()) + " features, params have D=" +
                      std::to_string(dim));
  if (!all_finite(x0.data())) throw ConfigError("initial: non-finite token entries");
  return x0;
}

inline IntegratorConfig resolve_integrator(const IntegratorSpec& s, const Mat& v) {
  return IntegratorConfig{s.h ? *s.h : auto_step(v), s.horizon, s.record_stride, s.blowup_norm};
}

}  // namespace attnflow::cli
