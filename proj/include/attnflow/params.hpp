#pragma once

// Model parameters: sampling, derivation of W and A, the LDLᵀ scenario
// construction, spectrum statistics, and the plain-text matrix format.

#include <cmath>
#include <complex>
#include <cstdint>
#include <istream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "attnflow/error.hpp"
#include "attnflow/matrix.hpp"
#include "attnflow/quadspace.hpp"
#include "attnflow/rng.hpp"

namespace attnflow {

/// Negative diagonal shift added to every rotary interaction matrix W_li.
struct LambdaMod {
  enum class Kind { IdentityScaled, DiagScaled };
  Kind kind = Kind::IdentityScaled;
  double lambda = -1.0;
  std::optional<Vect> diag;  // required (all > 0) for DiagScaled

  void validate(std::size_t dim) const {
    if (!(lambda < 0.0)) throw ConfigError("lambda_mod: lambda must be negative");
    if (kind == Kind::DiagScaled) {
      if (!diag) throw ConfigError("lambda_mod: DiagScaled requires a diagonal");
      if (diag->dim() != dim) throw ConfigError("lambda_mod: diagonal length must equal D");
      for (double d : *diag)
        if (!(d > 0.0)) throw ConfigError("lambda_mod: diagonal entries must be > 0");
    } else if (diag) {
      throw ConfigError("lambda_mod: IdentityScaled takes no diagonal");
    }
  }

  /// λ·I or λ·diag(a).
  Mat shift(std::size_t dim) const {
    Mat m(dim, dim);
    for (std::size_t i = 0; i < dim; ++i)
      m(i, i) = lambda * (kind == Kind::DiagScaled ? (*diag)[i] : 1.0);
    return m;
  }
};

struct RopeParams {
  Mat qbar;
  Mat kbar;
  double theta_base = 10000.0;
  std::optional<LambdaMod> lambda_mod;
};

struct ModelParams {
  std::size_t dim = 0;
  double key_dim = 1.0;  // Dk: W = Q·Kᵀ/√Dk
  Mat q, k, v;
  std::optional<RopeParams> rope;

  double w_scale() const { return 1.0 / std::sqrt(key_dim); }

  void validate() const {
    auto check = [&](const Mat& m, const char* name) {
      if (m.rows() != dim || m.cols() != dim)
        throw ShapeError(std::string(name) + " must be " + std::to_string(dim) + "x" +
                         std::to_string(dim) + ", got " + shape_str(m));
      if (!all_finite(m.data())) throw ContractError(std::string(name) + " has non-finite entries");
    };
    if (dim < 1) throw ConfigError("params: D must be >= 1");
    if (!(key_dim > 0.0)) throw ConfigError("params: Dk must be > 0");
    check(q, "Q");
    check(k, "K");
    check(v, "V");
    if (rope) {
      if (dim % 2 != 0) throw ConfigError("params: rotary encoding requires even D");
      check(rope->qbar, "Qbar");
      check(rope->kbar, "Kbar");
      if (!(rope->theta_base > 0.0)) throw ConfigError("params: theta_base must be > 0");
      if (rope->lambda_mod) rope->lambda_mod->validate(dim);
    }
  }
};

struct DerivedWA {
  Mat w;
  Mat a;
};

/// W = Q·Kᵀ/√Dk.
inline Mat derive_W(const ModelParams& p) { return (p.q * p.k.transpose()) * p.w_scale(); }

/// W and A = W·(Vᵀ)⁻¹. Throws SingularityError when V is not invertible.
inline DerivedWA derive_W_A(const ModelParams& p) {
  Mat w = derive_W(p);
  Mat a = w * invert(p.v.transpose());
  return {std::move(w), std::move(a)};
}

/// Q, K, V with i.i.d. Normal(0, scale²) entries; V redrawn until invertible.
inline ModelParams random_params(std::size_t dim, std::uint64_t seed, double scale = 1.0) {
  if (dim < 2) throw ConfigError("random_params: D must be >= 2");
  if (!(scale > 0.0)) throw ConfigError("random_params: scale must be > 0");
  CounterRng rng(seed);
  ModelParams p;
  p.dim = dim;
  p.key_dim = static_cast<double>(dim);
  p.q = rng.normal_mat(dim, dim, scale);
  p.k = rng.normal_mat(dim, dim, scale);
  for (int attempt = 0; attempt < 100; ++attempt) {
    p.v = rng.normal_mat(dim, dim, scale);
    try {
      (void)invert(p.v);
      return p;
    } catch (const SingularityError&) {
    }
  }
  throw GenerationError("random_params: 100 consecutive singular V draws");
}

/// log(1 + eˣ), stable for both tails.
inline double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

enum class Scenario { Convergence, Divergence, Intermediate };

inline const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::Convergence: return "convergence";
    case Scenario::Divergence: return "divergence";
    case Scenario::Intermediate: return "intermediate";
  }
  return "?";
}

inline Scenario parse_scenario(const std::string& s) {
  if (s == "convergence") return Scenario::Convergence;
  if (s == "divergence") return Scenario::Divergence;
  if (s == "intermediate") return Scenario::Intermediate;
  throw ConfigError("unknown scenario '" + s + "'");
}

struct ScenarioSpec {
  Scenario scenario = Scenario::Convergence;
  std::size_t dim = 2;
  std::uint64_t seed = 0;
  /// Drop the antisymmetric parts (T_w = T_a = 0) so W and A are symmetric.
  bool symmetric = false;
};

struct ScenarioBuild {
  ModelParams params;
  Mat w_target;
  Mat a_target;
  int attempts = 1;
};

/// Number of +1 entries in A's sign vector for a scenario.
inline std::size_t positive_a_signs(Scenario s, std::size_t dim) {
  switch (s) {
    case Scenario::Convergence: return 0;
    case Scenario::Divergence: return dim;
    case Scenario::Intermediate: return (dim + 1) / 2;
  }
  return 0;
}

namespace detail {

/// L·diag(s ⊙ softplus(d))·Lᵀ + T − Tᵀ with unit-lower-triangular L.
inline Mat ldlt_target(CounterRng& rng, std::size_t dim, std::size_t n_positive, bool symmetric) {
  Mat l = Mat::identity(dim);
  for (std::size_t i = 1; i < dim; ++i)
    for (std::size_t j = 0; j < i; ++j) l(i, j) = rng.normal();
  Vect d(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    const double sign = i < n_positive ? 1.0 : -1.0;
    d[i] = sign * softplus(rng.normal());
  }
  Mat out = sym(l * Mat::diag(d) * l.transpose());
  if (!symmetric) {
    const Mat t = rng.normal_mat(dim, dim);
    out += t - t.transpose();
  }
  return out;
}

inline std::size_t count_positive(const Vect& ev) {
  std::size_t n = 0;
  for (double x : ev) n += x > 0.0;
  return n;
}

}  // namespace detail

/// True when derived W_sym ≻ 0 and A_sym has the scenario's inertia.
inline bool scenario_holds(Scenario s, const DerivedWA& wa) {
  const std::size_t dim = wa.w.rows();
  if (classify_definiteness(wa.w) != Definiteness::PositiveDefinite) return false;
  const Vect ev = sym_eigenvalues(wa.a);
  const Definiteness da = classify_eigenvalues(ev, default_definiteness_tol(ev));
  switch (s) {
    case Scenario::Convergence: return da == Definiteness::NegativeDefinite;
    case Scenario::Divergence: return da == Definiteness::PositiveDefinite;
    case Scenario::Intermediate:
      return da == Definiteness::Indefinite &&
             detail::count_positive(ev) == positive_a_signs(s, dim);
  }
  return false;
}

/// LDLᵀ construction of (Q, K, V) whose W_sym and A_sym have prescribed signs.
///
/// W_target = L_w·diag(softplus(d_w))·L_wᵀ + T_w − T_wᵀ is always positive
/// definite in its symmetric part; A_target uses the scenario's sign vector.
/// Then K = [Q⁻¹·W_target]ᵀ and V = [A_target⁻¹·W_target]ᵀ, with Dk = 1 so
/// that Q·Kᵀ reproduces W_target. Draws that give a singular Q or A_target,
/// or that fail the definiteness post-check, are redrawn from a fresh
/// sub-stream (at most 100 attempts).
inline ScenarioBuild build_scenario_with_targets(const ScenarioSpec& spec) {
  if (spec.dim < 2) throw ConfigError("build_scenario: D must be >= 2");
  const std::size_t dim = spec.dim;
  const std::size_t n_pos = positive_a_signs(spec.scenario, dim);
  for (int attempt = 0; attempt < 100; ++attempt) {
    CounterRng rng(CounterRng::derive(spec.seed, static_cast<std::uint64_t>(attempt)));
    const Mat q = rng.normal_mat(dim, dim);
    const Mat w_t = detail::ldlt_target(rng, dim, dim, spec.symmetric);
    const Mat a_t = detail::ldlt_target(rng, dim, n_pos, spec.symmetric);
    try {
      ModelParams p;
      p.dim = dim;
      p.key_dim = 1.0;
      p.q = q;
      p.k = (invert(q) * w_t).transpose();
      p.v = (invert(a_t) * w_t).transpose();
      const DerivedWA wa = derive_W_A(p);
      if (!scenario_holds(spec.scenario, wa)) continue;
      return {std::move(p), w_t, a_t, attempt + 1};
    } catch (const SingularityError&) {
    }
  }
  throw GenerationError("build_scenario: no valid draw in 100 attempts");
}

inline ModelParams build_scenario(const ScenarioSpec& spec) {
  return build_scenario_with_targets(spec).params;
}

/// Complex eigenvalues of a general square matrix.
inline std::vector<std::complex<double>> general_eigenvalues(const Mat& m) {
  require_square(m, "general_eigenvalues");
  const auto n = static_cast<Eigen::Index>(m.rows());
  Eigen::MatrixXd e(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) e(i, j) = m(i, j);
  Eigen::EigenSolver<Eigen::MatrixXd> solver(e, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success) throw UndecidedError("general_eigenvalues: QR did not converge");
  std::vector<std::complex<double>> out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = solver.eigenvalues()[i];
  return out;
}

/// Eigenvalue statistics of one (Q, K, V) triple.
struct SpectrumEntry {
  double pct_pos_wsym = 0.0;
  std::optional<double> pct_pos_asym;  // empty when V is singular
  double pct_near_zero_v = 0.0;
};

struct SpectrumStats {
  double pct_pos_wsym = 0.0;
  double pct_pos_asym = 0.0;
  double pct_near_zero_v = 0.0;
  double eps = 1e-3;
  std::size_t entries = 0;
  std::size_t singular_v = 0;  // entries skipped for the A statistic
};

inline SpectrumEntry spectrum_entry(const Mat& q, const Mat& k, const Mat& v, double eps) {
  require_square(v, "spectrum_entry");
  detail::require_shape(q.rows() == v.rows() && k.rows() == v.rows() && q.cols() == k.cols(),
                        "spectrum_entry: Q, K, V dimensions disagree");
  const double n = static_cast<double>(v.rows());
  SpectrumEntry e;
  const Mat w = q * k.transpose();
  e.pct_pos_wsym = 100.0 * detail::count_positive(sym_eigenvalues(w)) / n;

  std::size_t near_zero = 0;
  for (const auto& lam : general_eigenvalues(v)) near_zero += std::abs(lam) <= eps;
  e.pct_near_zero_v = 100.0 * near_zero / n;

  try {
    const Mat a = w * invert(v.transpose());
    e.pct_pos_asym = 100.0 * detail::count_positive(sym_eigenvalues(a)) / n;
  } catch (const SingularityError&) {
    e.pct_near_zero_v = std::max(e.pct_near_zero_v, 100.0 / n);
  }
  return e;
}

/// Mean statistics over parameter triples. A singular V counts towards the
/// near-zero percentage and is left out of the A_sym mean.
inline SpectrumStats eigen_stats(std::span<const Mat> qs, std::span<const Mat> ks,
                                 std::span<const Mat> vs, double eps = 1e-3) {
  if (qs.empty()) throw DomainError("eigen_stats: empty input");
  if (qs.size() != ks.size() || ks.size() != vs.size())
    throw ShapeError("eigen_stats: Q, K, V lists differ in length");
  SpectrumStats s;
  s.eps = eps;
  std::size_t with_a = 0;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    const SpectrumEntry e = spectrum_entry(qs[i], ks[i], vs[i], eps);
    s.pct_pos_wsym += e.pct_pos_wsym;
    s.pct_near_zero_v += e.pct_near_zero_v;
    if (e.pct_pos_asym) {
      s.pct_pos_asym += *e.pct_pos_asym;
      ++with_a;
    } else {
      ++s.singular_v;
    }
  }
  s.entries = qs.size();
  s.pct_pos_wsym /= static_cast<double>(qs.size());
  s.pct_near_zero_v /= static_cast<double>(qs.size());
  s.pct_pos_asym = with_a ? s.pct_pos_asym / static_cast<double>(with_a) : 0.0;
  return s;
}

// ---- plain-text matrix format ------------------------------------------
// First line "rows cols", then rows·cols whitespace-separated reals in
// row-major order. Blank lines and lines starting with '#' are ignored.

struct ParseError : ConfigError {
  using ConfigError::ConfigError;
};

inline Mat read_matrix(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> ParseError {
    return ParseError(source + ":" + std::to_string(line_no) + ": " + msg);
  };
  auto next_content_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      return true;
    }
    return false;
  };

  if (!next_content_line()) throw fail("missing header 'rows cols'");
  std::istringstream header(line);
  long long rows = -1, cols = -1;
  std::string extra;
  if (!(header >> rows >> cols) || (header >> extra) || rows <= 0 || cols <= 0)
    throw fail("header must be two positive integers 'rows cols'");

  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(rows * cols));
  while (data.size() < static_cast<std::size_t>(rows * cols) && next_content_line()) {
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size() || !std::isfinite(v))
        throw fail("invalid number '" + tok + "'");
      if (data.size() == static_cast<std::size_t>(rows * cols)) throw fail("too many values");
      data.push_back(v);
    }
  }
  if (data.size() != static_cast<std::size_t>(rows * cols))
    throw fail("expected " + std::to_string(rows * cols) + " values, found " +
               std::to_string(data.size()));
  if (next_content_line()) throw fail("trailing content after matrix");
  return Mat(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols), std::move(data));
}

inline void write_matrix(std::ostream& out, const Mat& m) {
  out << m.rows() << ' ' << m.cols() << '\n';
  out << std::setprecision(17);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out << (c ? " " : "") << m(r, c);
    out << '\n';
  }
}

}  // namespace attnflow
