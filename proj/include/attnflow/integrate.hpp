#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <exception>
#include <string>
#include <variant>
#include <vector>

#include "attnflow/dynamics.hpp"
#include "attnflow/error.hpp"
#include "attnflow/matrix.hpp"

namespace attnflow {

struct IntegratorConfig {
  double h = 1e-2;
  double horizon = 10.0;
  std::size_t record_stride = 1;
  double blowup_norm = 1e8;

  void validate() const {
    if (!(h > 0.0)) throw ConfigError("integrator: h must be > 0");
    if (!(horizon >= h)) throw ConfigError("integrator: T must be >= h");
    if (record_stride < 1) throw ConfigError("integrator: record_stride must be >= 1");
    if (!(blowup_norm > 0.0)) throw ConfigError("integrator: blowup_norm must be > 0");
  }

  /// Number of steps; the last step is shortened to land exactly on T.
  std::size_t steps() const {
    return static_cast<std::size_t>(std::ceil(horizon / h - 1e-9));
  }
};

enum class Termination { HorizonReached, BlowUp };

struct Trajectory {
  std::vector<double> times;
  std::vector<TokenState> states;
  Termination terminated = Termination::HorizonReached;
  double blowup_time = NAN;

  std::size_t size() const { return times.size(); }
  bool blew_up() const { return terminated == Termination::BlowUp; }
  const TokenState& initial() const { return states.front(); }
  const TokenState& final_state() const { return states.back(); }
};

/// Raised inside a step when a stage produces NaN/Inf.
struct BlowUpSignal : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A right-hand side error re-raised with the time it occurred.
struct IntegrationError : std::runtime_error {
  double time;
  IntegrationError(const std::string& msg, double t)
      : std::runtime_error(msg + " (at t=" + std::to_string(t) + ")"), time(t) {}
};

template <class F>
concept AutonomousField = std::invocable<const F&, const Mat&>;

template <class F>
concept TimeField = std::invocable<const F&, double, const Mat&>;

inline double max_token_norm(const TokenState& x) {
  double m = 0.0;
  for (std::size_t l = 0; l < x.rows(); ++l) m = std::max(m, norm2(x.row(l)));
  return m;
}

inline double mean_token_norm(const TokenState& x) {
  double s = 0.0;
  for (std::size_t l = 0; l < x.rows(); ++l) s += norm2(x.row(l));
  return s / static_cast<double>(x.rows());
}

namespace detail {

template <class F>
Mat eval_field(const F& f, double t, const Mat& x) {
  Mat dx;
  try {
    if constexpr (TimeField<F>)
      dx = f(t, x);
    else
      dx = f(x);
  } catch (const NonFiniteError& e) {
    throw BlowUpSignal(e.what());
  }
  if (!all_finite(dx.data())) throw BlowUpSignal("non-finite derivative");
  return dx;
}

inline Mat axpy(const Mat& x, double a, const Mat& k) {
  Mat out = x;
  auto o = out.data();
  auto kd = k.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += a * kd[i];
  return out;
}

}  // namespace detail

/// One classical fourth-order Runge–Kutta step. Throws BlowUpSignal on NaN/Inf.
template <class F>
  requires AutonomousField<F> || TimeField<F>
Mat rk4_step(const F& f, const Mat& x, double t, double h) {
  const Mat k1 = detail::eval_field(f, t, x);
  const Mat k2 = detail::eval_field(f, t + 0.5 * h, detail::axpy(x, 0.5 * h, k1));
  const Mat k3 = detail::eval_field(f, t + 0.5 * h, detail::axpy(x, 0.5 * h, k2));
  const Mat k4 = detail::eval_field(f, t + h, detail::axpy(x, h, k3));
  Mat out = x;
  auto o = out.data();
  const auto a = k1.data(), b = k2.data(), c = k3.data(), d = k4.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += h / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]);
  if (!all_finite(out.data())) throw BlowUpSignal("non-finite state");
  return out;
}

/// Fixed-step RK4 over [0, T], recording every `record_stride`-th state plus
/// t = 0 and the last state. Stops with BlowUp once any token norm exceeds
/// `blowup_norm` or a stage turns non-finite.
template <class F>
  requires AutonomousField<F> || TimeField<F>
Trajectory integrate(const F& f, const TokenState& x0, const IntegratorConfig& cfg) {
  cfg.validate();
  if (x0.rows() < 1 || !all_finite(x0.data())) throw ContractError("integrate: initial state must be finite, L >= 1");

  Trajectory traj;
  traj.times.push_back(0.0);
  traj.states.push_back(x0);
  const std::size_t n = cfg.steps();
  Mat x = x0;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * cfg.h;
    const double t_next = k + 1 == n ? cfg.horizon : static_cast<double>(k + 1) * cfg.h;
    try {
      x = rk4_step(f, x, t, t_next - t);
    } catch (const BlowUpSignal&) {
      if (traj.times.back() != t) {
        traj.times.push_back(t);
        traj.states.push_back(x);
      }
      traj.terminated = Termination::BlowUp;
      traj.blowup_time = t;
      return traj;
    } catch (const std::exception& e) {
      throw IntegrationError(e.what(), t);
    }
    const bool blow = max_token_norm(x) > cfg.blowup_norm;
    if ((k + 1) % cfg.record_stride == 0 || k + 1 == n || blow) {
      traj.times.push_back(t_next);
      traj.states.push_back(x);
    }
    if (blow) {
      traj.terminated = Termination::BlowUp;
      traj.blowup_time = t_next;
      return traj;
    }
  }
  return traj;
}

/// h = min(h_max, 0.5/ρ(V)): keeps RK4 well inside its stability region
/// when V has a large spectral radius.
inline double auto_step(const Mat& v, double h_max = 1e-2) {
  double rho = 0.0;
  for (const auto& z : general_eigenvalues(v)) rho = std::max(rho, std::abs(z));
  return rho > 0.0 ? std::min(h_max, 0.5 / rho) : h_max;
}

/// Integrates the field selected by `enc`. Absolute encodings integrate the
/// unshifted state x (the field sees x + p).
inline Trajectory integrate_model(const ModelParams& params, const PosEnc& enc, const TokenState& x0,
                                  const IntegratorConfig& cfg) {
  params.validate();
  detail::require_state(x0, params.dim, "integrate_model");
  if (std::holds_alternative<Rotary>(enc)) return integrate(RotaryField(params, x0.rows()), x0, cfg);
  const VanillaField base = VanillaField::from(params);
  if (std::holds_alternative<NoEncoding>(enc)) return integrate(base, x0, cfg);
  return integrate(AbsoluteField{base, encoding_offsets(enc, x0.rows(), params.dim)}, x0, cfg);
}

}  // namespace attnflow
