#pragma once

// Right-hand sides of the token ODE
//
//   dx_l/dt = Vᵀ · Σ_i softmax_i(x_lᵀ·W_li·x_i) · x_i
//
// with W_li = W for plain self-attention, a shifted state for absolute
// positional encodings, and a relative-position rotation term for rotary
// encodings. Token states are L×D matrices whose row l is x_l; in that
// layout the whole field is dX = softmax(logits)·X·V.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "attnflow/error.hpp"
#include "attnflow/matrix.hpp"
#include "attnflow/params.hpp"

namespace attnflow {

/// L tokens × D features, row l = x_l.
using TokenState = Mat;

/// Thrown when a logit or state entry is NaN/Inf; the integrator treats it as blow-up.
struct NonFiniteError : ContractError {
  using ContractError::ContractError;
};

/// Log-sum-exp stabilised softmax.
inline void attention_weights(std::span<const double> logits, std::span<double> out) {
  detail::require_shape(logits.size() == out.size() && !logits.empty(),
                        "attention_weights: size mismatch");
  double m = -INFINITY;
  for (double z : logits) {
    if (!std::isfinite(z)) throw NonFiniteError("attention_weights: non-finite logit");
    m = std::max(m, z);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += out[i] = std::exp(logits[i] - m);
  for (auto& w : out) w /= total;
}

inline Vect attention_weights(std::span<const double> logits) {
  Vect w(logits.size());
  attention_weights(logits, w.span());
  return w;
}

namespace detail {

inline void require_state(const Mat& x, std::size_t dim, const char* who) {
  if (x.cols() != dim || x.rows() < 1)
    throw ShapeError(std::string(who) + ": state is " + shape_str(x) + ", expected Lx" +
                     std::to_string(dim));
}

/// dX = softmax(logits)·X·V given the full L×L logit matrix.
inline Mat apply_weights(const Mat& logits, const Mat& x, const Mat& v) {
  const std::size_t n = x.rows();
  Mat weights(n, n);
  for (std::size_t l = 0; l < n; ++l) attention_weights(logits.row(l), weights.row(l));
  return (weights * x) * v;
}

}  // namespace detail

/// Plain self-attention field with W and V fixed.
struct VanillaField {
  Mat w;
  Mat v;

  static VanillaField from(const ModelParams& p) { return {derive_W(p), p.v}; }

  Mat logits(const Mat& x) const {
    const Mat g = x * w;  // row l = x_lᵀ·W
    return g * x.transpose();
  }

  Mat operator()(const Mat& x) const {
    detail::require_state(x, w.rows(), "rhs_vanilla");
    return detail::apply_weights(logits(x), x, v);
  }
};

inline Mat rhs_vanilla(const ModelParams& p, const Mat& x) {
  if (x.cols() != p.dim) throw ShapeError("rhs_vanilla: state dimension != params D");
  return VanillaField::from(p)(x);
}

/// p_{i,j} = sin(i·10000^{−j/D}) (j even), cos(i·10000^{−(j−1)/D}) (j odd);
/// i runs from `offset` to offset+L−1, j from 0.
inline Mat sinusoidal_encoding(std::size_t tokens, std::size_t dim, std::size_t offset = 0) {
  if (tokens < 1 || dim < 1) throw ShapeError("sinusoidal_encoding: L and D must be >= 1");
  Mat p(tokens, dim);
  for (std::size_t i = 0; i < tokens; ++i) {
    const double pos = static_cast<double>(i + offset);
    for (std::size_t j = 0; j < dim; ++j) {
      const double ex = static_cast<double>(j % 2 == 0 ? j : j - 1) / static_cast<double>(dim);
      const double arg = pos * std::pow(10000.0, -ex);
      p(i, j) = j % 2 == 0 ? std::sin(arg) : std::cos(arg);
    }
  }
  return p;
}

/// Absolute positional encoding: the plain field evaluated at X + P.
struct AbsoluteField {
  VanillaField base;
  Mat p;

  Mat operator()(const Mat& x) const {
    if (x.rows() != p.rows() || x.cols() != p.cols())
      throw ShapeError("rhs_absolute: encoding is " + shape_str(p) + ", state is " + shape_str(x));
    return base(x + p);
  }
};

inline Mat rhs_absolute(const ModelParams& params, const Mat& p, const Mat& x) {
  if (x.cols() != params.dim) throw ShapeError("rhs_absolute: state dimension != params D");
  return AbsoluteField{VanillaField::from(params), p}(x);
}

/// Block-diagonal rotation by m·θ_k, θ_k = base^{−2(k−1)/D}, k = 1..D/2.
inline Mat rotation_matrix(std::size_t dim, double theta_base, long long m) {
  if (dim % 2 != 0 || dim == 0) throw DomainError("rotation_matrix: D must be even and positive");
  Mat r(dim, dim);
  for (std::size_t k = 0; k < dim / 2; ++k) {
    const double theta = std::pow(theta_base, -2.0 * static_cast<double>(k) / static_cast<double>(dim));
    const double ang = static_cast<double>(m) * theta;
    const double c = std::cos(ang), s = std::sin(ang);
    r(2 * k, 2 * k) = c;
    r(2 * k, 2 * k + 1) = -s;
    r(2 * k + 1, 2 * k) = s;
    r(2 * k + 1, 2 * k + 1) = c;
  }
  return r;
}

namespace detail {

inline const RopeParams& require_rope(const ModelParams& p) {
  if (!p.rope) throw ConfigError("rotary encoding requires Qbar/Kbar parameters");
  if (p.dim % 2 != 0) throw ConfigError("rotary encoding requires even D");
  return *p.rope;
}

}  // namespace detail

/// W_li = (Q·Kᵀ + Q̄·R_{i−l}·K̄ᵀ)/√Dk, plus λ·I or λ·diag(a) when configured.
inline Mat rope_interaction(const ModelParams& p, std::size_t l, std::size_t i) {
  const RopeParams& rp = detail::require_rope(p);
  const long long m = static_cast<long long>(i) - static_cast<long long>(l);
  Mat w = (p.q * p.k.transpose() + rp.qbar * rotation_matrix(p.dim, rp.theta_base, m) *
                                        rp.kbar.transpose()) *
          p.w_scale();
  if (rp.lambda_mod) w += rp.lambda_mod->shift(p.dim);
  return w;
}

/// Rotary field. Interaction matrices for every relative offset i − l are
/// built at construction for a fixed token count; logits are evaluated
/// pairwise as x_lᵀ·W_li·x_i.
class RotaryField {
 public:
  RotaryField(ModelParams p, std::size_t tokens) : params_(std::move(p)), tokens_(tokens) {
    detail::require_rope(params_);
    params_.validate();
    if (tokens_ < 1) throw ShapeError("RotaryField: need at least one token");
    by_offset_.reserve(2 * tokens_ - 1);
    for (long long m = 1 - static_cast<long long>(tokens_); m < static_cast<long long>(tokens_); ++m)
      by_offset_.push_back(m >= 0 ? rope_interaction(params_, 0, static_cast<std::size_t>(m))
                                  : rope_interaction(params_, static_cast<std::size_t>(-m), 0));
  }

  const ModelParams& params() const { return params_; }
  std::size_t tokens() const { return tokens_; }

  /// W_li for i − l = m, |m| < tokens.
  const Mat& interaction(long long m) const {
    return by_offset_.at(static_cast<std::size_t>(m + static_cast<long long>(tokens_) - 1));
  }

  Mat logits(const Mat& x) const {
    require(x);
    const std::size_t n = x.rows();
    Mat z(n, n);
    for (std::size_t l = 0; l < n; ++l)
      for (std::size_t i = 0; i < n; ++i)
        z(l, i) = bilinear(interaction(static_cast<long long>(i) - static_cast<long long>(l)),
                           x.row(l), x.row(i));
    return z;
  }

  /// Same logits through the rotate-query / rotate-key factorisation:
  /// x_lᵀ·Q̄·R_{i−l}·K̄ᵀ·x_i = (R_l·Q̄ᵀx_l)·(R_i·K̄ᵀx_i).
  Mat logits_factored(const Mat& x) const {
    require(x);
    const RopeParams& rp = *params_.rope;
    const std::size_t n = x.rows();
    const double scale = params_.w_scale();
    const Mat base = (params_.q * params_.k.transpose()) * scale;
    Mat qr(n, params_.dim), kr(n, params_.dim);
    const Mat qx = x * rp.qbar;  // row l = (Q̄ᵀx_l)ᵀ
    const Mat kx = x * rp.kbar;
    for (std::size_t t = 0; t < n; ++t) {
      const Mat r = rotation_matrix(params_.dim, rp.theta_base, static_cast<long long>(t));
      const Vect a = r * qx.row_vect(t);
      const Vect b = r * kx.row_vect(t);
      std::copy(a.begin(), a.end(), qr.row(t).begin());
      std::copy(b.begin(), b.end(), kr.row(t).begin());
    }
    Mat z = (x * base) * x.transpose();
    const Mat dz = qr * kr.transpose();
    const Mat shift = rp.lambda_mod ? rp.lambda_mod->shift(params_.dim) : Mat(params_.dim, params_.dim);
    for (std::size_t l = 0; l < n; ++l)
      for (std::size_t i = 0; i < n; ++i)
        z(l, i) += scale * dz(l, i) + bilinear(shift, x.row(l), x.row(i));
    return z;
  }

  Mat operator()(const Mat& x) const { return detail::apply_weights(logits(x), x, params_.v); }

 private:
  void require(const Mat& x) const {
    detail::require_state(x, params_.dim, "rhs_rotary");
    if (x.rows() != tokens_)
      throw ShapeError("rhs_rotary: field built for " + std::to_string(tokens_) + " tokens, state has " +
                       std::to_string(x.rows()));
  }

  ModelParams params_;
  std::size_t tokens_;
  std::vector<Mat> by_offset_;
};

inline Mat rhs_rotary(const ModelParams& p, const Mat& x) {
  if (x.cols() != p.dim) throw ShapeError("rhs_rotary: state dimension != params D");
  return RotaryField(p, x.rows())(x);
}

/// Positional-encoding selection.
struct NoEncoding {};
struct AbsoluteSinusoidal {
  std::size_t offset = 0;
};
struct AbsoluteGiven {
  Mat p;
};
struct Rotary {};
using PosEnc = std::variant<NoEncoding, AbsoluteSinusoidal, AbsoluteGiven, Rotary>;

/// Positional vectors that shift the state, or an empty matrix when none apply.
inline Mat encoding_offsets(const PosEnc& enc, std::size_t tokens, std::size_t dim) {
  if (const auto* s = std::get_if<AbsoluteSinusoidal>(&enc)) return sinusoidal_encoding(tokens, dim, s->offset);
  if (const auto* g = std::get_if<AbsoluteGiven>(&enc)) {
    if (g->p.rows() != tokens || g->p.cols() != dim)
      throw ShapeError("AbsoluteGiven: encoding is " + shape_str(g->p) + ", state is " +
                       std::to_string(tokens) + "x" + std::to_string(dim));
    return g->p;
  }
  return {};
}

}  // namespace attnflow
