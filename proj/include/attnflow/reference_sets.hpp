#pragma once

// Fixed two-dimensional parameter sets with known spectral properties, used
// by the demos, the regression tests and the `reference` config source.

#include <optional>
#include <string>
#include <vector>

#include "attnflow/error.hpp"
#include "attnflow/matrix.hpp"
#include "attnflow/params.hpp"
#include "attnflow/quadspace.hpp"

namespace attnflow::reference {

struct ReferenceSet {
  std::string name;
  ModelParams params;
  std::optional<Mat> initial;  // L×D, when the set ships its own tokens
};

/// Q = W, K = I, V = (A⁻¹·W)ᵀ, Dk = 1, so that derive_W_A returns (W, A).
inline ModelParams from_w_a(const Mat& w, const Mat& a) {
  require_square(w, "from_w_a");
  ModelParams p;
  p.dim = w.rows();
  p.key_dim = 1.0;
  p.q = w;
  p.k = Mat::identity(p.dim);
  p.v = (invert(a) * w).transpose();
  return p;
}

inline ModelParams from_w_v(const Mat& w, const Mat& v) {
  ModelParams p;
  p.dim = w.rows();
  p.key_dim = 1.0;
  p.q = w;
  p.k = Mat::identity(p.dim);
  p.v = v;
  return p;
}

/// sym(A) ≻ 0 (eigenvalues 5.12809, 0.0959758).
inline ReferenceSet distance_growing() {
  const Mat a{{1.72628, -3.79592}, {-0.914069, 3.49779}};
  const Mat w{{0.534636, -0.798866}, {-1.17152, -1.92153}};
  const Mat x0{{-1.17525, 1.99834}, {-0.0231564, 0.591678}, {-0.94811, -1.37996}, {1.00246, -1.69335}};
  return {"distance-growing", from_w_a(w, a), x0};
}

/// sym(A) ≺ 0 (eigenvalues −1.50541, −0.334061).
inline ReferenceSet distance_shrinking() {
  const Mat a{{-1.43778, -1.10989}, {0.563455, -0.401696}};
  const Mat w{{0.433083, -0.0371911}, {-0.715343, -1.53568}};
  const Mat x0{{0.123688, 0.20691}, {0.53086, 1.47281}, {-0.78388, -1.24115}, {1.63476, 0.321809}};
  return {"distance-shrinking", from_w_a(w, a), x0};
}

/// Tokens for sets that ship none.
inline Mat default_initial() { return *distance_growing().initial; }

/// sym(A) ≺ 0, sym(W) ≻ 0.
inline ReferenceSet convergence() {
  const Mat a{{-2.94058, -2.12076}, {-5.14498, -4.58104}};
  const Mat w{{0.902496, -2.37879}, {4.36478, 3.84768}};
  return {"convergence", from_w_a(w, a), std::nullopt};
}

/// V = 2I.
inline ReferenceSet divergence() {
  const Mat w{{-0.404078, 0.982735}, {-0.567909, 0.600242}};
  return {"divergence", from_w_v(w, 2.0 * Mat::identity(2)), std::nullopt};
}

/// V = −1.5I without the rotary term; `with_rotary` adds Q̄, K̄.
inline ReferenceSet rotary_shift(bool with_rotary) {
  ModelParams p;
  p.dim = 2;
  p.key_dim = 1.0;
  p.q = Mat{{0.07331137, 0.17647239}, {-0.32738218, -0.43457359}};
  p.k = Mat{{-2.54009796, 1.82991692}, {-0.95688637, 0.60349328}};
  p.v = -1.5 * Mat::identity(2);
  if (with_rotary) {
    RopeParams r;
    r.qbar = Mat{{-3.01517413, 2.4430872}, {2.11630464, 1.40111342}};
    r.kbar = Mat{{5.03454859, -3.12492845}, {4.58643881, -2.00780098}};
    p.rope = r;
  }
  return {with_rotary ? "rotary-shift-rope" : "rotary-shift-plain", p, std::nullopt};
}

/// Rotary pair with V = −I.
inline ReferenceSet rotary_convergent() {
  ModelParams p;
  p.dim = 2;
  p.key_dim = 1.0;
  p.q = Mat{{-1.18765511, 0.8975229}, {-0.7793589, 0.79105257}};
  p.k = Mat{{-1.97520362, -1.98198651}, {2.24167927, 2.93460903}};
  p.v = -1.0 * Mat::identity(2);
  RopeParams r;
  r.qbar = Mat{{1.04027991, -0.12991073}, {-1.32542484, 1.08074871}};
  r.kbar = Mat{{-1.00477795, -0.48804888}, {-0.42151108, 0.02556926}};
  p.rope = r;
  return {"rotary-convergent", p, std::nullopt};
}

/// Rotary pair with V = 1.5I.
inline ReferenceSet rotary_divergent() {
  ModelParams p;
  p.dim = 2;
  p.key_dim = 1.0;
  p.q = Mat{{2.068739, -1.83750201}, {-0.75622145, 0.4784381}};
  p.k = Mat{{-1.12583337, -1.40120114}, {-2.79629618, -3.24668939}};
  p.v = 1.5 * Mat::identity(2);
  RopeParams r;
  r.qbar = Mat{{-0.67880222, 1.21234986}, {-0.67132474, 0.90406252}};
  r.kbar = Mat{{0.57406142, 2.88899216}, {-1.10421806, 0.75603913}};
  p.rope = r;
  return {"rotary-divergent", p, std::nullopt};
}

inline std::vector<std::string> names() {
  return {"distance-growing",   "distance-shrinking", "convergence",       "divergence",
          "rotary-shift-plain", "rotary-shift-rope",  "rotary-convergent", "rotary-divergent"};
}

inline ReferenceSet by_name(const std::string& name) {
  if (name == "distance-growing") return distance_growing();
  if (name == "distance-shrinking") return distance_shrinking();
  if (name == "convergence") return convergence();
  if (name == "divergence") return divergence();
  if (name == "rotary-shift-plain") return rotary_shift(false);
  if (name == "rotary-shift-rope") return rotary_shift(true);
  if (name == "rotary-convergent") return rotary_convergent();
  if (name == "rotary-divergent") return rotary_divergent();
  throw ConfigError("unknown reference set '" + name + "'");
}

}  // namespace attnflow::reference
