#pragma once

// Quadratic-space primitives: symmetric part, quadratic forms, Jacobi
// eigendecomposition, definiteness, inversion, matrix exponential and
// convex-hull membership. All functions are pure.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attnflow/error.hpp"
#include "attnflow/matrix.hpp"

namespace attnflow {

enum class Definiteness { PositiveDefinite, NegativeDefinite, Indefinite, NearSingular };

inline const char* to_string(Definiteness d) {
  switch (d) {
    case Definiteness::PositiveDefinite: return "positive-definite";
    case Definiteness::NegativeDefinite: return "negative-definite";
    case Definiteness::Indefinite: return "indefinite";
    case Definiteness::NearSingular: return "near-singular";
  }
  return "?";
}

/// Eigenpairs of a symmetric matrix; values ascending, vectors stored as columns.
struct EigSym {
  Vect values;
  Mat vectors;
};

inline void require_square(const Mat& m, const char* what) {
  detail::require_shape(m.square(), std::string(what) + ": matrix must be square, got " + shape_str(m));
}

/// ½(B + Bᵀ); exactly symmetric.
inline Mat sym(const Mat& b) {
  require_square(b, "sym");
  const std::size_t n = b.rows();
  Mat s(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      const double v = 0.5 * (b(i, j) + b(j, i));
      s(i, j) = v;
      s(j, i) = v;
    }
  return s;
}

/// uᵀ·B·v.
inline double bilinear(const Mat& b, std::span<const double> u, std::span<const double> v) {
  detail::require_shape(b.rows() == u.size() && b.cols() == v.size(), "bilinear: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < b.rows(); ++i) {
    if (u[i] == 0.0) continue;
    s += u[i] * dot(b.row(i), v);
  }
  return s;
}

/// q_B(u) = uᵀ·B·u.
inline double quad_form(const Mat& b, std::span<const double> u) {
  require_square(b, "quad_form");
  return bilinear(b, u, u);
}
inline double quad_form(const Mat& b, const Vect& u) { return quad_form(b, u.span()); }

inline double asymmetry(const Mat& s) {
  double off = 0.0;
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = i + 1; j < s.cols(); ++j) off += std::pow(s(i, j) - s(j, i), 2);
  return std::sqrt(2.0 * off);
}

inline bool is_symmetric(const Mat& s, double rel_tol) {
  return s.square() && asymmetry(s) <= rel_tol * std::max(frobenius_norm(s), 1e-300);
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps until the off-diagonal Frobenius mass drops below 1e-14·‖S‖_F.
/// Throws ContractError when S is not symmetric to 1e-12 relative.
inline EigSym eig_sym(const Mat& s) {
  require_square(s, "eig_sym");
  const std::size_t n = s.rows();
  const double scale = frobenius_norm(s);
  if (asymmetry(s) > 1e-12 * std::max(scale, 1e-300))
    throw ContractError("eig_sym: input is not symmetric");

  Mat a = s;
  Mat v = Mat::identity(n);
  auto off_mass = [&] {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    return std::sqrt(2.0 * off);
  };

  const double target = 1e-14 * scale;
  for (int sweep = 0; sweep < 100 && scale > 0.0; ++sweep) {
    if (off_mass() <= target) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        // Rotation angle that annihilates a(p,q) (Golub & Van Loan 8.5.2).
        const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return a(x, x) < a(y, y); });
  EigSym out{Vect(n), Mat(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) out.vectors(r, k) = v(r, order[k]);
  }
  return out;
}

/// Eigenvalues of sym(B), ascending.
inline Vect sym_eigenvalues(const Mat& b) { return eig_sym(sym(b)).values; }

/// 1e-9 × spectral radius of sym(B), floored at 1e-12.
inline double default_definiteness_tol(const Vect& eigenvalues) {
  return std::max(1e-9 * max_abs(eigenvalues.span()), 1e-12);
}

inline Definiteness classify_eigenvalues(const Vect& ev, double tol) {
  bool pos = true, neg = true;
  for (double l : ev) {
    if (std::abs(l) <= tol) return Definiteness::NearSingular;
    pos = pos && l > tol;
    neg = neg && l < -tol;
  }
  if (pos) return Definiteness::PositiveDefinite;
  if (neg) return Definiteness::NegativeDefinite;
  return Definiteness::Indefinite;
}

/// Classifies the symmetric part of B. `tol` defaults to default_definiteness_tol.
inline Definiteness classify_definiteness(const Mat& b, std::optional<double> tol = std::nullopt) {
  require_square(b, "classify_definiteness");
  if (tol && *tol < 0.0) throw ContractError("classify_definiteness: tol must be >= 0");
  const Vect ev = sym_eigenvalues(b);
  return classify_eigenvalues(ev, tol.value_or(default_definiteness_tol(ev)));
}

/// ‖u‖_B: √q_B(u) for positive-definite sym(B), √(−q_B(u)) for negative-definite.
inline double a_norm(const Mat& b, std::span<const double> u) {
  const Definiteness d = classify_definiteness(b);
  if (d != Definiteness::PositiveDefinite && d != Definiteness::NegativeDefinite)
    throw DomainError(std::string("a_norm: symmetric part is ") + to_string(d));
  const double q = quad_form(b, u);
  return std::sqrt(std::max(0.0, d == Definiteness::PositiveDefinite ? q : -q));
}
inline double a_norm(const Mat& b, const Vect& u) { return a_norm(b, u.span()); }

/// Gauss–Jordan inverse with partial pivoting.
/// Throws SingularityError when a pivot falls below 1e-12·‖M‖_F.
inline Mat invert(const Mat& m) {
  require_square(m, "invert");
  const std::size_t n = m.rows();
  const double threshold = 1e-12 * frobenius_norm(m);
  Mat a = m;
  Mat inv = Mat::identity(n);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    if (!(std::abs(a(piv, col)) > threshold))
      throw SingularityError("invert: matrix is singular to working precision (pivot " +
                             std::to_string(a(piv, col)) + ")");
    if (piv != col) {
      std::swap_ranges(a.row(col).begin(), a.row(col).end(), a.row(piv).begin());
      std::swap_ranges(inv.row(col).begin(), inv.row(col).end(), inv.row(piv).begin());
    }
    const double d = 1.0 / a(col, col);
    for (auto& x : a.row(col)) x *= d;
    for (auto& x : inv.row(col)) x *= d;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a(r, col);
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < n; ++c) {
        a(r, c) -= f * a(col, c);
        inv(r, c) -= f * inv(col, c);
      }
    }
  }
  return inv;
}

/// e^M by scaling and squaring: scale so ‖M/2^s‖₁ ≤ 0.5, sum 20 Taylor terms, square s times.
inline Mat matexp(const Mat& m) {
  require_square(m, "matexp");
  const std::size_t n = m.rows();
  const double nrm = norm1(m);
  int s = 0;
  if (nrm > 0.5) s = static_cast<int>(std::ceil(std::log2(nrm / 0.5)));
  const Mat scaled = m * std::ldexp(1.0, -s);

  Mat result = Mat::identity(n);
  Mat term = Mat::identity(n);
  for (int k = 1; k <= 20; ++k) {
    term = term * scaled;
    term *= 1.0 / k;
    result += term;
  }
  for (int i = 0; i < s; ++i) result = result * result;
  return result;
}

namespace detail {

/// Euclidean projection onto the probability simplex (sort-based).
inline void project_simplex(std::span<double> w) {
  std::vector<double> u(w.begin(), w.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    cum += u[k];
    const double t = (cum - 1.0) / static_cast<double>(k + 1);
    if (u[k] - t > 0.0) theta = t;
  }
  for (auto& x : w) x = std::max(0.0, x - theta);
}

}  // namespace detail

struct HullOptions {
  double tol = 1e-8;
  int max_iterations = 10000;
};

struct HullDecision {
  bool inside = false;
  double lower_bound = 0.0;  // on the distance from p to the hull
  double upper_bound = 0.0;
  int iterations = 0;
};

/// Decides whether `p` lies within `tol` (Euclidean) of conv(points).
///
/// Solves min_{w ∈ simplex} ½‖Σ wᵢ·pointsᵢ − p‖² by accelerated projected
/// gradient. Each iterate certifies both directions: its residual is an
/// upper bound on the distance, and the Frank–Wolfe duality gap gives a
/// lower bound. Throws UndecidedError when neither bound resolves the
/// comparison against `tol` within the iteration cap.
inline HullDecision hull_membership(std::span<const Vect> points, const Vect& p, const HullOptions& opt) {
  detail::require_shape(!points.empty(), "in_convex_hull: need at least one point");
  const std::size_t k = points.size();
  const std::size_t d = p.dim();
  for (const auto& pt : points)
    detail::require_shape(pt.dim() == d, "in_convex_hull: point dimension mismatch");

  // Gram form: f(w) = ½ wᵀGw − bᵀw + ½‖p‖², G = PᵀP, b = Pᵀp.
  Mat g(k, k);
  Vect b(k);
  for (std::size_t i = 0; i < k; ++i) {
    b[i] = dot(points[i], p);
    for (std::size_t j = i; j < k; ++j) g(i, j) = g(j, i) = dot(points[i], points[j]);
  }
  double lip = 0.0;
  for (std::size_t i = 0; i < k; ++i) lip += g(i, i);  // trace bounds λ_max(G)
  lip = std::max(lip, 1e-300);

  auto gradient = [&](const Vect& w) {
    Vect grad = g * w;
    grad -= b;
    return grad;
  };
  auto residual = [&](const Vect& w) {
    Vect r = -1.0 * p;
    for (std::size_t i = 0; i < k; ++i) r += w[i] * points[i];
    return norm2(r);
  };

  Vect w(k, 1.0 / static_cast<double>(k));
  {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t i = 0; i < k; ++i) {
      const double di = norm2(points[i] - p);
      if (di < best_d) best_d = di, best = i;
    }
    if (best_d < residual(w)) {
      std::fill(w.begin(), w.end(), 0.0);
      w[best] = 1.0;
    }
  }
  Vect y = w, w_prev = w;
  double t = 1.0;

  for (int it = 0; it < opt.max_iterations; ++it) {
    const double dist = residual(w);
    const Vect grad_w = gradient(w);
    const double f = 0.5 * dist * dist;
    const double gap = dot(grad_w, w) - *std::min_element(grad_w.begin(), grad_w.end());
    const double lower = std::sqrt(2.0 * std::max(0.0, f - gap));
    if (dist <= opt.tol) return {true, lower, dist, it};
    if (lower > opt.tol) return {false, lower, dist, it};

    const Vect grad_y = gradient(y);
    Vect next = y - (1.0 / lip) * grad_y;
    detail::project_simplex(next.span());
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    w_prev = w;
    w = next;
    y = w + ((t - 1.0) / t_next) * (w - w_prev);
    t = t_next;
    // Gradient-based restart keeps the momentum from overshooting.
    if (dot(grad_y, w - w_prev) > 0.0) {
      y = w;
      t = 1.0;
    }
  }
  throw UndecidedError("in_convex_hull: undecided after " + std::to_string(opt.max_iterations) +
                       " iterations");
}

inline bool in_convex_hull(std::span<const Vect> points, const Vect& p, const HullOptions& opt) {
  return hull_membership(points, p, opt).inside;
}

inline bool in_convex_hull(std::span<const Vect> points, const Vect& p, double tol = 1e-8) {
  return in_convex_hull(points, p, HullOptions{tol, 10000});
}

}  // namespace attnflow
