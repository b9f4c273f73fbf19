#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "attnflow/dynamics.hpp"
#include "attnflow/quadspace.hpp"
#include "attnflow/rng.hpp"

using namespace attnflow;

namespace {

ModelParams make_params(const Mat& q, const Mat& k, const Mat& v, double dk = 1.0) {
  return ModelParams{q.rows(), dk, q, k, v, std::nullopt};
}

ModelParams random_model(CounterRng& rng, std::size_t d, double sd = 0.5) {
  return make_params(rng.normal_mat(d, d, sd), rng.normal_mat(d, d, sd), rng.normal_mat(d, d), static_cast<double>(d));
}

// dx_l = Vᵀ Σ_i softmax_i(x_lᵀ W_li x_i) x_i with plain loops and the unstabilised softmax.
template <class WFn>
Mat naive_rhs(const Mat& x, const Mat& v, WFn w_of) {
  const std::size_t n = x.rows(), d = x.cols();
  Mat out(n, d);
  for (std::size_t l = 0; l < n; ++l) {
    std::vector<double> e(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const Mat w = w_of(l, i);
      double z = 0.0;
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) z += x(l, a) * w(a, b) * x(i, b);
      total += e[i] = std::exp(z);
    }
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < d; ++a) s += v(a, c) * e[i] / total * x(i, a);
      out(l, c) = s;
    }
  }
  return out;
}

double log_sum_exp_field(const Mat& w, const Mat& x, const Vect& u) {
  double m = -INFINITY;
  std::vector<double> z(x.rows());
  for (std::size_t j = 0; j < x.rows(); ++j) m = std::max(m, z[j] = bilinear(w, u.span(), x.row(j)));
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

double rel_diff(const Mat& a, const Mat& b) { return frobenius_norm(a - b) / std::max(1.0, frobenius_norm(b)); }

}  // namespace

TEST(AttentionWeights, EqualLogits) {
  const Vect w = attention_weights(std::vector<double>{2, 2, 2, 2});
  for (double x : w) EXPECT_DOUBLE_EQ(x, 0.25);
}

TEST(AttentionWeights, LargeLogitsDoNotOverflow) {
  const Vect w = attention_weights(std::vector<double>{1000, 0});
  EXPECT_EQ(w[0], 1.0);
  EXPECT_LE(w[1], 1e-300);
}

TEST(AttentionWeights, MatchesDirectFormula) {
  const Vect w = attention_weights(std::vector<double>{1, 2, 3});
  const double t = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(w[0], std::exp(1.0) / t, 1e-15);
  EXPECT_NEAR(w[1], std::exp(2.0) / t, 1e-15);
  EXPECT_NEAR(w[2], std::exp(3.0) / t, 1e-15);
}

TEST(AttentionWeights, SimplexOutput) {
  CounterRng rng(1);
  for (int rep = 0; rep < 100; ++rep) {
    const Vect z = rng.normal_vect(1 + rep % 9, 50.0);
    const Vect w = attention_weights(z.span());
    double s = 0.0;
    for (double x : w) {
      EXPECT_GE(x, 0.0);
      s += x;
    }
    EXPECT_NEAR(s, 1.0, 1e-15);
  }
}

TEST(AttentionWeights, NonFiniteLogit) {
  EXPECT_THROW(attention_weights(std::vector<double>{1, NAN}), ContractError);
  EXPECT_THROW(attention_weights(std::vector<double>{INFINITY, 0}), NonFiniteError);
}

TEST(Vanilla, SingleTokenIsLinear) {
  CounterRng rng(2);
  const ModelParams p = random_model(rng, 3);
  const Mat x = rng.normal_mat(1, 3);
  const Mat dx = rhs_vanilla(p, x);
  const Vect expect = p.v.transpose() * x.row_vect(0);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(dx(0, c), expect[c], 1e-15);
}

TEST(Vanilla, ZeroWAveragesTokens) {
  CounterRng rng(3);
  const Mat v = rng.normal_mat(2, 2);
  const ModelParams p = make_params(Mat(2, 2), Mat(2, 2), v);
  const Mat x = rng.normal_mat(5, 2);
  Vect mean(2);
  for (std::size_t l = 0; l < 5; ++l) mean += 0.2 * x.row_vect(l);
  const Vect expect = v.transpose() * mean;
  const Mat dx = rhs_vanilla(p, x);
  for (std::size_t l = 0; l < 5; ++l)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(dx(l, c), expect[c], 1e-14);
}

TEST(Vanilla, HandCaseMatchesDoubleLoop) {
  const Mat q{{1.0, 0.5}, {-0.3, 0.8}}, k{{0.2, -1.0}, {0.7, 0.4}}, v{{0.5, 1.0}, {-1.5, 0.25}};
  const ModelParams p = make_params(q, k, v, 2.0);
  const Mat x{{0.3, -0.7}, {1.1, 0.4}};
  const Mat w = derive_W(p);
  EXPECT_LE(rel_diff(rhs_vanilla(p, x), naive_rhs(x, v, [&](auto, auto) { return w; })), 1e-14);
}

TEST(Vanilla, RandomMatchesDoubleLoop) {
  CounterRng rng(4);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t d = 1 + rep % 5, n = 1 + rep % 7;
    const ModelParams p = random_model(rng, d);
    const Mat x = rng.normal_mat(n, d);
    const Mat w = derive_W(p);
    EXPECT_LE(rel_diff(rhs_vanilla(p, x), naive_rhs(x, p.v, [&](auto, auto) { return w; })), 1e-13);
  }
}

TEST(Vanilla, ShapeMismatch) {
  const ModelParams p = make_params(Mat::identity(2), Mat::identity(2), Mat::identity(2));
  EXPECT_THROW(rhs_vanilla(p, Mat(3, 3)), ShapeError);
}

TEST(Vanilla, GradientOfLogSumExp) {
  // A·dx_l equals ∇_u log Σ_j e^{uᵀWx_j} at u = x_l.
  CounterRng rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t d = 2 + rep % 3, n = 2 + rep % 5;
    const ModelParams p = random_model(rng, d);
    const Mat x = rng.normal_mat(n, d);
    const DerivedWA wa = derive_W_A(p);
    const Mat dx = rhs_vanilla(p, x);
    for (std::size_t l = 0; l < n; ++l) {
      const Vect lhs = wa.a * dx.row_vect(l);
      const Vect u = x.row_vect(l);
      const double step = 1e-6 * (1.0 + norm2(u));
      for (std::size_t c = 0; c < d; ++c) {
        Vect up = u, dn = u;
        up[c] += step;
        dn[c] -= step;
        const double g = (log_sum_exp_field(wa.w, x, up) - log_sum_exp_field(wa.w, x, dn)) / (2 * step);
        EXPECT_NEAR(lhs[c], g, 1e-5 * (1.0 + std::abs(g)));
      }
    }
  }
}

TEST(Vanilla, LogSumExpIsConvex) {
  CounterRng rng(6);
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t d = 1 + rep % 4;
    const Mat w = rng.normal_mat(d, d);
    const Mat x = rng.normal_mat(1 + rep % 6, d);
    const Vect u = rng.normal_vect(d), v = rng.normal_vect(d);
    const Vect mid = 0.5 * (u + v);
    EXPECT_GE(log_sum_exp_field(w, x, u) + log_sum_exp_field(w, x, v) - 2 * log_sum_exp_field(w, x, mid), -1e-12);
  }
}

TEST(Vanilla, VelocityLiesInImageOfHull) {
  CounterRng rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t d = 2 + rep % 3, n = 1 + rep % 6;
    const ModelParams p = random_model(rng, d);
    const Mat x = rng.normal_mat(n, d);
    const Mat dx = rhs_vanilla(p, x);
    const Mat vti = invert(p.v.transpose());
    std::vector<Vect> pts;
    for (std::size_t i = 0; i < n; ++i) pts.push_back(x.row_vect(i));
    for (std::size_t l = 0; l < n; ++l) EXPECT_TRUE(in_convex_hull(pts, vti * dx.row_vect(l), 1e-8));
  }
}

TEST(Sinusoidal, FirstRowsAndRange) {
  const Mat p = sinusoidal_encoding(6, 5);
  EXPECT_EQ(p.row_vect(0), (Vect{0, 1, 0, 1, 0}));
  EXPECT_NEAR(p(1, 0), 0.841471, 1e-6);
  EXPECT_DOUBLE_EQ(p(1, 0), std::sin(1.0));
  EXPECT_DOUBLE_EQ(p(3, 3), std::cos(3.0 * std::pow(10000.0, -2.0 / 5.0)));
  for (double v : p.data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Sinusoidal, OffsetShiftsRows) {
  const Mat a = sinusoidal_encoding(5, 4), b = sinusoidal_encoding(4, 4, 1);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(b.row_vect(i), a.row_vect(i + 1));
}

TEST(Absolute, ZeroEncodingIsVanilla) {
  CounterRng rng(8);
  const ModelParams p = random_model(rng, 3);
  const Mat x = rng.normal_mat(4, 3);
  EXPECT_EQ(rhs_absolute(p, Mat(4, 3), x), rhs_vanilla(p, x));
}

TEST(Absolute, ShiftEquivalenceIsBitExact) {
  CounterRng rng(9);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t d = 1 + rep % 6, n = 1 + rep % 8;
    const ModelParams p = random_model(rng, d);
    const Mat x = rng.normal_mat(n, d), pe = rng.normal_mat(n, d);
    EXPECT_EQ(rhs_absolute(p, pe, x), rhs_vanilla(p, x + pe));
  }
}

TEST(Absolute, SingleToken) {
  CounterRng rng(10);
  const ModelParams p = random_model(rng, 2);
  const Mat x = rng.normal_mat(1, 2), pe = rng.normal_mat(1, 2);
  const Vect expect = p.v.transpose() * (x + pe).row_vect(0);
  const Mat dx = rhs_absolute(p, pe, x);
  EXPECT_NEAR(dx(0, 0), expect[0], 1e-15);
  EXPECT_NEAR(dx(0, 1), expect[1], 1e-15);
}

TEST(Absolute, ShapeMismatch) {
  const ModelParams p = make_params(Mat::identity(2), Mat::identity(2), Mat::identity(2));
  EXPECT_THROW(rhs_absolute(p, Mat(3, 2), Mat(2, 2)), ShapeError);
}

TEST(Rotation, IdentityAtZeroAndUnitAngle) {
  EXPECT_EQ(rotation_matrix(4, 10000.0, 0), Mat::identity(4));
  const Mat r = rotation_matrix(2, 10000.0, 1);
  EXPECT_DOUBLE_EQ(r(0, 0), std::cos(1.0));
  EXPECT_DOUBLE_EQ(r(0, 1), -std::sin(1.0));
  EXPECT_DOUBLE_EQ(r(1, 0), std::sin(1.0));
  EXPECT_DOUBLE_EQ(r(1, 1), std::cos(1.0));
  EXPECT_THROW(rotation_matrix(3, 10000.0, 1), DomainError);
}

TEST(Rotation, AngleAdditionAndOrthogonality) {
  for (std::size_t d : {2u, 4u, 8u})
    for (long long m = -5; m <= 5; ++m)
      for (long long n = -5; n <= 5; ++n) {
        const Mat rm = rotation_matrix(d, 10000.0, m);
        EXPECT_LE(max_abs((rm * rotation_matrix(d, 10000.0, n) - rotation_matrix(d, 10000.0, m + n)).data()), 1e-12);
        EXPECT_LE(max_abs((rm * rm.transpose() - Mat::identity(d)).data()), 1e-12);
        for (std::size_t k = 0; k < d / 2; ++k)
          EXPECT_NEAR(rm(2 * k, 2 * k) * rm(2 * k + 1, 2 * k + 1) - rm(2 * k, 2 * k + 1) * rm(2 * k + 1, 2 * k), 1.0,
                      1e-12);
      }
}

TEST(RopeInteraction, ReducesWithoutRotaryTerm) {
  CounterRng rng(11);
  ModelParams p = random_model(rng, 4);
  p.rope = RopeParams{Mat(4, 4), rng.normal_mat(4, 4), 10000.0, std::nullopt};
  const Mat w = derive_W(p);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t i = 0; i < 3; ++i) EXPECT_LE(max_abs((rope_interaction(p, l, i) - w).data()), 1e-15);
}

TEST(RopeInteraction, DiagonalUsesUnrotatedTerm) {
  CounterRng rng(12);
  ModelParams p = random_model(rng, 2);
  p.rope = RopeParams{rng.normal_mat(2, 2), rng.normal_mat(2, 2), 10000.0, std::nullopt};
  const Mat expect = derive_W(p) + p.rope->qbar * p.rope->kbar.transpose() * p.w_scale();
  EXPECT_LE(max_abs((rope_interaction(p, 3, 3) - expect).data()), 1e-14);
}

TEST(RopeInteraction, LambdaShiftOnly) {
  ModelParams p = make_params(Mat(2, 2), Mat(2, 2), Mat::identity(2));
  LambdaMod mod;
  mod.lambda = -1.0;
  p.rope = RopeParams{Mat(2, 2), Mat(2, 2), 10000.0, mod};
  EXPECT_EQ(rope_interaction(p, 0, 1), -1.0 * Mat::identity(2));
  p.rope->lambda_mod->kind = LambdaMod::Kind::DiagScaled;
  p.rope->lambda_mod->diag = Vect{2.0, 0.5};
  EXPECT_EQ(rope_interaction(p, 1, 0), (Mat{{-2.0, 0}, {0, -0.5}}));
}

TEST(RopeInteraction, MissingRope) {
  const ModelParams p = make_params(Mat::identity(2), Mat::identity(2), Mat::identity(2));
  EXPECT_THROW(rope_interaction(p, 0, 0), ConfigError);
  EXPECT_THROW(rhs_rotary(p, Mat(2, 2)), ConfigError);
}

TEST(Rotary, ZeroRotaryTermIsVanilla) {
  CounterRng rng(13);
  for (int rep = 0; rep < 20; ++rep) {
    ModelParams p = random_model(rng, 4);
    p.rope = RopeParams{Mat(4, 4), rng.normal_mat(4, 4), 10000.0, std::nullopt};
    const Mat x = rng.normal_mat(5, 4);
    EXPECT_LE(rel_diff(rhs_rotary(p, x), rhs_vanilla(p, x)), 1e-14);
  }
}

TEST(Rotary, SingleToken) {
  CounterRng rng(14);
  ModelParams p = random_model(rng, 2);
  p.rope = RopeParams{rng.normal_mat(2, 2), rng.normal_mat(2, 2), 10000.0, std::nullopt};
  const Mat x = rng.normal_mat(1, 2);
  const Vect expect = p.v.transpose() * x.row_vect(0);
  const Mat dx = rhs_rotary(p, x);
  EXPECT_NEAR(dx(0, 0), expect[0], 1e-14);
  EXPECT_NEAR(dx(0, 1), expect[1], 1e-14);
}

TEST(Rotary, HandCaseMatchesPairwiseLoop) {
  ModelParams p = make_params(Mat{{0.4, -0.2}, {0.1, 0.9}}, Mat{{1.0, 0.3}, {-0.6, 0.2}}, Mat{{-1.0, 0.2}, {0.3, -0.8}});
  p.rope = RopeParams{Mat{{0.5, 1.0}, {-0.7, 0.1}}, Mat{{0.2, 0.0}, {1.3, -0.4}}, 10000.0, std::nullopt};
  const Mat x{{0.3, -0.2}, {1.0, 0.5}, {-0.4, 0.8}};
  const Mat oracle = naive_rhs(x, p.v, [&](std::size_t l, std::size_t i) {
    const double m = static_cast<double>(i) - static_cast<double>(l);
    const Mat r{{std::cos(m), -std::sin(m)}, {std::sin(m), std::cos(m)}};
    return p.q * p.k.transpose() + p.rope->qbar * r * p.rope->kbar.transpose();
  });
  EXPECT_LE(rel_diff(rhs_rotary(p, x), oracle), 1e-14);
}

TEST(Rotary, FactoredLogitsAgree) {
  CounterRng rng(15);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t d = 2 * (1 + rep % 4), n = 1 + rep % 9;
    ModelParams p = random_model(rng, d);
    LambdaMod mod;
    mod.lambda = -0.3;
    p.rope = RopeParams{rng.normal_mat(d, d), rng.normal_mat(d, d), 100.0, rep % 2 ? std::optional(mod) : std::nullopt};
    const RotaryField f(p, n);
    const Mat x = rng.normal_mat(n, d);
    const Mat direct = f.logits(x);
    EXPECT_LE(max_abs((direct - f.logits_factored(x)).data()), 1e-12 * std::max(1.0, max_abs(direct.data())));
  }
}

TEST(Rotary, FieldRejectsOtherTokenCounts) {
  CounterRng rng(16);
  ModelParams p = random_model(rng, 2);
  p.rope = RopeParams{rng.normal_mat(2, 2), rng.normal_mat(2, 2), 10000.0, std::nullopt};
  const RotaryField f(p, 3);
  EXPECT_THROW(f(Mat(4, 2)), ShapeError);
}

TEST(Encodings, Offsets) {
  EXPECT_TRUE(encoding_offsets(NoEncoding{}, 3, 2).empty());
  EXPECT_TRUE(encoding_offsets(Rotary{}, 3, 2).empty());
  EXPECT_EQ(encoding_offsets(AbsoluteSinusoidal{2}, 3, 4), sinusoidal_encoding(3, 4, 2));
  EXPECT_THROW(encoding_offsets(AbsoluteGiven{Mat(2, 2)}, 3, 2), ShapeError);
}
