#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sarpf/attention.hpp"
#include "sarpf/rng.hpp"

using namespace sarpf;

namespace {

MhsaParams random_mhsa(Rng& rng, std::size_t heads, std::size_t dk, double sigma = 0.5) {
  const std::size_t d = heads * dk;
  return {random_matrix(rng, d, d, sigma), random_matrix(rng, d, d, sigma), random_matrix(rng, d, d, sigma), heads};
}

// Scalar restatement: logits_ij = (q_i . k_j + R_qk[i][j]) / sqrt(d_k),
// v_t += R_v[:, t], softmax over j, output = sum_j a_ij v_j.
Tensor4 reference_mhsa(const Tensor4& x, const MhsaParams& p, const RegisterTokens* reg) {
  const Shape4 s = x.shape();
  const std::size_t d = s.c, hw = s.plane(), dk = d / p.head_count;
  Tensor4 out(s);
  auto token = [&](std::size_t b, std::size_t t, std::size_t c) { return x(b, c, t / s.w, t % s.w); };
  auto project = [&](const Matrix& w, std::size_t b, std::size_t t, std::size_t col) {
    double acc = 0;
    for (std::size_t c = 0; c < d; ++c) acc += token(b, t, c) * w(c, col);
    return acc;
  };
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t h = 0; h < p.head_count; ++h)
      for (std::size_t i = 0; i < hw; ++i) {
        std::vector<double> logit(hw);
        for (std::size_t j = 0; j < hw; ++j) {
          double dotp = 0;
          for (std::size_t c = 0; c < dk; ++c) dotp += project(p.wq, b, i, h * dk + c) * project(p.wk, b, j, h * dk + c);
          if (reg) dotp += reg->qk[h](i, j);
          logit[j] = dotp / std::sqrt(static_cast<double>(dk));
        }
        const double mx = *std::max_element(logit.begin(), logit.end());
        double z = 0;
        for (double& l : logit) z += (l = std::exp(l - mx));
        for (std::size_t c = 0; c < dk; ++c) {
          double acc = 0;
          for (std::size_t j = 0; j < hw; ++j) {
            double v = project(p.wv, b, j, h * dk + c);
            if (reg) v += reg->v[h](c, j);
            acc += logit[j] / z * v;
          }
          out(b, h * dk + c, i / s.w, i % s.w) = acc;
        }
      }
  return out;
}

}  // namespace

TEST(Mhsa, MatchesScalarReference) {
  Rng rng(1);
  for (int t = 0; t < 15; ++t) {
    const std::size_t heads = static_cast<std::size_t>(rng.uniform_int(1, 3));
    const std::size_t dk = static_cast<std::size_t>(rng.uniform_int(1, 3));
    const auto p = random_mhsa(rng, heads, dk);
    const auto x = random_normal(rng, {2, heads * dk, 3, static_cast<std::size_t>(rng.uniform_int(1, 4))});
    const auto reg = build_registers(rng, heads, x.shape().plane(), dk, 0.8);
    EXPECT_LT(max_abs_diff(mhsa_forward(x, p), reference_mhsa(x, p, nullptr)), 1e-12);
    EXPECT_LT(max_abs_diff(mhsa_forward(x, p, reg), reference_mhsa(x, p, &reg)), 1e-12);
  }
}

TEST(Mhsa, ZeroRegistersCollapse) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const auto p = random_mhsa(rng, 2, 2, 1.0);
    const auto x = random_normal(rng, {1, 4, 3, 3});
    EXPECT_LT(max_abs_diff(mhsa_forward(x, p, RegisterTokens::zeros(2, 9, 2)), mhsa_forward(x, p)), 1e-12);
  }
}

TEST(Mhsa, UniformAttentionAveragesTokens) {
  Rng rng(3);
  const std::size_t d = 4;
  const MhsaParams p{Matrix(d, d), Matrix(d, d), Matrix::identity(d), 2};
  const auto x = random_normal(rng, {2, d, 3, 2});
  const auto tr = mhsa_forward_traced(x, p, nullptr);
  for (const auto& a : tr.attention)
    for (double v : a.data()) EXPECT_NEAR(v, 1.0 / 6.0, 1e-15);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < d; ++c) {
      const auto plane = x.plane(b, c);
      const double mean = std::accumulate(plane.begin(), plane.end(), 0.0) / 6.0;
      for (double v : tr.output.plane(b, c)) EXPECT_NEAR(v, mean, 1e-12);
    }
}

TEST(Mhsa, SingleTokenReturnsValueRow) {
  Rng rng(4);
  const auto p = random_mhsa(rng, 2, 3);
  const auto x = random_normal(rng, {1, 6, 1, 1});
  const auto out = mhsa_forward(x, p);
  for (std::size_t c = 0; c < 6; ++c) {
    double v = 0;
    for (std::size_t k = 0; k < 6; ++k) v += x[k] * p.wv(k, c);
    EXPECT_NEAR(out[c], v, 1e-12);
  }
}

TEST(Mhsa, AttentionRowsStochastic) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const auto p = random_mhsa(rng, 2, 2, 2.0);
    const auto x = random_normal(rng, {2, 4, 4, 4});
    const auto reg = build_registers(rng, 2, 16, 2, 3.0);
    const auto tr = mhsa_forward_traced(x, p, &reg);
    for (const auto& a : tr.attention)
      for (std::size_t r = 0; r < a.rows(); ++r) {
        const auto row = a.row(r);
        EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
      }
  }
}

TEST(Mhsa, OutputWithinValueHull) {
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    const auto p = random_mhsa(rng, 2, 2, 1.0);
    const auto x = random_normal(rng, {1, 4, 3, 3});
    const auto tr = mhsa_forward_traced(x, p, nullptr);
    const Matrix v = matmul([&] {
      Matrix m(9, 4);
      for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t i = 0; i < 9; ++i) m(i, c) = x(0, c, i / 3, i % 3);
      return m;
    }(), p.wv);
    for (std::size_t c = 0; c < 4; ++c) {
      double lo = v(0, c), hi = v(0, c);
      for (std::size_t i = 1; i < 9; ++i) {
        lo = std::min(lo, v(i, c));
        hi = std::max(hi, v(i, c));
      }
      for (double o : tr.output.plane(0, c)) {
        EXPECT_GE(o, lo - 1e-12);
        EXPECT_LE(o, hi + 1e-12);
      }
    }
  }
}

TEST(Mhsa, PermutationEquivariance) {
  Rng rng(7);
  const std::size_t h = 2, w = 3, hw = h * w;
  for (int t = 0; t < 10; ++t) {
    const auto p = random_mhsa(rng, 2, 2);
    const auto x = random_normal(rng, {2, 4, h, w});
    std::vector<std::size_t> perm(hw);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = hw - 1; i > 0; --i) std::swap(perm[i], perm[static_cast<std::size_t>(rng.uniform_int(0, i))]);
    auto permute = [&](const Tensor4& in) {
      Tensor4 out(in.shape());
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t c = 0; c < 4; ++c)
          for (std::size_t i = 0; i < hw; ++i) out.plane(b, c)[i] = in.plane(b, c)[perm[i]];
      return out;
    };
    EXPECT_LT(max_abs_diff(mhsa_forward(permute(x), p), permute(mhsa_forward(x, p))), 1e-12);
  }
}

TEST(Mhsa, RegisterSteeringSuppressesToken) {
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    const auto p = random_mhsa(rng, 2, 2);
    const auto x = random_normal(rng, {1, 4, 3, 3});
    auto reg = build_registers(rng, 2, 9, 2, 0.3);
    const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, 8));
    const auto base = mhsa_forward_traced(x, p, &reg);
    for (auto& m : reg.qk)
      for (std::size_t i = 0; i < 9; ++i) m(i, j) += -1e6;
    const auto steered = mhsa_forward_traced(x, p, &reg);
    for (std::size_t hd = 0; hd < 2; ++hd) {
      const double before = attention_mass(base.attention[hd])[j];
      const double after = attention_mass(steered.attention[hd])[j];
      EXPECT_LT(after, before);
      EXPECT_LT(after, 1e-6 * before);
    }
  }
}

TEST(Mhsa, ShapeErrors) {
  Rng rng(9);
  const auto p = random_mhsa(rng, 2, 2);
  EXPECT_THROW(mhsa_forward(Tensor4({1, 3, 2, 2}), p), ShapeError);
  EXPECT_THROW(mhsa_forward(Tensor4({1, 4, 2, 2}), p, RegisterTokens::zeros(2, 9, 2)), ShapeError);
  EXPECT_THROW(mhsa_forward(Tensor4({1, 4, 2, 2}), p, RegisterTokens::zeros(1, 4, 2)), ShapeError);
}

TEST(Registers, ZeroSigmaAndDeterminism) {
  Rng a(10), b(10);
  const auto z = build_registers(a, 2, 4, 3, 0.0);
  for (const auto& m : z.qk)
    for (double v : m.data()) EXPECT_EQ(v, 0.0);
  Rng c(11), d(11);
  const auto r1 = build_registers(c, 2, 4, 3, 0.1), r2 = build_registers(d, 2, 4, 3, 0.1);
  EXPECT_EQ(r1.qk, r2.qk);
  EXPECT_EQ(r1.v, r2.v);
  EXPECT_EQ(r1.v.front().rows(), 3u);
  EXPECT_EQ(r1.v.front().cols(), 4u);
}

TEST(AttentionMass, Examples) {
  const Matrix uniform(4, 4, 0.25);
  for (double m : attention_mass(uniform)) EXPECT_DOUBLE_EQ(m, 1.0);
  for (double m : attention_mass(Matrix::identity(5))) EXPECT_EQ(m, 1.0);
  Matrix col(3, 3);
  for (std::size_t r = 0; r < 3; ++r) col(r, 1) = 1.0;
  EXPECT_EQ(attention_mass(col), (std::vector<double>{0.0, 3.0, 0.0}));
  EXPECT_THROW(attention_mass(Matrix(2, 2, 0.3)), ContractError);
}

// ---------------------------------------------------------------------------
// scSE

TEST(Scse, HalfGatesReturnInput) {
  Rng rng(12);
  const auto x = random_normal(rng, {2, 4, 3, 3});
  EXPECT_EQ(scse_recalibrate(x, ScseParams::zeros(4, 2)), x);
}

TEST(Scse, HandComputedTwoChannels) {
  // x = (a, b) at one pixel, reduction 2: mid = 1.
  const double a = 0.8, b = -1.5;
  const Tensor4 x({1, 2, 1, 1}, {a, b});
  auto p = ScseParams::zeros(2, 2);
  p.channel_reduce.weights(0, 0, 0, 0) = 1.0;
  p.channel_reduce.weights(0, 1, 0, 0) = 2.0;
  p.channel_reduce.bias[0] = 3.0;
  p.channel_expand.weights(0, 0, 0, 0) = 0.5;
  p.channel_expand.weights(1, 0, 0, 0) = -0.25;
  p.channel_expand.bias[1] = 0.1;
  // Spatial gate left at logistic(0) = 0.5.
  const double mid = std::max(0.0, a + 2.0 * b + 3.0);
  const double g0 = 1.0 / (1.0 + std::exp(-(0.5 * mid)));
  const double g1 = 1.0 / (1.0 + std::exp(-(-0.25 * mid + 0.1)));
  const auto out = scse_recalibrate(x, p);
  EXPECT_NEAR(out[0], 0.5 * a + g0 * a, 1e-15);
  EXPECT_NEAR(out[1], 0.5 * b + g1 * b, 1e-15);
}

TEST(Scse, GatesStrictlyInsideUnitInterval) {
  Rng rng(13);
  for (int t = 0; t < 20; ++t) {
    ScseParams p{ConvKernel{random_normal(rng, {2, 4, 1, 1}, 3.0), {0.5, -0.5}, 1, 0},
                 ConvKernel{random_normal(rng, {4, 2, 1, 1}, 3.0), {0.0, 1.0, -1.0, 2.0}, 1, 0},
                 ConvKernel{random_normal(rng, {1, 4, 1, 1}, 3.0), {0.2}, 1, 0}};
    const auto x = random_normal(rng, {2, 4, 3, 3});
    const auto tr = scse_forward_traced(x, p);
    for (double g : tr.channel_gate.data()) {
      EXPECT_GT(g, 0.0);
      EXPECT_LT(g, 1.0);
    }
    for (double g : tr.spatial_gate.data()) {
      EXPECT_GT(g, 0.0);
      EXPECT_LT(g, 1.0);
    }
    EXPECT_TRUE(tr.output.all_finite());
  }
}

TEST(Scse, Errors) {
  EXPECT_THROW(ScseParams::zeros(6, 4), ContractError);
  EXPECT_THROW(scse_recalibrate(Tensor4({1, 3, 2, 2}), ScseParams::zeros(4, 2)), ShapeError);
}
