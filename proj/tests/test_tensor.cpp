#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "sarpf/gradcheck.hpp"
#include "sarpf/rng.hpp"
#include "sarpf/tensor.hpp"

using namespace sarpf;

namespace {

Matrix triple_loop(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

}  // namespace

TEST(Elementwise, AddZerosIsZeros) {
  const auto z = Tensor4::zeros({1, 2, 2, 2});
  EXPECT_EQ(add(z, z), z);
}

TEST(Elementwise, GateOnesIsIdentity) {
  Rng rng(1);
  const auto x = random_normal(rng, {2, 3, 4, 5});
  EXPECT_EQ(mul(x, Tensor4::ones({2, 3, 1, 1})), x);
  EXPECT_EQ(add(x, Tensor4::zeros({2, 3, 1, 1})), x);
}

TEST(Elementwise, ScalarGate) {
  const Tensor4 x({1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor4 g({1, 1, 1, 1}, {2});
  const Tensor4 out = mul(x, g);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(out[i], 2.0 * x[i]);
}

TEST(Elementwise, RejectsOtherBroadcasts) {
  EXPECT_THROW(add(Tensor4({1, 2, 2, 2}), Tensor4({1, 1, 2, 2})), ShapeError);
  EXPECT_THROW(mul(Tensor4({1, 2, 2, 2}), Tensor4({2, 2, 1, 1})), ShapeError);
  EXPECT_THROW(add(Tensor4({1, 2, 1, 1}), Tensor4({1, 2, 2, 2})), ShapeError);
}

TEST(Matmul, IdentityLeavesMatrix) {
  Rng rng(2);
  const Matrix m = random_matrix(rng, 3, 3);
  EXPECT_EQ(matmul(Matrix::identity(3), m), m);
}

TEST(Matmul, SmallProduct) {
  const Matrix a(2, 2, {1, 2, 3, 4});
  const Matrix b(2, 1, {5, 6});
  EXPECT_EQ(matmul(a, b), triple_loop(a, b));
  EXPECT_EQ(matmul(a, b)(1, 0), 39.0);
}

TEST(Matmul, OnesDot) {
  for (std::size_t k : {1u, 4u, 9u}) {
    const Matrix r = matmul(Matrix(1, k, 1.0), Matrix(k, 1, 1.0));
    EXPECT_EQ(r(0, 0), static_cast<double>(k));
  }
}

TEST(Matmul, RandomAgainstTripleLoop) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto m = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const auto k = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const Matrix a = random_matrix(rng, m, k), b = random_matrix(rng, k, n);
    EXPECT_LT(max_abs_diff(matmul(a, b).data(), triple_loop(a, b).data()), 1e-12);
  }
}

TEST(Matmul, InnerMismatch) { EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError); }

TEST(Softmax, EqualLogitsUniform) {
  const Matrix s = softmax_rows(Matrix(1, 3, 4.2));
  for (double v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LnTwo) {
  const Matrix s = softmax_rows(Matrix(1, 2, {0.0, std::log(2.0)}));
  const double z = std::exp(0.0) + std::exp(std::log(2.0));
  EXPECT_NEAR(s(0, 0), 1.0 / z, 1e-15);
  EXPECT_NEAR(s(0, 1), 2.0 / z, 1e-15);
}

TEST(Softmax, RowsSumToOneOverManySeeds) {
  for (std::uint64_t seed = 0; seed < 120; ++seed) {
    Rng rng(seed);
    const auto r = static_cast<std::size_t>(rng.uniform_int(1, 8));
    const auto c = static_cast<std::size_t>(rng.uniform_int(1, 8));
    const double scale = rng.uniform(0.1, 200.0);
    const Matrix s = softmax_rows(random_matrix(rng, r, c, scale));
    for (std::size_t i = 0; i < r; ++i) {
      double total = 0;
      for (double v : s.row(i)) {
        EXPECT_GE(v, 0.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-12) << "seed " << seed;
    }
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  const Matrix s = softmax_rows(Matrix(1, 3, {1e300, 1e300, -1e300}));
  EXPECT_NEAR(s(0, 0), 0.5, 1e-15);
  EXPECT_EQ(s(0, 2), 0.0);
}

TEST(Gap, ConstantPlane) {
  const Tensor4 g = global_avg_pool(Tensor4::full({2, 3, 4, 4}, -1.25));
  for (double v : g.data()) EXPECT_EQ(v, -1.25);
  EXPECT_EQ(g.shape(), (Shape4{2, 3, 1, 1}));
}

TEST(Gap, KnownPlane) {
  const Tensor4 x({1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(global_avg_pool(x)[0], (1.0 + 2.0 + 3.0 + 4.0) / 4.0);
}

TEST(Gap, Zeros) { EXPECT_EQ(global_avg_pool(Tensor4({1, 2, 3, 3})), Tensor4({1, 2, 1, 1})); }

TEST(Concat, SinglePartIdentity) {
  Rng rng(4);
  const std::vector<Tensor4> parts{random_normal(rng, {1, 2, 3, 3})};
  EXPECT_EQ(concat_channels(parts), parts[0]);
}

TEST(Concat, ThreeBranches) {
  const std::vector<Tensor4> parts(3, Tensor4({1, 2, 4, 4}));
  EXPECT_EQ(concat_channels(parts).shape(), (Shape4{1, 6, 4, 4}));
}

TEST(Concat, SliceRoundTrip) {
  Rng rng(5);
  const std::vector<Tensor4> parts{random_normal(rng, {2, 1, 3, 2}), random_normal(rng, {2, 3, 3, 2}),
                                   random_normal(rng, {2, 2, 3, 2})};
  const Tensor4 cat = concat_channels(parts);
  EXPECT_EQ(slice_channels(cat, 0, 1), parts[0]);
  EXPECT_EQ(slice_channels(cat, 1, 3), parts[1]);
  EXPECT_EQ(slice_channels(cat, 4, 2), parts[2]);
}

TEST(Concat, MismatchedSpatial) {
  const std::vector<Tensor4> parts{Tensor4({1, 1, 2, 2}), Tensor4({1, 1, 2, 3})};
  EXPECT_THROW(concat_channels(parts), ShapeError);
}

TEST(Determinism, RepeatedOpsBitIdentical) {
  Rng a(9), b(9);
  const Matrix x = random_matrix(a, 4, 5), y = random_matrix(b, 4, 5);
  EXPECT_EQ(softmax_rows(x), softmax_rows(y));
  EXPECT_EQ(matmul(x, y.transposed()), matmul(y, x.transposed()).transposed());
}

// ---------------------------------------------------------------------------
// grad_check

TEST(GradCheck, SumOfSquares) {
  Rng rng(10);
  DifferentiableFn f;
  f.value = [](std::span<const Tensor4> p) { return dot(p[0], p[0]); };
  f.gradient = [](std::span<const Tensor4> p) {
    Tensor4 g = p[0];
    for (double& v : g.data()) v *= 2.0;
    return std::vector<Tensor4>{g};
  };
  EXPECT_LT(grad_check(f, {random_normal(rng, {1, 2, 3, 3})}, 1e-5), 1e-6);
}

TEST(GradCheck, ConstantFunction) {
  DifferentiableFn f;
  f.value = [](std::span<const Tensor4>) { return 3.0; };
  f.gradient = [](std::span<const Tensor4> p) { return std::vector<Tensor4>{Tensor4(p[0].shape())}; };
  EXPECT_EQ(grad_check(f, {Tensor4::ones({1, 1, 2, 2})}, 1e-6), 0.0);
}

TEST(GradCheck, SoftmaxRowSumHasZeroGradient) {
  Rng rng(11);
  DifferentiableFn f;
  f.value = [](std::span<const Tensor4> p) { return sum(as_tensor(softmax_rows(as_matrix(p[0])))); };
  f.gradient = [](std::span<const Tensor4> p) {
    const Matrix y = softmax_rows(as_matrix(p[0]));
    return std::vector<Tensor4>{as_tensor(softmax_rows_backward(y, Matrix(y.rows(), y.cols(), 1.0)))};
  };
  const auto params = std::vector<Tensor4>{random_normal(rng, {1, 1, 3, 4})};
  const auto g = f.gradient(params);
  for (double v : g[0].data()) EXPECT_NEAR(v, 0.0, 1e-15);
  EXPECT_LT(grad_check(f, params, 1e-6), 1e-8);
}

TEST(GradCheck, DetectsWrongGradient) {
  DifferentiableFn f;
  f.value = [](std::span<const Tensor4> p) { return dot(p[0], p[0]); };
  f.gradient = [](std::span<const Tensor4> p) { return std::vector<Tensor4>{p[0]}; };  // missing factor 2
  EXPECT_GT(grad_check(f, {Tensor4::full({1, 1, 1, 3}, 0.7)}, 1e-6), 0.4);
}

TEST(GradCheck, NonFiniteObjective) {
  DifferentiableFn f;
  f.value = [](std::span<const Tensor4> p) { return std::log(p[0][0]); };
  f.gradient = [](std::span<const Tensor4> p) { return std::vector<Tensor4>{p[0]}; };
  EXPECT_THROW(grad_check(f, {Tensor4({1, 1, 1, 1}, -1.0)}, 1e-6), EvaluationError);
}

TEST(GradCheck, RejectsNonPositiveEpsilon) {
  DifferentiableFn f;
  f.value = [](std::span<const Tensor4>) { return 0.0; };
  f.gradient = [](std::span<const Tensor4> p) { return std::vector<Tensor4>{p[0]}; };
  EXPECT_THROW(grad_check(f, {Tensor4({1, 1, 1, 1})}, 0.0), ContractError);
}
