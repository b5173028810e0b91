// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "bamforge/autodiff.hpp"
#include "bamforge/errors.hpp"
#include "bamforge/kernels.hpp"
#include "bamforge/numerics.hpp"
#include "test_util.hpp"

namespace bamforge {
namespace {

using testing::random_tensor;

TEST(Softmax, Symmetric) {
  const auto p = softmax(std::vector<double>{0.0, 0.0});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Softmax, LogRatio) {
  const auto p = softmax(std::vector<double>{std::log(1.0), std::log(3.0)});
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(Softmax, LargeLogitsMatchShifted) {
  const auto p = softmax(std::vector<double>{1000.0, 1000.0, 999.0});
  // By hand from [0, 0, -1]: e^0 / (2 + e^-1).
  const double denom = 2.0 + std::exp(-1.0);
  EXPECT_NEAR(p[0], 1.0 / denom, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / denom, 1e-15);
  EXPECT_NEAR(p[2], std::exp(-1.0) / denom, 1e-15);
}

TEST(Softmax, SumsToOneUpTo1e4) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(17);
    for (double& x : v) x = rng.uniform() * 2e4 - 1e4;
    const auto p = softmax(v);
    double s = 0.0;
    for (double x : p) {
      EXPECT_GE(x, 0.0);
      s += x;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, RejectsNonFinite) {
  EXPECT_THROW(softmax(std::vector<double>{0.0, NAN}), NumericError);
  EXPECT_THROW(softmax(std::vector<double>{}), Error);
}

TEST(ScaleNorm, UnitVector) {
  const auto y = scale_norm(std::vector<double>{1, 1, 1, 1}, std::vector<double>{1, 1, 1, 1});
  for (double v : y) EXPECT_NEAR(v, 1.0, 1e-6);
}

TEST(ScaleNorm, RmsTwo) {
  const auto y = scale_norm(std::vector<double>{2, 2}, std::vector<double>{1, 1});
  EXPECT_NEAR(y[0], 1.0, 1e-6);
  EXPECT_NEAR(y[1], 1.0, 1e-6);
}

TEST(ScaleNorm, MatchesScalarLoop) {
  Rng rng(3);
  const Tensor x = random_tensor({13}, rng), g = random_tensor({13}, rng);
  const auto y = scale_norm(x.data(), g.data());
  double ms = 0.0;
  for (std::size_t i = 0; i < 13; ++i) ms += x[i] * x[i];
  ms /= 13.0;
  const double inv = 1.0 / std::sqrt(ms + 1e-6);
  for (std::size_t i = 0; i < 13; ++i) EXPECT_NEAR(y[i], x[i] * inv * g[i], 1e-12);
}

TEST(ScaleNorm, ZeroVectorIsFinite) {
  const auto y = scale_norm(std::vector<double>{0, 0, 0}, std::vector<double>{1, 1, 1});
  for (double v : y) EXPECT_EQ(v, 0.0);
}

TEST(Swiglu, SiluAtZero) { EXPECT_EQ(swiglu(std::vector<double>{0.0}, std::vector<double>{5.0})[0], 0.0); }

TEST(Swiglu, SiluAtOne) {
  const double expected = 1.0 / (1.0 + std::exp(-1.0));
  EXPECT_NEAR(swiglu(std::vector<double>{1.0}, std::vector<double>{1.0})[0], expected, 1e-15);
  EXPECT_NEAR(expected, 0.731058, 1e-6);
}

TEST(Swiglu, LengthMismatch) {
  EXPECT_THROW(swiglu(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0}), ShapeError);
}

TEST(Swiglu, GradientMatchesFiniteDifference) {
  Rng rng(5);
  const std::vector<Tensor> in{random_tensor({1, 6}, rng), random_tensor({1, 6}, rng)};
  const double err = grad_check(
      [](ad::Tape&, std::span<const ad::Var> v) {
        std::vector<ad::Var> cells{ad::swiglu(v[0], v[1])};
        return ad::lse_squared_mean(cells[0]);
      },
      in);
  EXPECT_LT(err, 1e-6);
}

TEST(Rope, PositionZeroIsIdentity) {
  const std::vector<double> x{0.3, -1.2, 2.0, 0.5};
  EXPECT_EQ(rope_rotate(x, 0), x);
}

TEST(Rope, PreservesNorm) {
  Rng rng(9);
  for (std::size_t pos : {1u, 7u, 100u, 5000u}) {
    const Tensor x = random_tensor({16}, rng);
    const auto y = rope_rotate(x.data(), pos);
    double nx = 0.0, ny = 0.0;
    for (std::size_t i = 0; i < 16; ++i) {
      nx += x[i] * x[i];
      ny += y[i] * y[i];
    }
    EXPECT_NEAR(std::sqrt(nx), std::sqrt(ny), 1e-10);
  }
}

TEST(Rope, TwoByTwoRotation) {
  const auto y = rope_rotate(std::vector<double>{1.0, 0.0}, 1);
  EXPECT_NEAR(y[0], std::cos(1.0), 1e-15);
  EXPECT_NEAR(y[1], std::sin(1.0), 1e-15);
}

TEST(Rope, OddDimensionRejected) { EXPECT_THROW(rope_rotate(std::vector<double>{1, 2, 3}, 1), ConfigError); }

TEST(CrossEntropy, UniformIsLogV) {
  const std::vector<double> logits(50, 0.7);
  EXPECT_NEAR(cross_entropy_nll(logits, 3).loss, std::log(50.0), 1e-12);
}

TEST(CrossEntropy, DominantTargetNearZero) {
  std::vector<double> logits(10, 0.0);
  logits[4] = 30.0;
  EXPECT_LT(cross_entropy_nll(logits, 4).loss, 1e-11);
}

TEST(CrossEntropy, OutOfRangeTarget) {
  EXPECT_THROW(cross_entropy_nll(std::vector<double>{0.0, 1.0}, 2), IndexError);
  EXPECT_THROW(cross_entropy_nll(std::vector<double>{0.0, 1.0}, -1), IndexError);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
  Rng rng(4);
  const Tensor logits = random_tensor({7}, rng);
  const auto r = cross_entropy_nll(logits.data(), 2);
  const auto p = softmax(logits.data());
  for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(r.grad[i], p[i] - (i == 2 ? 1.0 : 0.0), 1e-15);

  // Central differences on the scalar loss.
  for (std::size_t i = 0; i < 7; ++i) {
    Tensor up = logits, down = logits;
    up[i] += 1e-5;
    down[i] -= 1e-5;
    const double fd = (cross_entropy_nll(up.data(), 2).loss - cross_entropy_nll(down.data(), 2).loss) / 2e-5;
    EXPECT_LT(std::abs(fd - r.grad[i]) / std::max(1.0, std::abs(r.grad[i])), 1e-6);
  }
}

TEST(GradCheck, Square) {
  const std::vector<Tensor> in{Tensor::vector({3.0})};
  ad::Tape tape;
  ad::Var x = tape.leaf(in[0]);
  ad::Var y = ad::mul(x, x);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  const double err = grad_check([](ad::Tape&, std::span<const ad::Var> v) { return ad::mul(v[0], v[0]); }, in);
  EXPECT_LT(err, 1e-8);
}

TEST(GradCheck, EpsOutsideRangeRejected) {
  const std::vector<Tensor> in{Tensor::vector({1.0})};
  auto f = [](ad::Tape&, std::span<const ad::Var> v) { return ad::mul(v[0], v[0]); };
  EXPECT_THROW(grad_check(f, in, 1e-9), ConfigError);
  EXPECT_THROW(grad_check(f, in, 1e-2), ConfigError);
}

// Every tape op, reduced to a scalar through a fixed random projection.
ad::Var project(ad::Tape& tape, ad::Var y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w(y.value().shape());
  for (double& v : w.data()) v = rng.normal(0.0, 1.0);
  ad::Var p = ad::mul_const(y, w);
  Tensor ones({y.value().cols(), 1}, 1.0);
  Tensor row_ones({1, y.value().rows()}, 1.0);
  return ad::matmul(ad::matmul(tape.constant(row_ones), p), tape.constant(ones));
}

class OpGradient : public ::testing::Test {
 protected:
  Rng rng{21};
  static constexpr double kTol = 1e-4;
};

TEST_F(OpGradient, Matmul) {
  const std::vector<Tensor> in{random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)};
  EXPECT_LT(grad_check([](ad::Tape& t, auto v) { return project(t, ad::matmul(v[0], v[1]), 1); }, in), kTol);
}

TEST_F(OpGradient, MatmulNt) {
  const std::vector<Tensor> in{random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)};
  EXPECT_LT(grad_check([](ad::Tape& t, auto v) { return project(t, ad::matmul_nt(v[0], v[1]), 2); }, in), kTol);
}

TEST_F(OpGradient, AddScaleMul) {
  const std::vector<Tensor> in{random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)};
  EXPECT_LT(grad_check(
                [](ad::Tape& t, auto v) {
                  return project(t, ad::mul(ad::add(v[0], ad::scale(v[1], -1.5)), v[1]), 3);
                },
                in),
            kTol);
}

TEST_F(OpGradient, ScaleNorm) {
  const std::vector<Tensor> in{random_tensor({3, 6}, rng), random_tensor({6}, rng)};
  EXPECT_LT(grad_check([](ad::Tape& t, auto v) { return project(t, ad::scale_norm(v[0], v[1]), 4); }, in), kTol);
}

TEST_F(OpGradient, Rope) {
  const std::vector<Tensor> in{random_tensor({6, 8}, rng)};
  EXPECT_LT(grad_check([](ad::Tape& t, auto v) { return project(t, ad::rope(v[0], 2, 3), 5); }, in), kTol);
}

TEST_F(OpGradient, Attention) {
  const std::vector<Tensor> in{random_tensor({6, 4}, rng), random_tensor({6, 4}, rng), random_tensor({6, 4}, rng)};
  EXPECT_LT(grad_check([](ad::Tape& t, auto v) { return project(t, ad::attention(v[0], v[1], v[2], 2, 3), 6); }, in),
            kTol);
}

TEST_F(OpGradient, SoftmaxAndGateRows) {
  const std::vector<Tensor> in{random_tensor({4, 3}, rng), random_tensor({4, 5}, rng)};
  EXPECT_LT(grad_check(
                [](ad::Tape& t, auto v) {
                  ad::Var g = ad::softmax_rows(v[0]);
                  return project(t, ad::add(ad::gate_rows(v[1], g, 0), ad::gate_rows(v[1], g, 2)), 7);
                },
                in),
            kTol);
}

TEST_F(OpGradient, GatherScatter) {
  const std::vector<Tensor> in{random_tensor({5, 3}, rng)};
  EXPECT_LT(grad_check(
                [](ad::Tape& t, auto v) {
                  const std::vector<std::size_t> rows{4, 1, 3};
                  return project(t, ad::scatter_rows(ad::gather_rows(v[0], rows), rows, 5), 8);
                },
                in),
            kTol);
}

TEST_F(OpGradient, EmbeddingAndCrossEntropy) {
  const std::vector<Tensor> in{random_tensor({6, 4}, rng), random_tensor({4, 6}, rng)};
  EXPECT_LT(grad_check(
                [](ad::Tape&, auto v) {
                  const std::vector<std::int32_t> tokens{1, 5, 5, 0};
                  const std::vector<std::int32_t> targets{2, 2, 3, 5};
                  return ad::cross_entropy(ad::matmul(ad::embedding(v[0], tokens), v[1]), targets);
                },
                in),
            kTol);
}

TEST_F(OpGradient, RouterAuxLosses) {
  const std::vector<Tensor> in{random_tensor({5, 4}, rng)};
  EXPECT_LT(grad_check(
                [](ad::Tape&, auto v) {
                  const std::vector<double> f{0.4, 0.2, 0.2, 0.2};
                  const std::vector<ad::Var> terms{ad::lse_squared_mean(v[0]),
                                                   ad::load_balance(ad::softmax_rows(v[0]), f)};
                  return ad::sum(terms);
                },
                in),
            kTol);
}

TEST(Tape, NonFiniteOutputThrows) {
  ad::Tape tape;
  ad::Var x = tape.leaf(Tensor::vector({1e300}));
  EXPECT_THROW(ad::mul(x, x), NumericError);
}

TEST(Tape, SinglePrecisionRoundsValues) {
  ad::Tape tape(ad::Precision::f32);
  ad::Var x = tape.leaf(Tensor::vector({1.0 / 3.0}));
  ad::Var y = ad::scale(x, 1.0);
  EXPECT_EQ(y.value()[0], static_cast<double>(static_cast<float>(1.0 / 3.0)));
}

TEST(Tape, BackwardIsDeterministic) {
  Rng rng(2);
  const Tensor a = random_tensor({4, 4}, rng), b = random_tensor({4, 4}, rng);
  auto run = [&] {
    ad::Tape tape;
    ad::Var x = tape.leaf(a), y = tape.leaf(b);
    ad::Var z = project(tape, ad::matmul(ad::add(x, y), ad::mul(x, y)), 9);
    tape.backward(z);
    return std::make_pair(x.grad(), y.grad());
  };
  EXPECT_EQ(run(), run());
}

TEST(Kernels, MatmulIdentity) {
  Rng rng(1);
  const Tensor a = random_tensor({5, 5}, rng);
  Tensor eye({5, 5});
  for (std::size_t i = 0; i < 5; ++i) eye.at(i, i) = 1.0;
  Tensor c({5, 5});
  kernels::matmul(a.ptr(), eye.ptr(), c.ptr(), 5, 5, 5, false);
  EXPECT_EQ(c.shape(), a.shape());
  EXPECT_LT(max_abs_diff(c, a), 1e-12);
}

TEST(Kernels, ParallelMatchesSerial) {
  Rng rng(2);
  const std::size_t m = 70, k = 130, n = 90;  // above the parallel threshold
  const Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng), bt = random_tensor({n, k}, rng);
  const Tensor at = random_tensor({m, n}, rng);
  Tensor c1({m, n}), c2({m, n});
  kernels::matmul(a.ptr(), b.ptr(), c1.ptr(), m, k, n, false);
  kernels::serial::matmul(a.ptr(), b.ptr(), c2.ptr(), m, k, n, false);
  EXPECT_LT(max_abs_diff(c1, c2), 1e-10);
  kernels::matmul_nt(a.ptr(), bt.ptr(), c1.ptr(), m, k, n, false);
  kernels::serial::matmul_nt(a.ptr(), bt.ptr(), c2.ptr(), m, k, n, false);
  EXPECT_LT(max_abs_diff(c1, c2), 1e-10);
  Tensor d1({k, n}), d2({k, n});
  kernels::matmul_tn(a.ptr(), at.ptr(), d1.ptr(), m, k, n, false);
  kernels::serial::matmul_tn(a.ptr(), at.ptr(), d2.ptr(), m, k, n, false);
  EXPECT_LT(max_abs_diff(d1, d2), 1e-10);
}

TEST(Kernels, AttentionParallelMatchesSerial) {
  Rng rng(3);
  const kernels::AttentionDims dims{3, 10, 2, 4};
  const std::size_t n = dims.rows() * dims.width();
  const Tensor q = random_tensor({n}, rng), k = random_tensor({n}, rng), v = random_tensor({n}, rng);
  const Tensor dout = random_tensor({n}, rng);
  Tensor o1({n}), o2({n}), p1({dims.prob_size()}), p2({dims.prob_size()});
  kernels::attention_forward(q.ptr(), k.ptr(), v.ptr(), o1.ptr(), p1.ptr(), dims);
  kernels::serial::attention_forward(q.ptr(), k.ptr(), v.ptr(), o2.ptr(), p2.ptr(), dims);
  EXPECT_LT(max_abs_diff(o1, o2), 1e-12);
  EXPECT_LT(max_abs_diff(p1, p2), 1e-12);
  Tensor g1[3] = {Tensor({n}), Tensor({n}), Tensor({n})}, g2[3] = {Tensor({n}), Tensor({n}), Tensor({n})};
  kernels::attention_backward(q.ptr(), k.ptr(), v.ptr(), p1.ptr(), dout.ptr(), g1[0].ptr(), g1[1].ptr(), g1[2].ptr(),
                              dims);
  kernels::serial::attention_backward(q.ptr(), k.ptr(), v.ptr(), p2.ptr(), dout.ptr(), g2[0].ptr(), g2[1].ptr(),
                                      g2[2].ptr(), dims);
  for (int i = 0; i < 3; ++i) EXPECT_LT(max_abs_diff(g1[i], g2[i]), 1e-12);
}

}  // namespace
}  // namespace bamforge
