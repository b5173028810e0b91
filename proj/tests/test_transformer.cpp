// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "bamforge/errors.hpp"
#include "bamforge/layers.hpp"
#include "bamforge/model.hpp"
#include "bamforge/train.hpp"
#include "test_util.hpp"

namespace bamforge {
namespace {

using testing::random_batch;
using testing::random_tensor;
using testing::random_tokens;
using testing::tiny_config;

// Plain-loop reference implementations.

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  return c;
}

void naive_rope(Tensor& x, std::size_t n_heads) {
  const std::size_t hd = x.cols() / n_heads;
  for (std::size_t t = 0; t < x.rows(); ++t)
    for (std::size_t h = 0; h < n_heads; ++h)
      for (std::size_t i = 0; i < hd / 2; ++i) {
        const double theta = static_cast<double>(t) * std::pow(10000.0, -2.0 * i / static_cast<double>(hd));
        double& a = x.at(t, h * hd + 2 * i);
        double& b = x.at(t, h * hd + 2 * i + 1);
        const double ra = a * std::cos(theta) - b * std::sin(theta);
        const double rb = a * std::sin(theta) + b * std::cos(theta);
        a = ra;
        b = rb;
      }
}

Tensor naive_mha(const Tensor& x, const AttentionWeights& w, std::size_t n_heads) {
  Tensor q = naive_matmul(x, w.q), k = naive_matmul(x, w.k);
  const Tensor v = naive_matmul(x, w.v);
  naive_rope(q, n_heads);
  naive_rope(k, n_heads);
  const std::size_t n = x.rows(), hd = x.cols() / n_heads;
  Tensor heads({n, x.cols()});
  for (std::size_t h = 0; h < n_heads; ++h)
    for (std::size_t t = 0; t < n; ++t) {
      std::vector<double> s(t + 1);
      double mx = -1e300;
      for (std::size_t j = 0; j <= t; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < hd; ++c) dot += q.at(t, h * hd + c) * k.at(j, h * hd + c);
        s[j] = dot / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (double& e : s) z += (e = std::exp(e - mx));
      for (std::size_t j = 0; j <= t; ++j)
        for (std::size_t c = 0; c < hd; ++c) heads.at(t, h * hd + c) += s[j] / z * v.at(j, h * hd + c);
    }
  return naive_matmul(heads, w.o);
}

Tensor naive_ffn(const Tensor& x, const FfnWeights& w) {
  Tensor g = naive_matmul(x, w.gate);
  const Tensor u = naive_matmul(x, w.up);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = g[i] / (1.0 + std::exp(-g[i])) * u[i];
  return naive_matmul(g, w.down);
}

Tensor naive_norm(const Tensor& x, const Tensor& gain) {
  Tensor y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double ms = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) ms += x.at(r, c) * x.at(r, c);
    const double inv = 1.0 / std::sqrt(ms / static_cast<double>(x.cols()) + 1e-6);
    for (std::size_t c = 0; c < x.cols(); ++c) y.at(r, c) = x.at(r, c) * inv * gain[c];
  }
  return y;
}

AttentionWeights random_attention(std::size_t d, Rng& rng, double std = 0.3) {
  return {random_tensor({d, d}, rng, std), random_tensor({d, d}, rng, std), random_tensor({d, d}, rng, std),
          random_tensor({d, d}, rng, std)};
}

FfnWeights random_ffn(std::size_t d, std::size_t hidden, Rng& rng, double std = 0.3) {
  return {random_tensor({d, hidden}, rng, std), random_tensor({d, hidden}, rng, std),
          random_tensor({hidden, d}, rng, std)};
}

TEST(Attention, MatchesLoopOracle) {
  Rng rng(1);
  const Tensor x = random_tensor({7, 8}, rng);
  const AttentionWeights w = random_attention(8, rng);
  EXPECT_LT(max_abs_diff(mha_forward(x, w, 2), naive_mha(x, w, 2)), 1e-12);
  EXPECT_LT(max_abs_diff(mha_forward(x, w, 4), naive_mha(x, w, 4)), 1e-12);
}

TEST(Attention, FirstPositionAttendsOnlyToItself) {
  Rng rng(2);
  const Tensor x = random_tensor({4, 8}, rng);
  AttentionWeights w = random_attention(8, rng);
  const Tensor y = mha_forward(x, w, 2);
  // Position 0 outputs x0 Wv Wo exactly.
  Tensor x0({1, 8});
  for (std::size_t c = 0; c < 8; ++c) x0.at(0, c) = x.at(0, c);
  const Tensor expect = naive_matmul(naive_matmul(x0, w.v), w.o);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(y.at(0, c), expect.at(0, c), 1e-12);
}

TEST(Attention, BadShapesRejected) {
  Rng rng(3);
  const Tensor x = random_tensor({4, 8}, rng);
  AttentionWeights w = random_attention(8, rng);
  w.k = random_tensor({8, 6}, rng);
  EXPECT_THROW(mha_forward(x, w, 2), ShapeError);
}

TEST(Ffn, MatchesLoopOracle) {
  Rng rng(4);
  const Tensor x = random_tensor({5, 8}, rng);
  const FfnWeights w = random_ffn(8, 12, rng);
  EXPECT_LT(max_abs_diff(ffn_forward(x, w), naive_ffn(x, w)), 1e-12);
}

TEST(Ffn, VectorInput) {
  Rng rng(5);
  const Tensor x = random_tensor({8}, rng);
  const FfnWeights w = random_ffn(8, 12, rng);
  const Tensor y = ffn_forward(x, w);
  ASSERT_EQ(y.shape(), (Shape{8}));
  const Tensor ref = naive_ffn(Tensor({1, 8}, std::vector<double>(x.data().begin(), x.data().end())), w);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(y[c], ref[c], 1e-12);
}

TEST(Ffn, ZeroDownIsZero) {
  Rng rng(6);
  FfnWeights w = random_ffn(8, 12, rng);
  w.down.fill(0.0);
  const Tensor y = ffn_forward(random_tensor({3, 8}, rng), w);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(ParallelBlock, MatchesLoopOracle) {
  Rng rng(7);
  const Tensor x = random_tensor({6, 8}, rng);
  const Tensor gain = random_tensor({8}, rng);
  const AttentionWeights a = random_attention(8, rng);
  const FfnWeights f = random_ffn(8, 16, rng);
  const Tensor h = naive_norm(x, gain);
  const Tensor mha = naive_mha(h, a, 2), ffn = naive_ffn(h, f);
  Tensor expect = x;
  for (std::size_t i = 0; i < expect.size(); ++i) expect[i] += mha[i] + ffn[i];
  EXPECT_LT(max_abs_diff(parallel_block_forward(x, gain, a, f, 2), expect), 1e-12);
}

TEST(ParallelBlock, ZeroOutputWeightsIsIdentity) {
  Rng rng(8);
  const Tensor x = random_tensor({6, 8}, rng);
  AttentionWeights a = random_attention(8, rng);
  FfnWeights f = random_ffn(8, 16, rng);
  a.o.fill(0.0);
  f.down.fill(0.0);
  EXPECT_EQ(parallel_block_forward(x, Tensor({8}, 1.0), a, f, 2), x);
}

TEST(Model, SmallScaleDenseElementCount) {
  std::size_t total = 0;
  for (const auto& [name, shape] : parameter_shapes(small_scale_config(Arch::dense, 1, 1))) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    total += n;
  }
  EXPECT_EQ(total, 587'209'728u);
}

TEST(Model, InitIsDeterministicAndValid) {
  const ModelConfig c = tiny_config();
  const Checkpoint a = init_model(c, 9), b = init_model(c, 9), other = init_model(c, 10);
  EXPECT_NO_THROW(validate_checkpoint(a));
  EXPECT_EQ(params_digest(a.params), params_digest(b.params));
  EXPECT_NE(params_digest(a.params), params_digest(other.params));
  EXPECT_EQ(a.meta.phase, Phase::seed);
  for (double g : a.param(pname::layer_norm(0)).data()) EXPECT_EQ(g, 1.0);
}

TEST(Model, InitStandardDeviations) {
  ModelConfig c = tiny_config(64, 2);
  c.d_ff = 256;
  const Checkpoint ck = init_model(c, 3);
  auto stddev = [](const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v * v;
    return std::sqrt(s / static_cast<double>(t.size()));
  };
  EXPECT_NEAR(stddev(ck.param(pname::attn(0, "attn_q"))), 0.02, 0.002);
  EXPECT_NEAR(stddev(ck.param(pname::attn(0, "attn_o"))), 0.02 / std::sqrt(4.0), 0.001);
  EXPECT_NEAR(stddev(ck.param(pname::ffn(1, "ffn_down"))), 0.02 / std::sqrt(4.0), 0.001);
}

TEST(Model, UntrainedLossIsLogVocab) {
  ModelConfig c = tiny_config(32, 2);
  c.vocab = 256;
  c.n_ctx = 32;
  const Checkpoint ck = init_model(c, 4);
  Rng rng(5);
  const auto tokens = random_tokens(33, 256, rng);
  EXPECT_NEAR(dense_forward_loss(ck, tokens).nll, std::log(256.0), 0.05 * std::log(256.0));
}

TEST(Model, ForwardLossLengthChecked) {
  const Checkpoint ck = init_model(tiny_config(), 1);
  EXPECT_THROW(dense_forward_loss(ck, std::vector<std::int32_t>{1}), Error);
  EXPECT_THROW(dense_forward_loss(ck, std::vector<std::int32_t>(10, 1)), Error);
  EXPECT_NO_THROW(dense_forward_loss(ck, std::vector<std::int32_t>(9, 1)));
}

TEST(Model, OutOfVocabTokenRejected) {
  const Checkpoint ck = init_model(tiny_config(), 1);
  EXPECT_THROW(dense_forward_loss(ck, std::vector<std::int32_t>{1, 2, 32}), IndexError);
}

TEST(Model, Causality) {
  const Checkpoint ck = init_model(tiny_config(), 2);
  Rng rng(6);
  auto tokens = random_tokens(8, 32, rng);
  const Tensor before = forward_logits(ck, tokens, 8);
  tokens[5] = (tokens[5] + 1) % 32;
  const Tensor after = forward_logits(ck, tokens, 8);
  for (std::size_t t = 0; t < 8; ++t) {
    double diff = 0.0;
    for (std::size_t c = 0; c < 32; ++c) diff = std::max(diff, std::abs(before.at(t, c) - after.at(t, c)));
    if (t < 5) {
      EXPECT_EQ(diff, 0.0) << "position " << t;
    } else {
      EXPECT_GT(diff, 0.0) << "position " << t;
    }
  }
}

TEST(Model, PackedSequencesAreIndependent) {
  const Checkpoint ck = init_model(tiny_config(), 3);
  Rng rng(7);
  const auto a = random_tokens(8, 32, rng), b = random_tokens(8, 32, rng);
  std::vector<std::int32_t> both(a);
  both.insert(both.end(), b.begin(), b.end());
  const Tensor la = forward_logits(ck, a, 8), lb = forward_logits(ck, b, 8), lab = forward_logits(ck, both, 8);
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t c = 0; c < 32; ++c) {
      EXPECT_NEAR(lab.at(t, c), la.at(t, c), 1e-12);
      EXPECT_NEAR(lab.at(8 + t, c), lb.at(t, c), 1e-12);
    }
}

TEST(Model, FullGradientCheckTwoLayers) {
  const Checkpoint ck = init_model(tiny_config(16, 2), 11);
  Rng rng(12);
  const Batch batch = random_batch(2, 6, 32, rng);
  const auto r = testing::model_grad_error(ck, batch, kDefaultAlpha, kDefaultBeta);
  EXPECT_GT(r.checked, 3000u);
  EXPECT_LT(r.worst, 1e-4) << r.param;
}

TEST(Model, UntiedEmbeddingsGradientCheck) {
  ModelConfig c = tiny_config(8, 1);
  c.tie_embeddings = false;
  const Checkpoint ck = init_model(c, 13);
  EXPECT_TRUE(ck.params.count(pname::kEmbeddingOut));
  Rng rng(14);
  const auto r = testing::model_grad_error(ck, random_batch(2, 5, 32, rng), 0.0, 0.0);
  EXPECT_LT(r.worst, 1e-4) << r.param;
}

TEST(Model, OverfitsFixedBatch) {
  Checkpoint ck = init_model(tiny_config(16, 2), 15);
  Rng rng(16);
  const Batch batch = random_batch(2, 8, 32, rng);
  AdamW opt(AdamWConfig{0.9, 0.95, 1e-8, 0.0, 1.0});
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 300; ++step) {
    ad::Tape tape;
    ModelGraph graph(tape, ck, true);
    const ForwardResult r = graph.forward(batch, 0.0, 0.0);
    tape.backward(r.objective);
    ParamStore grads = graph.gradients();
    if (step == 0) first = r.loss.nll;
    last = r.loss.nll;
    opt.step(ck.params, grads, 1e-2);
  }
  EXPECT_NEAR(first, std::log(32.0), 0.05);
  EXPECT_LT(last, 0.05);
}

}  // namespace
}  // namespace bamforge
