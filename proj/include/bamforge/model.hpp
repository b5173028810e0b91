// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

// Parallel-attention transformer over a parameter store, for every arch:
// dense, BTX (FFN experts) and BAM (FFN experts + attention experts).
//
// Parameter names are "<scope>.<role>" where role is one of embedding_in,
// embedding_out, norm, attn_q, attn_k, attn_v, attn_o, ffn_gate, ffn_up,
// ffn_down, router_ffn, router_attn. Expert weights carry an indexed scope,
// e.g. "layer1.ffn_expert2.ffn_up" or "layer0.attn_expert3.attn_q".

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bamforge/autodiff.hpp"
#include "bamforge/checkpoint.hpp"
#include "bamforge/config.hpp"
#include "bamforge/routing.hpp"

namespace bamforge {

namespace pname {

inline const std::string kEmbeddingIn = "embedding_in";
inline const std::string kEmbeddingOut = "embedding_out";
inline const std::string kFinalNorm = "final.norm";

std::string layer_norm(std::size_t layer);
std::string attn(std::size_t layer, const std::string& role);
std::string attn_expert(std::size_t layer, std::size_t expert, const std::string& role);
std::string ffn(std::size_t layer, const std::string& role);
std::string ffn_expert(std::size_t layer, std::size_t expert, const std::string& role);
std::string router_ffn(std::size_t layer);
std::string router_attn(std::size_t layer);

std::string role_of(const std::string& name);

}  // namespace pname

inline constexpr double kInitStd = 0.02;

std::map<std::string, Shape> parameter_shapes(const ModelConfig& config);

// Fresh weights: normal(0, 0.02); attn_o / ffn_down scaled by 1/sqrt(2 n_layers);
// norm gains at 1. Deterministic in `seed`.
Checkpoint init_model(const ModelConfig& config, std::uint64_t seed);

// n_seq sequences of seq_len + 1 tokens each (inputs and shifted targets).
struct Batch {
  std::vector<std::int32_t> tokens;
  std::size_t n_seq = 0;
  std::size_t seq_len = 0;

  std::vector<std::int32_t> inputs() const;
  std::vector<std::int32_t> targets() const;
  std::size_t predicted_tokens() const { return n_seq * seq_len; }
};

struct RouterStat {
  std::size_t layer = 0;
  std::string kind;           // "ffn" or "attn"
  std::vector<double> load;   // primary-expert share per expert
  double gate_entropy = 0.0;  // mean over tokens
};

struct ForwardResult {
  ad::Var logits;
  ad::Var objective;  // nll + alpha * sum(lb) + beta * sum(z)
  LossBreakdown loss;
  std::vector<RouterStat> router_stats;
};

// Binds a checkpoint's parameters to leaves of a tape.
class ModelGraph {
 public:
  ModelGraph(ad::Tape& tape, const Checkpoint& ckpt, bool requires_grad);

  // Logits [n_seq * seq_len x vocab] for packed input sequences.
  ad::Var logits(std::span<const std::int32_t> inputs, std::size_t seq_len);

  ForwardResult forward(const Batch& batch, double alpha, double beta);

  // Gradients of every parameter after tape.backward(); zeros where none flowed.
  ParamStore gradients() const;

 private:
  struct Aux {
    std::vector<ad::Var> lb, z;
    std::vector<RouterStat> stats;
  };

  ad::Var p(const std::string& name) const;
  ad::Var run(std::span<const std::int32_t> inputs, std::size_t seq_len, Aux* aux);
  void collect(const RoutedRows& routes, std::size_t layer, const char* kind, Aux* aux);

  ad::Tape& tape_;
  const ModelConfig& config_;
  std::map<std::string, ad::Var> vars_;
};

// Logits for one or more packed sequences of length seq_len.
Tensor forward_logits(const Checkpoint& ckpt, std::span<const std::int32_t> inputs,
                      std::size_t seq_len);

LossBreakdown forward_loss(const Checkpoint& ckpt, const Batch& batch, double alpha, double beta);

// Mean next-token NLL of one sequence (len <= n_ctx + 1); aux terms zero for dense.
LossBreakdown dense_forward_loss(const Checkpoint& ckpt, std::span<const std::int32_t> tokens);

}  // namespace bamforge
