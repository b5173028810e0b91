// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

// Parameter and inference-FLOPs accounting per token, plus the
// compute-matched token budget.
//
// Counting conventions (also printed as report footnotes):
//   [a] attention FLOPs exclude router FLOPs; the grand total adds them back.
//   [b] FFN FLOPs include a SwiGLU activation term of 3 * topk * d_ff/2.
//   [c] the router row and the active count hold one router per block; BAM
//       totals add the attention router.
//   [d] shared-KV: the qkv row and the active count hold the query experts;
//       the shared key/value pair is added to the total only.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "bamforge/config.hpp"

namespace bamforge {

struct ParamCount {
  std::uint64_t active = 0;
  std::uint64_t total = 0;
};

struct ParamReport {
  // Per block.
  ParamCount norm, attn_out, qkv_proj, ffn_exp, ffn_red, router;
  ParamCount embeddings_in, embeddings_out, final_norm;
  std::uint64_t active = 0;
  std::uint64_t total = 0;
};

ParamReport count_params(const ModelConfig& config);

// Per-layer FLOPs per token in a forward pass.
struct FlopsReport {
  std::uint64_t attn_router = 0, attn_qkv = 0, attn_mask = 0, attn_proj = 0;
  std::uint64_t ffn_router = 0, ffn = 0, activation = 0;
  std::uint64_t attention = 0;  // qkv + mask + proj
  std::uint64_t ffn_total = 0;  // ffn + activation
  std::uint64_t grand = 0;      // attention + ffn_total + routers
  std::size_t n_layers = 0;

  std::uint64_t model_total() const { return grand * n_layers; }
};

FlopsReport flops_per_token(const ModelConfig& config, std::size_t n_ctx);

// Forward + backward approximated as three forward passes.
inline constexpr std::uint64_t kTrainFlopsMultiplier = 3;

std::uint64_t training_flops_per_token(const ModelConfig& config, std::size_t n_ctx);

// floor(reference_flops * reference_tokens / candidate_flops), rounded down to
// a multiple of batch_tokens.
std::uint64_t compute_match(std::uint64_t reference_flops_per_token, std::uint64_t reference_tokens,
                            std::uint64_t candidate_flops_per_token, std::uint64_t batch_tokens = 1);

// 1234567 -> "1,234,567"
std::string group_digits(std::uint64_t v);

struct NamedConfig {
  std::string label;
  ModelConfig config;
};

void print_param_table(std::ostream& out, const std::vector<NamedConfig>& columns);
void print_param_csv(std::ostream& out, const std::vector<NamedConfig>& columns);
void print_flops_table(std::ostream& out, const std::vector<NamedConfig>& rows, std::size_t n_ctx);
void print_flops_csv(std::ostream& out, const std::vector<NamedConfig>& rows, std::size_t n_ctx);
void print_footnotes(std::ostream& out);

// The columns of the small-scale appendix tables.
std::vector<NamedConfig> small_scale_param_columns();
std::vector<NamedConfig> small_scale_flops_rows();

}  // namespace bamforge
