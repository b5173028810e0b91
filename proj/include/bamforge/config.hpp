// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace bamforge {

enum class Arch { dense, btx, bam_expert_kv, bam_shared_kv };

std::string to_string(Arch arch);
Arch parse_arch(const std::string& text);

// Attention-expert routing: soft (every expert, softmax weights) or top-k.
struct AttnRouting {
  bool soft = true;
  std::size_t k = 0;

  static AttnRouting make_soft() { return {true, 0}; }
  static AttnRouting top(std::size_t k) { return {false, k}; }
  friend bool operator==(const AttnRouting&, const AttnRouting&) = default;
};

std::string to_string(const AttnRouting& routing);
AttnRouting parse_attn_routing(const std::string& text);

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t d_ff = 256;  // SwiGLU hidden width is d_ff / 2
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t vocab = 256;
  std::size_t n_ctx = 64;
  Arch arch = Arch::dense;
  std::size_t n_experts = 1;       // FFN experts
  std::size_t n_attn_experts = 0;  // attention experts, BAM only
  std::size_t ffn_topk = 1;        // ffn_topk == n_experts is soft FFN routing
  AttnRouting attn_routing;        // BAM only
  bool tie_embeddings = true;

  void validate() const;

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t ffn_hidden() const { return d_ff / 2; }
  bool is_bam() const { return arch == Arch::bam_expert_kv || arch == Arch::bam_shared_kv; }
  bool is_mixture() const { return arch != Arch::dense; }
  bool ffn_soft() const { return ffn_topk == n_experts; }
  // Attention experts each token is dispatched to.
  std::size_t attn_active_experts() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Ordered key=value pairs; '#' starts a comment line.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_key_values(std::istream& in, const std::string& source);
KeyValues read_key_values(const std::string& path);

std::size_t parse_size(const std::string& key, const std::string& value);
std::int64_t parse_int(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
std::vector<std::string> split_list(const std::string& value, char sep = ',');

// Applies one key (without prefix). Returns false for an unknown key.
bool apply_config_key(ModelConfig& config, const std::string& key, const std::string& value);
// Writes "prefix<key>=value" lines in a fixed order.
void write_config(std::ostream& out, const ModelConfig& config, const std::string& prefix);

// Dimensions of the small-scale appendix model with the given mixture layout.
ModelConfig small_scale_config(Arch arch, std::size_t n_experts, std::size_t ffn_topk);

}  // namespace bamforge
