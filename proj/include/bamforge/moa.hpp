// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

// Mixture of attention. Every expert attends over the full causal sequence;
// the router gates are applied per position to the expert outputs.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bamforge/config.hpp"
#include "bamforge/layers.hpp"
#include "bamforge/routing.hpp"

namespace bamforge {

enum class KvMode { expert_kv, shared_kv };

struct MoaLayer {
  KvMode kv_mode = KvMode::expert_kv;
  // expert_kv: complete q/k/v/o per expert. shared_kv: only q and o are set
  // per expert; k and v live in shared_k / shared_v.
  std::vector<AttentionWeights> experts;
  Tensor shared_k;
  Tensor shared_v;
  Tensor router;  // d_model x N

  std::size_t size() const { return experts.size(); }
  void validate() const;
};

// Q/O copied per source, shared K/V = element-wise mean over sources.
MoaLayer build_shared_kv(std::span<const AttentionWeights> sources, Tensor router);

MoaLayer build_expert_kv(std::span<const AttentionWeights> sources, Tensor router);

// x: [n_ctx x d_model], one sequence.
Tensor moa_forward(const Tensor& x, const MoaLayer& layer, const AttnRouting& routing,
                   std::size_t n_heads);

struct AttnExpertVars {
  ad::Var q, k, v, o;  // k, v unset for shared-KV experts
};

// Tape-level MoA given router decisions over rows of h.
ad::Var moa(ad::Var h, std::span<const AttnExpertVars> experts, ad::Var shared_k, ad::Var shared_v,
            const RoutedRows& routes, std::size_t n_heads, std::size_t seq_len);

}  // namespace bamforge
