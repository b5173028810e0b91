// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

// Parameter surgery: branching a seed, uniform merging, and assembling BTX
// and BAM mixtures from a set of dense sources.
//
// Source order is fixed: the seed (when included) is source 0, followed by
// the domain experts in recipe order. FFN expert i comes from source i;
// extra seed-FFN copies are appended after the last source.

#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "bamforge/checkpoint.hpp"
#include "bamforge/config.hpp"
#include "bamforge/rng.hpp"

namespace bamforge {

// n copies tagged "<tag_prefix><i>" with rng seeds derived from the seed's.
std::vector<Checkpoint> branch(const Checkpoint& seed, std::size_t n,
                               const std::string& tag_prefix = "branch");
// One copy per tag.
std::vector<Checkpoint> branch(const Checkpoint& seed, const std::vector<std::string>& tags);

// Element-wise mean of every parameter whose role is in `roles`.
ParamStore average_merge(const std::vector<std::reference_wrapper<const Checkpoint>>& sources,
                         const std::set<std::string>& roles);

// d_model x n_experts, entries ~ normal(0, 0.02).
Tensor init_router(std::size_t d_model, std::size_t n_experts, Rng& rng);

struct UpcycleRecipe {
  const Checkpoint* seed = nullptr;
  std::vector<const Checkpoint*> experts;
  Arch target_arch = Arch::btx;
  std::size_t extra_seed_ffn_copies = 0;
  std::size_t ffn_topk = 1;
  AttnRouting attn_routing;
  std::uint64_t router_init_seed = 0;
  bool include_seed = true;

  // Distinct sources in expert order.
  std::vector<const Checkpoint*> sources() const;
  std::size_t n_ffn_experts() const;
  void validate() const;
};

Checkpoint build_btx(const UpcycleRecipe& recipe);
Checkpoint build_bam(const UpcycleRecipe& recipe);
// Dispatches on recipe.target_arch.
Checkpoint upcycle(const UpcycleRecipe& recipe);

}  // namespace bamforge
