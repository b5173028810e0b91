// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "bamforge/upcycle.hpp"

#include <algorithm>
#include <string>

#include "bamforge/errors.hpp"
#include "bamforge/model.hpp"
#include "bamforge/moa.hpp"

namespace bamforge {

namespace {

const std::set<std::string> kSharedRoles = {"embedding_in", "embedding_out", "norm"};
const std::set<std::string> kAttentionRoles = {"attn_q", "attn_k", "attn_v", "attn_o"};

bool same_core(const ModelConfig& a, const ModelConfig& b) {
  return a.d_model == b.d_model && a.d_ff == b.d_ff && a.n_heads == b.n_heads &&
         a.n_layers == b.n_layers && a.vocab == b.vocab && a.n_ctx == b.n_ctx &&
         a.tie_embeddings == b.tie_embeddings;
}

std::uint64_t max_tokens(const std::vector<const Checkpoint*>& sources) {
  std::uint64_t n = 0;
  for (const Checkpoint* c : sources) n = std::max(n, c->meta.tokens_trained);
  return n;
}

// Copies non-expert parameters and the FFN expert bank shared by BTX and BAM.
Checkpoint assemble_common(const UpcycleRecipe& recipe, ModelConfig config) {
  const auto sources = recipe.sources();
  std::vector<std::reference_wrapper<const Checkpoint>> refs;
  for (const Checkpoint* c : sources) refs.emplace_back(*c);

  Checkpoint out;
  out.config = config;
  out.params = average_merge(refs, kSharedRoles);
  out.meta.phase = Phase::mixture;
  out.meta.domain_tag = "mixture";
  out.meta.tokens_trained = max_tokens(sources);
  out.meta.rng_seed = recipe.router_init_seed;

  const std::size_t n = recipe.n_ffn_experts();
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    for (std::size_t i = 0; i < n; ++i) {
      const Checkpoint& src = i < sources.size() ? *sources[i] : *recipe.seed;
      for (const char* role : {"ffn_gate", "ffn_up", "ffn_down"})
        out.params[pname::ffn_expert(l, i, role)] = src.param(pname::ffn(l, role));
    }
    Rng rng = Rng::stream(recipe.router_init_seed, pname::router_ffn(l));
    out.params[pname::router_ffn(l)] = init_router(config.d_model, n, rng);
  }
  return out;
}

}  // namespace

std::vector<Checkpoint> branch(const Checkpoint& seed, std::size_t n, const std::string& tag_prefix) {
  if (n < 1) throw ConfigError("branch: need at least one copy");
  std::vector<std::string> tags;
  for (std::size_t i = 0; i < n; ++i) tags.push_back(tag_prefix + std::to_string(i));
  return branch(seed, tags);
}

std::vector<Checkpoint> branch(const Checkpoint& seed, const std::vector<std::string>& tags) {
  if (tags.empty()) throw ConfigError("branch: need at least one copy");
  validate_checkpoint(seed);
  std::vector<Checkpoint> out;
  for (const std::string& tag : tags) {
    Checkpoint copy = seed;
    copy.meta.domain_tag = tag;
    copy.meta.rng_seed = Rng::derive(seed.meta.rng_seed, "branch/" + tag);
    out.push_back(std::move(copy));
  }
  return out;
}

ParamStore average_merge(const std::vector<std::reference_wrapper<const Checkpoint>>& sources,
                         const std::set<std::string>& roles) {
  if (sources.empty()) throw SurgeryError("average_merge: no sources");
  ParamStore out;
  for (const auto& [name, first] : sources.front().get().params) {
    if (!roles.contains(pname::role_of(name))) continue;
    // Running mean: identical inputs reproduce the input bit for bit.
    Tensor mean = first;
    for (std::size_t k = 1; k < sources.size(); ++k) {
      const Checkpoint& src = sources[k];
      auto it = src.params.find(name);
      if (it == src.params.end()) throw SurgeryError("average_merge: source lacks '" + name + "'");
      if (it->second.shape() != first.shape())
        throw SurgeryError("average_merge: shape mismatch for '" + name + "'");
      const double inv = 1.0 / static_cast<double>(k + 1);
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (it->second[i] - mean[i]) * inv;
    }
    out.emplace(name, std::move(mean));
  }
  return out;
}

Tensor init_router(std::size_t d_model, std::size_t n_experts, Rng& rng) {
  Tensor w({d_model, n_experts});
  for (double& v : w.data()) v = rng.normal(0.0, kInitStd);
  return w;
}

std::vector<const Checkpoint*> UpcycleRecipe::sources() const {
  std::vector<const Checkpoint*> out;
  if (include_seed) out.push_back(seed);
  out.insert(out.end(), experts.begin(), experts.end());
  return out;
}

std::size_t UpcycleRecipe::n_ffn_experts() const { return sources().size() + extra_seed_ffn_copies; }

void UpcycleRecipe::validate() const {
  if (target_arch == Arch::dense) throw SurgeryError("upcycle target must be a mixture arch");
  if (!seed) throw SurgeryError("recipe has no seed checkpoint");
  const auto src = sources();
  if (src.empty()) throw SurgeryError("recipe has no sources");
  for (const Checkpoint* c : src) {
    if (!c) throw SurgeryError("recipe holds a null source");
    if (c->config.arch != Arch::dense) throw SurgeryError("upcycle sources must be dense models");
    if (!same_core(c->config, seed->config))
      throw SurgeryError("source '" + c->meta.domain_tag + "' differs from the seed in core dims");
    validate_checkpoint(*c);
  }
  const std::size_t n = n_ffn_experts();
  if (ffn_topk == 0 || ffn_topk > n)
    throw SurgeryError("ffn_topk " + std::to_string(ffn_topk) + " outside [1, " + std::to_string(n) + "]");
  if (!attn_routing.soft && (attn_routing.k == 0 || attn_routing.k > src.size()))
    throw SurgeryError("attention top-k exceeds the number of attention experts");
}

Checkpoint build_btx(const UpcycleRecipe& recipe) {
  if (recipe.target_arch != Arch::btx) throw SurgeryError("build_btx: recipe targets another arch");
  recipe.validate();
  ModelConfig config = recipe.seed->config;
  config.arch = Arch::btx;
  config.n_experts = recipe.n_ffn_experts();
  config.n_attn_experts = 0;
  config.ffn_topk = recipe.ffn_topk;
  config.attn_routing = AttnRouting::make_soft();
  config.validate();

  Checkpoint out = assemble_common(recipe, config);
  std::vector<std::reference_wrapper<const Checkpoint>> refs;
  for (const Checkpoint* c : recipe.sources()) refs.emplace_back(*c);
  out.params.merge(average_merge(refs, kAttentionRoles));
  validate_checkpoint(out);
  return out;
}

Checkpoint build_bam(const UpcycleRecipe& recipe) {
  if (!(recipe.target_arch == Arch::bam_expert_kv || recipe.target_arch == Arch::bam_shared_kv))
    throw SurgeryError("build_bam: recipe targets another arch");
  recipe.validate();
  const auto sources = recipe.sources();
  ModelConfig config = recipe.seed->config;
  config.arch = recipe.target_arch;
  config.n_experts = recipe.n_ffn_experts();
  config.n_attn_experts = sources.size();
  config.ffn_topk = recipe.ffn_topk;
  config.attn_routing = recipe.attn_routing;
  config.validate();

  Checkpoint out = assemble_common(recipe, config);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    std::vector<AttentionWeights> attn;
    for (const Checkpoint* c : sources)
      attn.push_back({c->param(pname::attn(l, "attn_q")), c->param(pname::attn(l, "attn_k")),
                      c->param(pname::attn(l, "attn_v")), c->param(pname::attn(l, "attn_o"))});
    Rng rng = Rng::stream(recipe.router_init_seed, pname::router_attn(l));
    Tensor router = init_router(config.d_model, sources.size(), rng);
    MoaLayer layer = config.arch == Arch::bam_shared_kv ? build_shared_kv(attn, std::move(router))
                                                        : build_expert_kv(attn, std::move(router));
    for (std::size_t j = 0; j < layer.size(); ++j) {
      out.params[pname::attn_expert(l, j, "attn_q")] = std::move(layer.experts[j].q);
      out.params[pname::attn_expert(l, j, "attn_o")] = std::move(layer.experts[j].o);
      if (layer.kv_mode == KvMode::expert_kv) {
        out.params[pname::attn_expert(l, j, "attn_k")] = std::move(layer.experts[j].k);
        out.params[pname::attn_expert(l, j, "attn_v")] = std::move(layer.experts[j].v);
      }
    }
    if (layer.kv_mode == KvMode::shared_kv) {
      out.params[pname::attn(l, "attn_k")] = std::move(layer.shared_k);
      out.params[pname::attn(l, "attn_v")] = std::move(layer.shared_v);
    }
    out.params[pname::router_attn(l)] = std::move(layer.router);
  }
  validate_checkpoint(out);
  return out;
}

Checkpoint upcycle(const UpcycleRecipe& recipe) {
  return recipe.target_arch == Arch::btx ? build_btx(recipe) : build_bam(recipe);
}

}  // namespace bamforge
