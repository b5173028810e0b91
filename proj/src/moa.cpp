// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "bamforge/moa.hpp"

#include <string>

#include "bamforge/errors.hpp"

namespace bamforge {

void MoaLayer::validate() const {
  if (experts.empty()) throw SurgeryError("MoA layer needs at least one expert");
  if (router.rank() != 2 || router.cols() != experts.size())
    throw ShapeError("MoA router must be d_model x n_experts");
  const Shape& s = experts.front().q.shape();
  for (const AttentionWeights& e : experts) {
    if (e.q.shape() != s || e.o.shape() != s) throw ShapeError("MoA experts disagree on q/o shape");
    if (kv_mode == KvMode::expert_kv && (e.k.shape() != s || e.v.shape() != s))
      throw ShapeError("expert-KV MoA expert is missing k/v");
  }
  if (kv_mode == KvMode::shared_kv && (shared_k.shape() != s || shared_v.shape() != s))
    throw ShapeError("shared-KV MoA layer needs one shared k/v pair");
}

MoaLayer build_expert_kv(std::span<const AttentionWeights> sources, Tensor router) {
  MoaLayer layer;
  layer.kv_mode = KvMode::expert_kv;
  layer.experts.assign(sources.begin(), sources.end());
  layer.router = std::move(router);
  layer.validate();
  return layer;
}

MoaLayer build_shared_kv(std::span<const AttentionWeights> sources, Tensor router) {
  if (sources.empty()) throw SurgeryError("build_shared_kv: no source models");
  const Shape& s = sources.front().k.shape();
  MoaLayer layer;
  layer.kv_mode = KvMode::shared_kv;
  layer.shared_k = sources.front().k;
  layer.shared_v = sources.front().v;
  for (std::size_t j = 0; j < sources.size(); ++j) {
    const AttentionWeights& src = sources[j];
    if (src.k.shape() != s || src.v.shape() != s || src.q.shape() != s || src.o.shape() != s)
      throw SurgeryError("build_shared_kv: source attention shapes differ");
    layer.experts.push_back(AttentionWeights{src.q, Tensor{}, Tensor{}, src.o});
    if (j == 0) continue;
    // Running mean: identical sources keep their projections bit for bit.
    const double inv = 1.0 / static_cast<double>(j + 1);
    for (std::size_t i = 0; i < layer.shared_k.size(); ++i) {
      layer.shared_k[i] += (src.k[i] - layer.shared_k[i]) * inv;
      layer.shared_v[i] += (src.v[i] - layer.shared_v[i]) * inv;
    }
  }
  layer.router = std::move(router);
  layer.validate();
  return layer;
}

Tensor moa_forward(const Tensor& x, const MoaLayer& layer, const AttnRouting& routing,
                   std::size_t n_heads) {
  layer.validate();
  const std::size_t n = layer.size();
  const std::size_t k = routing.soft ? n : routing.k;
  ad::Tape tape;
  ad::Var h = tape.constant(x);
  RoutedRows routes = route_rows(h, tape.constant(layer.router), k);
  std::vector<AttnExpertVars> vars;
  for (const AttentionWeights& e : layer.experts) {
    AttnExpertVars v{tape.constant(e.q), {}, {}, tape.constant(e.o)};
    if (layer.kv_mode == KvMode::expert_kv) {
      v.k = tape.constant(e.k);
      v.v = tape.constant(e.v);
    }
    vars.push_back(v);
  }
  ad::Var sk, sv;
  if (layer.kv_mode == KvMode::shared_kv) {
    sk = tape.constant(layer.shared_k);
    sv = tape.constant(layer.shared_v);
  }
  return moa(h, vars, sk, sv, routes, n_heads, x.rows()).value();
}

namespace {

bool dispatched_any(const RoutedRows& routes, std::size_t expert) {
  for (const auto& sel : routes.selected)
    for (std::size_t e : sel)
      if (e == expert) return true;
  return false;
}

}  // namespace

ad::Var moa(ad::Var h, std::span<const AttnExpertVars> experts, ad::Var shared_k, ad::Var shared_v,
            const RoutedRows& routes, std::size_t n_heads, std::size_t seq_len) {
  if (experts.size() != routes.n_experts)
    throw ShapeError("moa: expert count " + std::to_string(experts.size()) +
                     " differs from router width " + std::to_string(routes.n_experts));
  ad::Var keys, values;
  if (shared_k.valid()) {
    keys = ad::rope(ad::matmul(h, shared_k), n_heads, seq_len);
    values = ad::matmul(h, shared_v);
  }
  ad::Var out;
  for (std::size_t j = 0; j < experts.size(); ++j) {
    const AttnExpertVars& e = experts[j];
    if (!routes.soft && !dispatched_any(routes, j)) continue;
    ad::Var y = e.k.valid() ? layers::mha(h, e.q, e.k, e.v, e.o, n_heads, seq_len)
                            : layers::mha_with_kv(h, e.q, keys, values, e.o, n_heads, seq_len);
    ad::Var gated = ad::gate_rows(y, routes.weights, j);
    out = out.valid() ? ad::add(out, gated) : gated;
  }
  if (!out.valid()) throw Error("moa: no expert received any token");
  return out;
}

}  // namespace bamforge
