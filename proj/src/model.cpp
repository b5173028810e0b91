// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "bamforge/model.hpp"

#include <cmath>

#include "bamforge/errors.hpp"
#include "bamforge/layers.hpp"
#include "bamforge/moa.hpp"
#include "bamforge/numerics.hpp"
#include "bamforge/rng.hpp"

namespace bamforge {

namespace pname {

namespace {
std::string scope(std::size_t layer) { return "layer" + std::to_string(layer); }
}  // namespace

std::string layer_norm(std::size_t layer) { return scope(layer) + ".norm"; }
std::string attn(std::size_t layer, const std::string& role) { return scope(layer) + "." + role; }
std::string attn_expert(std::size_t layer, std::size_t expert, const std::string& role) {
  return scope(layer) + ".attn_expert" + std::to_string(expert) + "." + role;
}
std::string ffn(std::size_t layer, const std::string& role) { return scope(layer) + "." + role; }
std::string ffn_expert(std::size_t layer, std::size_t expert, const std::string& role) {
  return scope(layer) + ".ffn_expert" + std::to_string(expert) + "." + role;
}
std::string router_ffn(std::size_t layer) { return scope(layer) + ".router_ffn"; }
std::string router_attn(std::size_t layer) { return scope(layer) + ".router_attn"; }

std::string role_of(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot == std::string::npos ? name : name.substr(dot + 1);
}

}  // namespace pname

std::map<std::string, Shape> parameter_shapes(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.d_model, hidden = c.ffn_hidden();
  std::map<std::string, Shape> shapes;
  shapes[pname::kEmbeddingIn] = {c.vocab, d};
  if (!c.tie_embeddings) shapes[pname::kEmbeddingOut] = {d, c.vocab};
  shapes[pname::kFinalNorm] = {d};
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    shapes[pname::layer_norm(l)] = {d};
    switch (c.arch) {
      case Arch::dense:
      case Arch::btx:
        for (const char* role : {"attn_q", "attn_k", "attn_v", "attn_o"}) shapes[pname::attn(l, role)] = {d, d};
        break;
      case Arch::bam_expert_kv:
        for (std::size_t j = 0; j < c.n_attn_experts; ++j)
          for (const char* role : {"attn_q", "attn_k", "attn_v", "attn_o"})
            shapes[pname::attn_expert(l, j, role)] = {d, d};
        shapes[pname::router_attn(l)] = {d, c.n_attn_experts};
        break;
      case Arch::bam_shared_kv:
        shapes[pname::attn(l, "attn_k")] = {d, d};
        shapes[pname::attn(l, "attn_v")] = {d, d};
        for (std::size_t j = 0; j < c.n_attn_experts; ++j)
          for (const char* role : {"attn_q", "attn_o"}) shapes[pname::attn_expert(l, j, role)] = {d, d};
        shapes[pname::router_attn(l)] = {d, c.n_attn_experts};
        break;
    }
    if (c.arch == Arch::dense) {
      shapes[pname::ffn(l, "ffn_gate")] = {d, hidden};
      shapes[pname::ffn(l, "ffn_up")] = {d, hidden};
      shapes[pname::ffn(l, "ffn_down")] = {hidden, d};
    } else {
      for (std::size_t i = 0; i < c.n_experts; ++i) {
        shapes[pname::ffn_expert(l, i, "ffn_gate")] = {d, hidden};
        shapes[pname::ffn_expert(l, i, "ffn_up")] = {d, hidden};
        shapes[pname::ffn_expert(l, i, "ffn_down")] = {hidden, d};
      }
      shapes[pname::router_ffn(l)] = {d, c.n_experts};
    }
  }
  return shapes;
}

Checkpoint init_model(const ModelConfig& config, std::uint64_t seed) {
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.meta.rng_seed = seed;
  ckpt.meta.phase = Phase::seed;
  Rng rng = Rng::stream(seed, "init");
  const double out_std = kInitStd / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  for (const auto& [name, shape] : parameter_shapes(config)) {
    const std::string role = pname::role_of(name);
    Tensor t(shape);
    if (role == "norm") {
      t.fill(1.0);
    } else {
      const double stddev = (role == "attn_o" || role == "ffn_down") ? out_std : kInitStd;
      for (double& v : t.data()) v = rng.normal(0.0, stddev);
    }
    ckpt.params.emplace(name, std::move(t));
  }
  return ckpt;
}

std::vector<std::int32_t> Batch::inputs() const {
  std::vector<std::int32_t> out;
  out.reserve(n_seq * seq_len);
  for (std::size_t s = 0; s < n_seq; ++s)
    for (std::size_t t = 0; t < seq_len; ++t) out.push_back(tokens[s * (seq_len + 1) + t]);
  return out;
}

std::vector<std::int32_t> Batch::targets() const {
  std::vector<std::int32_t> out;
  out.reserve(n_seq * seq_len);
  for (std::size_t s = 0; s < n_seq; ++s)
    for (std::size_t t = 0; t < seq_len; ++t) out.push_back(tokens[s * (seq_len + 1) + t + 1]);
  return out;
}

ModelGraph::ModelGraph(ad::Tape& tape, const Checkpoint& ckpt, bool requires_grad)
    : tape_(tape), config_(ckpt.config) {
  for (const auto& [name, t] : ckpt.params) vars_.emplace(name, tape.leaf(t, requires_grad));
}

ad::Var ModelGraph::p(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw SurgeryError("model graph: missing parameter '" + name + "'");
  return it->second;
}

void ModelGraph::collect(const RoutedRows& routes, std::size_t layer, const char* kind, Aux* aux) {
  if (!aux) return;
  aux->z.push_back(ad::lse_squared_mean(routes.logits));
  const std::vector<double> f = routes.primary_fractions();
  if (!routes.soft) aux->lb.push_back(ad::load_balance(routes.gates, f));
  RouterStat stat{layer, kind, f, 0.0};
  const Tensor& g = routes.gates.value();
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (double v : g.row(r))
      if (v > 0.0) stat.gate_entropy -= v * std::log(v);
  stat.gate_entropy /= static_cast<double>(g.rows());
  aux->stats.push_back(std::move(stat));
}

ad::Var ModelGraph::run(std::span<const std::int32_t> inputs, std::size_t seq_len, Aux* aux) {
  const ModelConfig& c = config_;
  if (seq_len == 0 || seq_len > c.n_ctx)
    throw ConfigError("sequence length " + std::to_string(seq_len) + " outside [1, n_ctx]");
  if (inputs.size() % seq_len != 0) throw ShapeError("input length is not a multiple of seq_len");

  ad::Var x = ad::embedding(p(pname::kEmbeddingIn), inputs);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    ad::Var h = ad::scale_norm(x, p(pname::layer_norm(l)), kNormEps);

    ad::Var attn_out;
    if (!c.is_bam()) {
      attn_out = layers::mha(h, p(pname::attn(l, "attn_q")), p(pname::attn(l, "attn_k")),
                             p(pname::attn(l, "attn_v")), p(pname::attn(l, "attn_o")), c.n_heads,
                             seq_len);
    } else {
      RoutedRows routes = route_rows(h, p(pname::router_attn(l)), c.attn_active_experts());
      collect(routes, l, "attn", aux);
      std::vector<AttnExpertVars> experts;
      const bool shared = c.arch == Arch::bam_shared_kv;
      for (std::size_t j = 0; j < c.n_attn_experts; ++j) {
        AttnExpertVars e{p(pname::attn_expert(l, j, "attn_q")), {}, {},
                         p(pname::attn_expert(l, j, "attn_o"))};
        if (!shared) {
          e.k = p(pname::attn_expert(l, j, "attn_k"));
          e.v = p(pname::attn_expert(l, j, "attn_v"));
        }
        experts.push_back(e);
      }
      ad::Var sk = shared ? p(pname::attn(l, "attn_k")) : ad::Var{};
      ad::Var sv = shared ? p(pname::attn(l, "attn_v")) : ad::Var{};
      attn_out = moa(h, experts, sk, sv, routes, c.n_heads, seq_len);
    }

    ad::Var ffn_out;
    if (c.arch == Arch::dense) {
      ffn_out = layers::ffn(h, p(pname::ffn(l, "ffn_gate")), p(pname::ffn(l, "ffn_up")),
                            p(pname::ffn(l, "ffn_down")));
    } else {
      RoutedRows routes = route_rows(h, p(pname::router_ffn(l)), c.ffn_topk);
      collect(routes, l, "ffn", aux);
      std::vector<FfnExpertVars> experts;
      for (std::size_t i = 0; i < c.n_experts; ++i)
        experts.push_back({p(pname::ffn_expert(l, i, "ffn_gate")), p(pname::ffn_expert(l, i, "ffn_up")),
                           p(pname::ffn_expert(l, i, "ffn_down"))});
      ffn_out = moe_ffn(h, experts, routes);
    }
    x = ad::add(ad::add(x, attn_out), ffn_out);
  }
  ad::Var h = ad::scale_norm(x, p(pname::kFinalNorm), kNormEps);
  return c.tie_embeddings ? ad::matmul_nt(h, p(pname::kEmbeddingIn))
                          : ad::matmul(h, p(pname::kEmbeddingOut));
}

ad::Var ModelGraph::logits(std::span<const std::int32_t> inputs, std::size_t seq_len) {
  return run(inputs, seq_len, nullptr);
}

ForwardResult ModelGraph::forward(const Batch& batch, double alpha, double beta) {
  if (batch.tokens.size() != batch.n_seq * (batch.seq_len + 1))
    throw ShapeError("batch token count does not match n_seq * (seq_len + 1)");
  Aux aux;
  const auto inputs = batch.inputs();
  const auto targets = batch.targets();
  ForwardResult out;
  out.logits = run(inputs, batch.seq_len, &aux);
  ad::Var nll = ad::cross_entropy(out.logits, targets);

  std::vector<double> lb_values, z_values;
  for (const ad::Var& v : aux.lb) lb_values.push_back(v.value()[0]);
  for (const ad::Var& v : aux.z) z_values.push_back(v.value()[0]);
  out.loss = total_loss(nll.value()[0], lb_values, z_values, alpha, beta);

  std::vector<ad::Var> terms{nll};
  for (const ad::Var& v : aux.lb) terms.push_back(ad::scale(v, alpha));
  for (const ad::Var& v : aux.z) terms.push_back(ad::scale(v, beta));
  out.objective = terms.size() == 1 ? nll : ad::sum(terms);
  out.router_stats = std::move(aux.stats);
  return out;
}

ParamStore ModelGraph::gradients() const {
  ParamStore grads;
  for (const auto& [name, var] : vars_) {
    const Tensor& g = var.grad();
    grads.emplace(name, g.empty() ? Tensor(var.value().shape()) : g);
  }
  return grads;
}

Tensor forward_logits(const Checkpoint& ckpt, std::span<const std::int32_t> inputs,
                      std::size_t seq_len) {
  ad::Tape tape;
  ModelGraph graph(tape, ckpt, false);
  return graph.logits(inputs, seq_len).value();
}

LossBreakdown forward_loss(const Checkpoint& ckpt, const Batch& batch, double alpha, double beta) {
  ad::Tape tape;
  ModelGraph graph(tape, ckpt, false);
  return graph.forward(batch, alpha, beta).loss;
}

LossBreakdown dense_forward_loss(const Checkpoint& ckpt, std::span<const std::int32_t> tokens) {
  if (tokens.size() < 2 || tokens.size() > ckpt.config.n_ctx + 1)
    throw ConfigError("sequence must hold between 2 and n_ctx + 1 tokens");
  Batch batch{{tokens.begin(), tokens.end()}, 1, tokens.size() - 1};
  return forward_loss(ckpt, batch, 0.0, 0.0);
}

}  // namespace bamforge
