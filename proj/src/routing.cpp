// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "bamforge/routing.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "bamforge/errors.hpp"
#include "bamforge/numerics.hpp"

namespace bamforge {

std::vector<std::size_t> top_k_indices(std::span<const double> gates, std::size_t k) {
  if (k == 0 || k > gates.size()) {
    throw ConfigError("top-k: k=" + std::to_string(k) + " outside [1, " +
                      std::to_string(gates.size()) + "]");
  }
  std::vector<std::size_t> order(gates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return gates[a] > gates[b]; });
  order.resize(k);
  return order;
}

RouterDecision route(std::span<const double> x, const Tensor& w_router, std::size_t k,
                     RoutingMode mode) {
  if (w_router.rank() != 2 || w_router.rows() != x.size())
    throw ShapeError("route: router must be d_model x N");
  const std::size_t n = w_router.cols();
  if (mode == RoutingMode::topk && (k == 0 || k > n))
    throw ConfigError("route: k=" + std::to_string(k) + " exceeds " + std::to_string(n) + " experts");
  RouterDecision d;
  d.logits.assign(n, 0.0);
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t c = 0; c < n; ++c) d.logits[c] += x[r] * w_router.at(r, c);
  d.gates = softmax(d.logits);
  d.selected = top_k_indices(d.gates, mode == RoutingMode::soft ? n : k);
  if (mode == RoutingMode::soft) std::sort(d.selected.begin(), d.selected.end());
  return d;
}

std::vector<double> moe_ffn_forward(std::span<const double> x, std::span<const FfnWeights> experts,
                                    const RouterDecision& decision) {
  std::vector<std::size_t> order = decision.selected;
  std::sort(order.begin(), order.end());
  const Tensor xv({x.size()}, std::vector<double>(x.begin(), x.end()));
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t i : order) {
    if (i >= experts.size() || i >= decision.gates.size())
      throw Error("moe_ffn_forward: expert index " + std::to_string(i) + " out of range");
    const Tensor y = ffn_forward(xv, experts[i]);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += decision.gates[i] * y[c];
  }
  return out;
}

double load_balance_loss(std::span<const std::size_t> primary_expert, const Tensor& gates) {
  const std::size_t batch = primary_expert.size();
  if (batch == 0 || gates.rank() != 2 || gates.rows() == 0)
    throw ConfigError("load_balance_loss: empty batch");
  if (gates.rows() != batch) throw ShapeError("load_balance_loss: one gate row per token required");
  const std::size_t n = gates.cols();
  std::vector<double> f(n, 0.0);
  for (std::size_t e : primary_expert) {
    if (e >= n) throw IndexError("load_balance_loss: expert index out of range");
    f[e] += 1.0;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mass = 0.0;
    for (std::size_t t = 0; t < batch; ++t) mass += gates.at(t, i);
    total += (f[i] / static_cast<double>(batch)) * (mass / static_cast<double>(batch));
  }
  return static_cast<double>(n) * total;
}

double router_z_loss(const Tensor& batch_logits) {
  if (batch_logits.rank() != 2 || batch_logits.rows() == 0)
    throw ShapeError("router_z_loss: expects a [B x N] matrix with B >= 1");
  double total = 0.0;
  for (std::size_t t = 0; t < batch_logits.rows(); ++t) {
    const double lse = log_sum_exp(batch_logits.row(t));
    total += lse * lse;
  }
  return total / static_cast<double>(batch_logits.rows());
}

LossBreakdown total_loss(double nll, std::span<const double> lb_terms,
                         std::span<const double> z_terms, double alpha, double beta) {
  if (alpha < 0.0 || beta < 0.0) throw ConfigError("loss weights alpha/beta must be nonnegative");
  LossBreakdown out;
  out.nll = nll;
  out.alpha = alpha;
  out.beta = beta;
  for (double v : lb_terms) out.lb += v;
  for (double v : z_terms) out.z += v;
  out.total = out.nll + alpha * out.lb + beta * out.z;
  return out;
}

std::vector<double> RoutedRows::primary_fractions() const {
  std::vector<double> f(n_experts, 0.0);
  for (std::size_t e : primary) f[e] += 1.0;
  for (double& v : f) v /= static_cast<double>(primary.size());
  return f;
}

RoutedRows route_rows(ad::Var h, ad::Var w_router, std::size_t k) {
  RoutedRows r;
  r.logits = ad::matmul(h, w_router);
  r.gates = ad::softmax_rows(r.logits);
  const Tensor& g = r.gates.value();
  r.n_experts = g.cols();
  if (k == 0 || k > r.n_experts)
    throw ConfigError("router: k=" + std::to_string(k) + " exceeds " + std::to_string(r.n_experts) + " experts");
  r.soft = k == r.n_experts;
  const std::size_t rows = g.rows();
  r.selected.resize(rows);
  r.primary.resize(rows);
  Tensor mask(g.shape());
  for (std::size_t t = 0; t < rows; ++t) {
    r.selected[t] = top_k_indices(g.row(t), k);
    r.primary[t] = r.selected[t].front();
    for (std::size_t e : r.selected[t]) mask.at(t, e) = 1.0;
  }
  r.weights = r.soft ? r.gates : ad::mul_const(r.gates, mask);
  return r;
}

ad::Var moe_ffn(ad::Var h, std::span<const FfnExpertVars> experts, const RoutedRows& routes) {
  if (experts.size() != routes.n_experts) throw ShapeError("moe_ffn: expert count differs from router width");
  const std::size_t rows = h.value().rows();
  ad::Var out;
  auto accumulate = [&](ad::Var part) { out = out.valid() ? ad::add(out, part) : part; };
  for (std::size_t i = 0; i < experts.size(); ++i) {
    const FfnExpertVars& e = experts[i];
    if (routes.soft) {
      accumulate(ad::gate_rows(layers::ffn(h, e.gate, e.up, e.down), routes.gates, i));
      continue;
    }
    std::vector<std::size_t> dispatched;
    for (std::size_t t = 0; t < rows; ++t)
      if (std::find(routes.selected[t].begin(), routes.selected[t].end(), i) != routes.selected[t].end())
        dispatched.push_back(t);
    if (dispatched.empty()) continue;
    ad::Var hi = ad::gather_rows(h, dispatched);
    ad::Var gi = ad::gather_rows(routes.gates, dispatched);
    ad::Var yi = ad::gate_rows(layers::ffn(hi, e.gate, e.up, e.down), gi, i);
    accumulate(ad::scatter_rows(yi, dispatched, rows));
  }
  if (!out.valid()) throw Error("moe_ffn: no expert received any token");
  return out;
}

}  // namespace bamforge
