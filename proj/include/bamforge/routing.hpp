// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

// Routers, mixture-of-FFN-experts, and the auxiliary router losses.
//
// Selected experts are weighted by their raw softmax gates: there is no
// renormalization over the selected set. Top-k selection ties go to the lower
// expert index.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bamforge/autodiff.hpp"
#include "bamforge/layers.hpp"
#include "bamforge/tensor.hpp"

namespace bamforge {

enum class RoutingMode { topk, soft };

struct RouterDecision {
  std::vector<double> logits;
  std::vector<double> gates;          // softmax(logits)
  std::vector<std::size_t> selected;  // descending gate order
};

// Indices of the k largest gates, descending; ties broken by lower index.
std::vector<std::size_t> top_k_indices(std::span<const double> gates, std::size_t k);

// logits = x^T W_router with W_router [d_model x N].
RouterDecision route(std::span<const double> x, const Tensor& w_router, std::size_t k,
                     RoutingMode mode);

std::vector<double> moe_ffn_forward(std::span<const double> x, std::span<const FfnWeights> experts,
                                    const RouterDecision& decision);

// N * sum_i f_i P_i. f_i: share of tokens whose primary (top-1) expert is i;
// P_i: mean gate of expert i. gates is [B x N].
double load_balance_loss(std::span<const std::size_t> primary_expert, const Tensor& gates);

// Mean over tokens of logsumexp(router logits)^2; logits is [B x N].
double router_z_loss(const Tensor& batch_logits);

struct LossBreakdown {
  double nll = 0.0;
  double lb = 0.0;  // summed over routed layers
  double z = 0.0;   // summed over routed layers
  double alpha = 0.0;
  double beta = 0.0;
  double total = 0.0;
};

inline constexpr double kDefaultAlpha = 0.01;
inline constexpr double kDefaultBeta = 0.001;

LossBreakdown total_loss(double nll, std::span<const double> lb_terms,
                         std::span<const double> z_terms, double alpha, double beta);

// Tape-level router over rows of h.
struct RoutedRows {
  ad::Var logits;  // [rows x N]
  ad::Var gates;   // softmax(logits)
  ad::Var weights; // gates with unselected entries zeroed (== gates when soft)
  std::vector<std::vector<std::size_t>> selected;  // per row
  std::vector<std::size_t> primary;                // top-1 expert per row
  std::size_t n_experts = 0;
  bool soft = false;

  // Fraction of rows whose primary expert is i.
  std::vector<double> primary_fractions() const;
};

// k == n_experts is soft routing.
RoutedRows route_rows(ad::Var h, ad::Var w_router, std::size_t k);

struct FfnExpertVars {
  ad::Var gate, up, down;
};

// sum over selected experts of weights[:, i] * FFN_i(h); sparse routes only
// evaluate each expert on the rows dispatched to it. Reduced in expert order.
ad::Var moe_ffn(ad::Var h, std::span<const FfnExpertVars> experts, const RoutedRows& routes);

}  // namespace bamforge
