// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "bamforge/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bamforge/errors.hpp"
#include "bamforge/kernels.hpp"

namespace bamforge {

namespace {

void require_finite(std::span<const double> v, const char* op) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
}

}  // namespace

std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) throw ShapeError("softmax: empty input");
  require_finite(v, "softmax");
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    denom += out[i];
  }
  for (double& x : out) x /= denom;
  return out;
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw ShapeError("log_sum_exp: empty input");
  require_finite(v, "log_sum_exp");
  const double mx = *std::max_element(v.begin(), v.end());
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

std::vector<double> scale_norm(std::span<const double> x, std::span<const double> g) {
  if (x.size() != g.size()) throw ShapeError("scale_norm: gain length differs from input");
  ad::Tape tape;
  auto xv = tape.constant(Tensor({x.size()}, std::vector<double>(x.begin(), x.end())));
  auto gv = tape.constant(Tensor({g.size()}, std::vector<double>(g.begin(), g.end())));
  const Tensor& out = ad::scale_norm(xv, gv, kNormEps).value();
  return {out.data().begin(), out.data().end()};
}

std::vector<double> swiglu(std::span<const double> gate, std::span<const double> up) {
  if (gate.size() != up.size()) throw ShapeError("swiglu: gate and up lengths differ");
  std::vector<double> out(gate.size());
  for (std::size_t i = 0; i < gate.size(); ++i) out[i] = silu(gate[i]) * up[i];
  return out;
}

std::vector<double> rope_rotate(std::span<const double> x, std::size_t position) {
  if (x.size() % 2 != 0) throw ConfigError("rope_rotate: head dimension must be even");
  // Pack as row `position` of a single-head sequence so the training kernel is reused.
  const std::size_t hd = x.size();
  std::vector<double> rows((position + 1) * hd, 0.0);
  std::copy(x.begin(), x.end(), rows.begin() + static_cast<std::ptrdiff_t>(position * hd));
  std::vector<double> out(rows.size());
  kernels::rope(rows.data(), out.data(), position + 1, 1, hd, position + 1, false);
  return {out.begin() + static_cast<std::ptrdiff_t>(position * hd), out.end()};
}

NllResult cross_entropy_nll(std::span<const double> logits, std::int32_t target) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size())
    throw IndexError("cross_entropy_nll: target " + std::to_string(target) + " out of range");
  NllResult r;
  r.grad = softmax(logits);
  r.loss = log_sum_exp(logits) - logits[static_cast<std::size_t>(target)];
  r.grad[static_cast<std::size_t>(target)] -= 1.0;
  return r;
}

GradCheckReport grad_check_report(const ScalarFn& f, std::span<const Tensor> inputs, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw ConfigError("grad_check: eps must lie in [1e-7, 1e-3]");

  std::vector<Tensor> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const Tensor& in : inputs) leaves.push_back(tape.leaf(in, true));
    ad::Var out = f(tape, leaves);
    tape.backward(out);
    for (const ad::Var& leaf : leaves) {
      const Tensor& g = leaf.grad();
      analytic.push_back(g.empty() ? Tensor(leaf.value().shape()) : g);
    }
  }

  auto evaluate = [&](const std::vector<Tensor>& values) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const Tensor& in : values) leaves.push_back(tape.constant(in));
    return f(tape, leaves).value()[0];
  };

  GradCheckReport report;
  std::vector<Tensor> probe(inputs.begin(), inputs.end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    for (std::size_t e = 0; e < probe[i].size(); ++e) {
      const double orig = probe[i][e];
      probe[i][e] = orig + eps;
      const double up = evaluate(probe);
      probe[i][e] = orig - eps;
      const double down = evaluate(probe);
      probe[i][e] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i][e];
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      ++report.coordinates;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_input = i;
        report.worst_index = e;
      }
    }
  }
  return report;
}

}  // namespace bamforge
