// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "bamforge/autodiff.hpp"
#include "bamforge/tensor.hpp"

namespace bamforge {

inline constexpr double kNormEps = 1e-6;

// Max-subtracted softmax. Throws NumericError on non-finite input.
std::vector<double> softmax(std::span<const double> v);

double log_sum_exp(std::span<const double> v);

// Unit-RMS normalization followed by an element-wise gain.
std::vector<double> scale_norm(std::span<const double> x, std::span<const double> g);

inline double silu(double z) { return z / (1.0 + std::exp(-z)); }

std::vector<double> swiglu(std::span<const double> gate, std::span<const double> up);

// Pairwise rotary rotation of one head vector at `position`.
std::vector<double> rope_rotate(std::span<const double> x, std::size_t position);

struct NllResult {
  double loss = 0.0;
  std::vector<double> grad;  // softmax(logits) - onehot(target)
};

NllResult cross_entropy_nll(std::span<const double> logits, std::int32_t target);

// Builds a scalar from tape leaves holding `inputs`.
using ScalarFn = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

// Compares tape gradients against central differences over every coordinate
// of every input. Relative error is |analytic - numeric| / max(1, |analytic|).
GradCheckReport grad_check_report(const ScalarFn& f, std::span<const Tensor> inputs, double eps);

inline double grad_check(const ScalarFn& f, std::span<const Tensor> inputs, double eps = 1e-5) {
  return grad_check_report(f, inputs, eps).max_rel_error;
}

}  // namespace bamforge
