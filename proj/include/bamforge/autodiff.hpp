// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode tape over matrix-valued nodes.
//
// Nodes are appended in evaluation order and backward() walks them in exact
// reverse order, so gradient accumulation order is fixed for a given graph.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "bamforge/tensor.hpp"

namespace bamforge::ad {

enum class Precision { f64, f32 };

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the tape and the gradient flowing into the node's output.
  using BackwardFn = std::function<void(Tape&, const Tensor&)>;

  explicit Tape(Precision precision = Precision::f64) : precision_(precision) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Op construction. The node requires grad iff any input does; backward is
  // dropped otherwise.
  Var push(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var push(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  // Seeds d(out)/d(out) = 1 for a single-element node and propagates.
  void backward(Var out);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Lazily allocated gradient buffer; only call for nodes that require grad.
  Tensor& grad_buffer(std::size_t id);

  Precision precision() const { return precision_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  void round_if_single(Tensor& t) const;

  Precision precision_;
  std::vector<Node> nodes_;
};

// Element-wise and linear algebra.
Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var scale(Var a, double s);
Var mul(Var a, Var b);
Var mul_const(Var a, const Tensor& mask);

// Row-gathers from an embedding table [vocab x d].
Var embedding(Var table, std::span<const std::int32_t> tokens);

// Row-wise x / sqrt(mean(x^2) + eps) * g, g of length cols.
Var scale_norm(Var x, Var g, double eps = 1e-6);

Var swiglu(Var gate, Var up);

// Rotary embedding; row r of x has position r % seq_len.
Var rope(Var x, std::size_t n_heads, std::size_t seq_len);

// Causal multi-head attention over packed sequences of length seq_len.
Var attention(Var q, Var k, Var v, std::size_t n_heads, std::size_t seq_len);

Var softmax_rows(Var logits);

// y[r, :] * gates[r, col]
Var gate_rows(Var y, Var gates, std::size_t col);

Var gather_rows(Var x, std::span<const std::size_t> rows);
// Inverse of gather: places row i of x at output row rows[i], others zero.
Var scatter_rows(Var x, std::span<const std::size_t> rows, std::size_t out_rows);

// Mean over rows of -log softmax(logits[r])[targets[r]].
Var cross_entropy(Var logits, std::span<const std::int32_t> targets);

// Mean over rows of logsumexp(logits[r])^2.
Var lse_squared_mean(Var logits);

// N * sum_i f_i * mean_r gates[r, i], with f held constant.
Var load_balance(Var gates, std::span<const double> fractions);

Var sum(std::span<const Var> scalars);

}  // namespace bamforge::ad
