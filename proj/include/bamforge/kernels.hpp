// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

// Dense kernels behind the autodiff tape.
//
// The functions in `kernels` are OpenMP-parallel over independent output
// rows (or attention heads). Each output element is reduced by exactly one
// thread in a fixed order, so results are bitwise independent of the thread
// count. `kernels::serial` holds naive reference versions used by the tests
// and the benchmark; they sum in a different order, so compare them with a
// tolerance, not bitwise.

#pragma once

#include <cstddef>

namespace bamforge::kernels {

// c[m x n] (+)= a[m x k] * b[k x n]
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate);

// c[m x n] (+)= a[m x k] * b[n x k]^T
void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);

// c[k x n] (+)= a[m x k]^T * b[m x n]
void matmul_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);

// Packed causal self-attention: rows are n_seq sequences of seq_len tokens,
// each row holds n_heads * head_dim features (head h occupies columns
// [h*head_dim, (h+1)*head_dim)).
struct AttentionDims {
  std::size_t n_seq = 0;
  std::size_t seq_len = 0;
  std::size_t n_heads = 0;
  std::size_t head_dim = 0;

  std::size_t rows() const { return n_seq * seq_len; }
  std::size_t width() const { return n_heads * head_dim; }
  // Size of the saved probability buffer.
  std::size_t prob_size() const { return n_seq * n_heads * seq_len * seq_len; }
};

// out = softmax(q k^T / sqrt(head_dim) + causal mask) v, per sequence and head.
// probs receives the attention weights (upper triangle left at zero).
void attention_forward(const double* q, const double* k, const double* v, double* out,
                       double* probs, const AttentionDims& dims);

// Accumulates gradients into dq, dk, dv.
void attention_backward(const double* q, const double* k, const double* v,
                        const double* probs, const double* dout, double* dq, double* dk,
                        double* dv, const AttentionDims& dims);

// Rotary embedding over packed rows; row r has position r % seq_len.
// inverse=true applies the transpose rotation (used for the gradient).
void rope(const double* x, double* y, std::size_t rows, std::size_t n_heads,
          std::size_t head_dim, std::size_t seq_len, bool inverse);

inline constexpr double kRopeBase = 10000.0;

namespace serial {

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate);
void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);
void matmul_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);
void attention_forward(const double* q, const double* k, const double* v, double* out,
                       double* probs, const AttentionDims& dims);
void attention_backward(const double* q, const double* k, const double* v,
                        const double* probs, const double* dout, double* dq, double* dk,
                        double* dv, const AttentionDims& dims);

}  // namespace serial

// Worker cap from BAMFORGE_THREADS (unset or invalid: OpenMP default).
void configure_threads_from_env();
int max_threads();

}  // namespace bamforge::kernels
