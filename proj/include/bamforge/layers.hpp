// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

// Transformer building blocks: multi-head attention, SwiGLU FFN and the
// parallel block y = x + Attn(norm x) + FFN(norm x).
//
// The tape-level functions are what the model graph uses; the Tensor-level
// wrappers evaluate the same graph on a throwaway tape.

#pragma once

#include <cstddef>

#include "bamforge/autodiff.hpp"
#include "bamforge/tensor.hpp"

namespace bamforge {

struct AttentionWeights {
  Tensor q, k, v, o;  // each d_model x d_model
};

struct FfnWeights {
  Tensor gate, up;  // d_model x d_ff/2
  Tensor down;      // d_ff/2 x d_model
};

namespace layers {

// Projects h with (rotated) q/k and v, attends causally, applies wo.
ad::Var mha(ad::Var h, ad::Var wq, ad::Var wk, ad::Var wv, ad::Var wo, std::size_t n_heads,
            std::size_t seq_len);

// Attention with precomputed rotated keys and values (shared-KV experts).
ad::Var mha_with_kv(ad::Var h, ad::Var wq, ad::Var keys, ad::Var values, ad::Var wo,
                    std::size_t n_heads, std::size_t seq_len);

ad::Var ffn(ad::Var h, ad::Var w_gate, ad::Var w_up, ad::Var w_down);

}  // namespace layers

// x: [n_ctx x d_model], one causal sequence.
Tensor mha_forward(const Tensor& x, const AttentionWeights& w, std::size_t n_heads);

// x: a vector [d_model] or a matrix of row vectors.
Tensor ffn_forward(const Tensor& x, const FfnWeights& w);

// Dense parallel block on one sequence.
Tensor parallel_block_forward(const Tensor& x, const Tensor& norm_gain, const AttentionWeights& attn,
                              const FfnWeights& ffn, std::size_t n_heads);

}  // namespace bamforge
