// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "bamforge/layers.hpp"

#include "bamforge/errors.hpp"
#include "bamforge/numerics.hpp"

namespace bamforge {

namespace layers {

ad::Var mha(ad::Var h, ad::Var wq, ad::Var wk, ad::Var wv, ad::Var wo, std::size_t n_heads,
            std::size_t seq_len) {
  ad::Var keys = ad::rope(ad::matmul(h, wk), n_heads, seq_len);
  ad::Var values = ad::matmul(h, wv);
  return mha_with_kv(h, wq, keys, values, wo, n_heads, seq_len);
}

ad::Var mha_with_kv(ad::Var h, ad::Var wq, ad::Var keys, ad::Var values, ad::Var wo,
                    std::size_t n_heads, std::size_t seq_len) {
  ad::Var queries = ad::rope(ad::matmul(h, wq), n_heads, seq_len);
  ad::Var heads = ad::attention(queries, keys, values, n_heads, seq_len);
  return ad::matmul(heads, wo);
}

ad::Var ffn(ad::Var h, ad::Var w_gate, ad::Var w_up, ad::Var w_down) {
  return ad::matmul(ad::swiglu(ad::matmul(h, w_gate), ad::matmul(h, w_up)), w_down);
}

}  // namespace layers

namespace {

void require_square(const Tensor& w, std::size_t d, const char* name) {
  if (w.rank() != 2 || w.rows() != d || w.cols() != d)
    throw ShapeError(std::string("attention weight ") + name + " must be d_model x d_model");
}

Tensor as_matrix(const Tensor& x) {
  if (x.rank() == 2) return x;
  if (x.rank() == 1) return Tensor({1, x.size()}, std::vector<double>(x.data().begin(), x.data().end()));
  throw ShapeError("expected a vector or matrix input");
}

}  // namespace

Tensor mha_forward(const Tensor& x, const AttentionWeights& w, std::size_t n_heads) {
  const Tensor xm = as_matrix(x);
  const std::size_t d = xm.cols();
  require_square(w.q, d, "q");
  require_square(w.k, d, "k");
  require_square(w.v, d, "v");
  require_square(w.o, d, "o");
  ad::Tape tape;
  auto out = layers::mha(tape.constant(xm), tape.constant(w.q), tape.constant(w.k),
                         tape.constant(w.v), tape.constant(w.o), n_heads, xm.rows());
  return out.value();
}

Tensor ffn_forward(const Tensor& x, const FfnWeights& w) {
  const Tensor xm = as_matrix(x);
  ad::Tape tape;
  auto out = layers::ffn(tape.constant(xm), tape.constant(w.gate), tape.constant(w.up),
                         tape.constant(w.down));
  if (x.rank() == 1) return Tensor({out.value().size()}, std::vector<double>(out.value().data().begin(), out.value().data().end()));
  return out.value();
}

Tensor parallel_block_forward(const Tensor& x, const Tensor& norm_gain, const AttentionWeights& attn,
                              const FfnWeights& ffn, std::size_t n_heads) {
  ad::Tape tape;
  ad::Var xv = tape.constant(x);
  ad::Var h = ad::scale_norm(xv, tape.constant(norm_gain), kNormEps);
  ad::Var a = layers::mha(h, tape.constant(attn.q), tape.constant(attn.k), tape.constant(attn.v),
                          tape.constant(attn.o), n_heads, x.rows());
  ad::Var f = layers::ffn(h, tape.constant(ffn.gate), tape.constant(ffn.up), tape.constant(ffn.down));
  return ad::add(ad::add(xv, a), f).value();
}

}  // namespace bamforge
