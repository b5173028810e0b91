// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "bamforge/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "bamforge/errors.hpp"
#include "bamforge/kernels.hpp"

namespace bamforge::ad {

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

void Tape::round_if_single(Tensor& t) const {
  if (precision_ != Precision::f32) return;
  for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("non-finite value in tape leaf");
  round_if_single(value);
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(backward));
}

Var Tape::push(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) throw NumericError("kernel produced a non-finite value");
  round_if_single(value);
  bool needs = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw Error("tape op mixes vars from different tapes");
    needs = needs || requires_grad(in.id());
  }
  nodes_.push_back(Node{std::move(value), Tensor{}, needs, needs ? std::move(backward) : nullptr});
  return Var(this, nodes_.size() - 1);
}

// Empty when nothing flowed into the node.
const Tensor& Tape::grad(std::size_t id) const { return nodes_[id].grad; }

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.shape() != node.value.shape()) node.grad = Tensor(node.value.shape());
  return node.grad;
}

void Tape::backward(Var out) {
  if (out.value().size() != 1) throw ShapeError("backward() needs a single-element output");
  if (!requires_grad(out.id())) return;
  grad_buffer(out.id())[0] = 1.0;
  for (std::size_t id = out.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.backward || node.grad.empty()) continue;
    node.backward(*this, node.grad);
  }
}

namespace {

Tensor& gbuf(Tape& t, Var v) { return t.grad_buffer(v.id()); }

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw ShapeError("matmul: inner dims differ " + shape_string(av.shape()) + " * " +
                     shape_string(bv.shape()));
  }
  Tensor out({m, n});
  kernels::matmul(av.ptr(), bv.ptr(), out.ptr(), m, k, n, false);
  return a.tape().push(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    if (a.requires_grad())
      kernels::matmul_nt(g.ptr(), b.value().ptr(), gbuf(t, a).ptr(), m, n, k, true);
    if (b.requires_grad())
      kernels::matmul_tn(a.value().ptr(), g.ptr(), gbuf(t, b).ptr(), m, k, n, true);
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul_nt");
  require_matrix(bv, "matmul_nt");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  if (bv.cols() != k) {
    throw ShapeError("matmul_nt: inner dims differ " + shape_string(av.shape()) + " * " +
                     shape_string(bv.shape()) + "^T");
  }
  Tensor out({m, n});
  kernels::matmul_nt(av.ptr(), bv.ptr(), out.ptr(), m, k, n, false);
  return a.tape().push(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    if (a.requires_grad()) kernels::matmul(g.ptr(), b.value().ptr(), gbuf(t, a).ptr(), m, n, k, true);
    if (b.requires_grad()) kernels::matmul_tn(g.ptr(), a.value().ptr(), gbuf(t, b).ptr(), m, n, k, true);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    for (Var in : {a, b}) {
      if (!in.requires_grad()) continue;
      Tensor& gi = gbuf(t, in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  return a.tape().push(std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
    Tensor& ga = gbuf(t, a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (a.requires_grad()) {
      Tensor& ga = gbuf(t, a);
      const Tensor& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      Tensor& gb = gbuf(t, b);
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var mul_const(Var a, const Tensor& mask) {
  require_same_shape(a.value(), mask, "mul_const");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return a.tape().push(std::move(out), {a}, [a, mask](Tape& t, const Tensor& g) {
    Tensor& ga = gbuf(t, a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

Var embedding(Var table, std::span<const std::int32_t> tokens) {
  const Tensor& tv = table.value();
  require_matrix(tv, "embedding");
  const std::size_t vocab = tv.rows(), d = tv.cols();
  std::vector<std::int32_t> ids(tokens.begin(), tokens.end());
  Tensor out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab)
      throw IndexError("token id " + std::to_string(ids[r]) + " outside vocab " + std::to_string(vocab));
    std::copy_n(tv.row(ids[r]).begin(), d, out.row(r).begin());
  }
  return table.tape().push(std::move(out), {table}, [table, ids, d](Tape& t, const Tensor& g) {
    Tensor& gt = gbuf(t, table);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      auto dst = gt.row(ids[r]);
      for (std::size_t c = 0; c < d; ++c) dst[c] += g.at(r, c);
    }
  });
}

Var scale_norm(Var x, Var g, double eps) {
  const Tensor& xv = x.value();
  const Tensor& gv = g.value();
  const std::size_t rows = xv.rows(), d = xv.cols();
  if (gv.size() != d) throw ShapeError("scale_norm: gain length differs from feature width");
  Tensor out(xv.shape());
  std::vector<double> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto xr = xv.row(r);
    double ms = 0.0;
    for (double v : xr) ms += v * v;
    ms /= static_cast<double>(d);
    inv[r] = 1.0 / std::sqrt(ms + eps);
    auto yr = out.row(r);
    for (std::size_t c = 0; c < d; ++c) yr[c] = xr[c] * inv[r] * gv[c];
  }
  return x.tape().push(std::move(out), {x, g}, [x, g, inv, rows, d](Tape& t, const Tensor& gy) {
    const Tensor& xv = x.value();
    const Tensor& gv = g.value();
    if (g.requires_grad()) {
      Tensor& gg = gbuf(t, g);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) gg[c] += gy.at(r, c) * xv.at(r, c) * inv[r];
    }
    if (x.requires_grad()) {
      Tensor& gx = gbuf(t, x);
      for (std::size_t r = 0; r < rows; ++r) {
        // y = x * s * g, s = (mean(x^2)+eps)^-1/2, ds/dx_c = -s^3 x_c / d
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += gy.at(r, c) * gv[c] * xv.at(r, c);
        const double s = inv[r];
        const double coef = s * s * s * dot / static_cast<double>(d);
        for (std::size_t c = 0; c < d; ++c)
          gx.at(r, c) += gy.at(r, c) * gv[c] * s - coef * xv.at(r, c);
      }
    }
  });
}

Var swiglu(Var gate, Var up) {
  require_same_shape(gate.value(), up.value(), "swiglu");
  const Tensor& gv = gate.value();
  const Tensor& uv = up.value();
  Tensor out(gv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double sig = 1.0 / (1.0 + std::exp(-gv[i]));
    out[i] = gv[i] * sig * uv[i];
  }
  return gate.tape().push(std::move(out), {gate, up}, [gate, up](Tape& t, const Tensor& g) {
    const Tensor& gv = gate.value();
    const Tensor& uv = up.value();
    Tensor* gg = gate.requires_grad() ? &gbuf(t, gate) : nullptr;
    Tensor* gu = up.requires_grad() ? &gbuf(t, up) : nullptr;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double z = gv[i];
      const double sig = 1.0 / (1.0 + std::exp(-z));
      if (gu) (*gu)[i] += g[i] * z * sig;
      if (gg) (*gg)[i] += g[i] * uv[i] * sig * (1.0 + z * (1.0 - sig));
    }
  });
}

Var rope(Var x, std::size_t n_heads, std::size_t seq_len) {
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), width = xv.cols();
  if (n_heads == 0 || width % n_heads != 0) throw ShapeError("rope: width not divisible by heads");
  const std::size_t hd = width / n_heads;
  if (hd % 2 != 0) throw ConfigError("rope: head dimension must be even");
  Tensor out(xv.shape());
  kernels::rope(xv.ptr(), out.ptr(), rows, n_heads, hd, seq_len, false);
  return x.tape().push(std::move(out), {x}, [x, rows, n_heads, hd, seq_len](Tape& t, const Tensor& g) {
    Tensor back(g.shape());
    kernels::rope(g.ptr(), back.ptr(), rows, n_heads, hd, seq_len, true);
    Tensor& gx = gbuf(t, x);
    for (std::size_t i = 0; i < back.size(); ++i) gx[i] += back[i];
  });
}

Var attention(Var q, Var k, Var v, std::size_t n_heads, std::size_t seq_len) {
  require_same_shape(q.value(), k.value(), "attention");
  require_same_shape(q.value(), v.value(), "attention");
  const Tensor& qv = q.value();
  require_matrix(qv, "attention");
  const std::size_t rows = qv.rows(), width = qv.cols();
  if (seq_len == 0 || rows % seq_len != 0) throw ShapeError("attention: rows not a multiple of seq_len");
  if (width % n_heads != 0) throw ShapeError("attention: width not divisible by heads");
  kernels::AttentionDims dims{rows / seq_len, seq_len, n_heads, width / n_heads};
  Tensor out(qv.shape());
  std::vector<double> probs(dims.prob_size());
  kernels::attention_forward(qv.ptr(), k.value().ptr(), v.value().ptr(), out.ptr(), probs.data(), dims);
  return q.tape().push(std::move(out), {q, k, v},
                       [q, k, v, dims, probs = std::move(probs)](Tape& t, const Tensor& g) {
                         Tensor dq(g.shape()), dk(g.shape()), dv(g.shape());
                         kernels::attention_backward(q.value().ptr(), k.value().ptr(),
                                                     v.value().ptr(), probs.data(), g.ptr(),
                                                     dq.ptr(), dk.ptr(), dv.ptr(), dims);
                         const Tensor* parts[] = {&dq, &dk, &dv};
                         const Var ins[] = {q, k, v};
                         for (int i = 0; i < 3; ++i) {
                           if (!ins[i].requires_grad()) continue;
                           Tensor& gi = gbuf(t, ins[i]);
                           for (std::size_t e = 0; e < gi.size(); ++e) gi[e] += (*parts[i])[e];
                         }
                       });
}

Var softmax_rows(Var logits) {
  const Tensor& lv = logits.value();
  const std::size_t rows = lv.rows(), n = lv.cols();
  Tensor out(lv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = lv.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double denom = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      o[c] = std::exp(in[c] - mx);
      denom += o[c];
    }
    for (double& v : o) v /= denom;
  }
  Tensor saved = out;
  return logits.tape().push(std::move(out), {logits},
                            [logits, p = std::move(saved), rows, n](Tape& t, const Tensor& g) {
                              Tensor& gl = gbuf(t, logits);
                              for (std::size_t r = 0; r < rows; ++r) {
                                double dot = 0.0;
                                for (std::size_t c = 0; c < n; ++c) dot += g.at(r, c) * p.at(r, c);
                                for (std::size_t c = 0; c < n; ++c)
                                  gl.at(r, c) += p.at(r, c) * (g.at(r, c) - dot);
                              }
                            });
}

Var gate_rows(Var y, Var gates, std::size_t col) {
  const Tensor& yv = y.value();
  const Tensor& gv = gates.value();
  if (gv.rows() != yv.rows() || col >= gv.cols()) throw ShapeError("gate_rows: gate matrix does not match rows");
  const std::size_t rows = yv.rows(), n = yv.cols();
  Tensor out = yv;
  for (std::size_t r = 0; r < rows; ++r) {
    const double w = gv.at(r, col);
    for (double& v : out.row(r)) v *= w;
  }
  return y.tape().push(std::move(out), {y, gates}, [y, gates, col, rows, n](Tape& t, const Tensor& g) {
    const Tensor& gv = gates.value();
    if (y.requires_grad()) {
      Tensor& gy = gbuf(t, y);
      for (std::size_t r = 0; r < rows; ++r) {
        const double w = gv.at(r, col);
        for (std::size_t c = 0; c < n; ++c) gy.at(r, c) += g.at(r, c) * w;
      }
    }
    if (gates.requires_grad()) {
      Tensor& gg = gbuf(t, gates);
      const Tensor& yv = y.value();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < n; ++c) dot += g.at(r, c) * yv.at(r, c);
        gg.at(r, col) += dot;
      }
    }
  });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor out({idx.size(), n});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= xv.rows()) throw IndexError("gather_rows: row index out of range");
    std::copy_n(xv.row(idx[i]).begin(), n, out.row(i).begin());
  }
  return x.tape().push(std::move(out), {x}, [x, idx, n](Tape& t, const Tensor& g) {
    Tensor& gx = gbuf(t, x);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < n; ++c) gx.at(idx[i], c) += g.at(i, c);
  });
}

Var scatter_rows(Var x, std::span<const std::size_t> rows, std::size_t out_rows) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols();
  if (rows.size() != xv.rows()) throw ShapeError("scatter_rows: index count differs from rows");
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor out({out_rows, n});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= out_rows) throw IndexError("scatter_rows: row index out of range");
    auto dst = out.row(idx[i]);
    auto src = xv.row(i);
    for (std::size_t c = 0; c < n; ++c) dst[c] += src[c];
  }
  return x.tape().push(std::move(out), {x}, [x, idx, n](Tape& t, const Tensor& g) {
    Tensor& gx = gbuf(t, x);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < n; ++c) gx.at(i, c) += g.at(idx[i], c);
  });
}

Var cross_entropy(Var logits, std::span<const std::int32_t> targets) {
  const Tensor& lv = logits.value();
  const std::size_t rows = lv.rows(), vocab = lv.cols();
  if (targets.size() != rows) throw ShapeError("cross_entropy: one target per row required");
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  Tensor probs(lv.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= vocab)
      throw IndexError("target id " + std::to_string(tgt[r]) + " outside vocab " + std::to_string(vocab));
    auto in = lv.row(r);
    auto p = probs.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double denom = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) {
      p[c] = std::exp(in[c] - mx);
      denom += p[c];
    }
    for (double& v : p) v /= denom;
    total += -(in[tgt[r]] - mx - std::log(denom));
  }
  Tensor out({1}, total / static_cast<double>(rows));
  return logits.tape().push(std::move(out), {logits},
                            [logits, tgt, p = std::move(probs), rows](Tape& t, const Tensor& g) {
                              Tensor& gl = gbuf(t, logits);
                              const double s = g[0] / static_cast<double>(rows);
                              for (std::size_t r = 0; r < rows; ++r) {
                                auto dst = gl.row(r);
                                auto pr = p.row(r);
                                for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += s * pr[c];
                                dst[tgt[r]] -= s;
                              }
                            });
}

Var lse_squared_mean(Var logits) {
  const Tensor& lv = logits.value();
  const std::size_t rows = lv.rows(), n = lv.cols();
  if (rows == 0) throw ShapeError("lse_squared_mean: empty batch");
  std::vector<double> lse(rows);
  Tensor probs(lv.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = lv.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double denom = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      probs.at(r, c) = std::exp(in[c] - mx);
      denom += probs.at(r, c);
    }
    for (double& v : probs.row(r)) v /= denom;
    lse[r] = mx + std::log(denom);
    total += lse[r] * lse[r];
  }
  Tensor out({1}, total / static_cast<double>(rows));
  return logits.tape().push(std::move(out), {logits},
                            [logits, lse, p = std::move(probs), rows, n](Tape& t, const Tensor& g) {
                              Tensor& gl = gbuf(t, logits);
                              for (std::size_t r = 0; r < rows; ++r) {
                                const double s = g[0] * 2.0 * lse[r] / static_cast<double>(rows);
                                for (std::size_t c = 0; c < n; ++c) gl.at(r, c) += s * p.at(r, c);
                              }
                            });
}

Var load_balance(Var gates, std::span<const double> fractions) {
  const Tensor& gv = gates.value();
  const std::size_t rows = gv.rows(), n = gv.cols();
  if (fractions.size() != n) throw ShapeError("load_balance: one fraction per expert required");
  if (rows == 0) throw ShapeError("load_balance: empty batch");
  std::vector<double> f(fractions.begin(), fractions.end());
  std::vector<double> mass(n, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c) mass[c] += gv.at(r, c);
  double total = 0.0;
  for (std::size_t c = 0; c < n; ++c) total += f[c] * (mass[c] / static_cast<double>(rows));
  Tensor out({1}, static_cast<double>(n) * total);
  return gates.tape().push(std::move(out), {gates}, [gates, f, rows, n](Tape& t, const Tensor& g) {
    Tensor& gg = gbuf(t, gates);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < n; ++c)
        gg.at(r, c) += g[0] * static_cast<double>(n) * f[c] / static_cast<double>(rows);
  });
}

Var sum(std::span<const Var> scalars) {
  if (scalars.empty()) throw ShapeError("sum: no terms");
  double total = 0.0;
  for (const Var& s : scalars) {
    if (s.value().size() != 1) throw ShapeError("sum: expects single-element terms");
    total += s.value()[0];
  }
  std::vector<Var> ins(scalars.begin(), scalars.end());
  return scalars.front().tape().push(Tensor({1}, total), scalars, [ins](Tape& t, const Tensor& g) {
    for (const Var& in : ins)
      if (in.requires_grad()) gbuf(t, in)[0] += g[0];
  });
}

}  // namespace bamforge::ad
