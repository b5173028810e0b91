// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "bamforge/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <vector>

namespace bamforge::kernels {

namespace {

using Index = std::ptrdiff_t;

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1 << 15;

inline bool worth_parallel(std::size_t work) { return work >= kParallelWork; }

void transpose(const double* src, double* dst, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate) {
#pragma omp parallel for schedule(static) if (worth_parallel(m * k * n))
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    double* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aval = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aval * brow[j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  std::vector<double> bt(k * n);
  transpose(b, bt.data(), n, k);
  matmul(a, bt.data(), c, m, k, n, accumulate);
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  std::vector<double> at(k * m);
  transpose(a, at.data(), m, k);
  matmul(at.data(), b, c, k, m, n, accumulate);
}

void attention_forward(const double* q, const double* k, const double* v, double* out,
                       double* probs, const AttentionDims& dims) {
  const std::size_t T = dims.seq_len;
  const std::size_t hd = dims.head_dim;
  const std::size_t width = dims.width();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Index units = static_cast<Index>(dims.n_seq * dims.n_heads);

#pragma omp parallel if (worth_parallel(dims.n_seq * dims.n_heads * T * T * hd))
  {
    std::vector<double> kt(hd * T);
    std::vector<double> scores(T);
#pragma omp for schedule(static)
    for (Index u = 0; u < units; ++u) {
      const std::size_t seq = static_cast<std::size_t>(u) / dims.n_heads;
      const std::size_t head = static_cast<std::size_t>(u) % dims.n_heads;
      const std::size_t row0 = seq * T;
      const std::size_t col0 = head * hd;
      for (std::size_t s = 0; s < T; ++s)
        for (std::size_t c = 0; c < hd; ++c) kt[c * T + s] = k[(row0 + s) * width + col0 + c];

      double* p_block = probs + static_cast<std::size_t>(u) * T * T;
      for (std::size_t t = 0; t < T; ++t) {
        const double* qrow = q + (row0 + t) * width + col0;
        const std::size_t len = t + 1;
        std::fill(scores.begin(), scores.begin() + len, 0.0);
        for (std::size_t c = 0; c < hd; ++c) {
          const double qc = qrow[c];
          const double* krow = kt.data() + c * T;
          for (std::size_t s = 0; s < len; ++s) scores[s] += qc * krow[s];
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < len; ++s) {
          scores[s] *= scale;
          mx = std::max(mx, scores[s]);
        }
        double denom = 0.0;
        for (std::size_t s = 0; s < len; ++s) {
          scores[s] = std::exp(scores[s] - mx);
          denom += scores[s];
        }
        double* prow = p_block + t * T;
        std::fill(prow, prow + T, 0.0);
        double* orow = out + (row0 + t) * width + col0;
        std::fill(orow, orow + hd, 0.0);
        for (std::size_t s = 0; s < len; ++s) {
          const double w = scores[s] / denom;
          prow[s] = w;
          const double* vrow = v + (row0 + s) * width + col0;
          for (std::size_t c = 0; c < hd; ++c) orow[c] += w * vrow[c];
        }
      }
    }
  }
}

void attention_backward(const double* q, const double* k, const double* v,
                        const double* probs, const double* dout, double* dq, double* dk,
                        double* dv, const AttentionDims& dims) {
  const std::size_t T = dims.seq_len;
  const std::size_t hd = dims.head_dim;
  const std::size_t width = dims.width();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Index units = static_cast<Index>(dims.n_seq * dims.n_heads);

#pragma omp parallel if (worth_parallel(dims.n_seq * dims.n_heads * T * T * hd))
  {
    std::vector<double> vt(hd * T);
    std::vector<double> dscore(T);
#pragma omp for schedule(static)
    for (Index u = 0; u < units; ++u) {
      const std::size_t seq = static_cast<std::size_t>(u) / dims.n_heads;
      const std::size_t head = static_cast<std::size_t>(u) % dims.n_heads;
      const std::size_t row0 = seq * T;
      const std::size_t col0 = head * hd;
      for (std::size_t s = 0; s < T; ++s)
        for (std::size_t c = 0; c < hd; ++c) vt[c * T + s] = v[(row0 + s) * width + col0 + c];

      const double* p_block = probs + static_cast<std::size_t>(u) * T * T;
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t len = t + 1;
        const double* prow = p_block + t * T;
        const double* gout = dout + (row0 + t) * width + col0;
        // dV[s] += p_ts * dout_t ; dP_ts = dout_t . v_s
        std::fill(dscore.begin(), dscore.begin() + len, 0.0);
        for (std::size_t c = 0; c < hd; ++c) {
          const double g = gout[c];
          const double* vcol = vt.data() + c * T;
          for (std::size_t s = 0; s < len; ++s) dscore[s] += g * vcol[s];
        }
        for (std::size_t s = 0; s < len; ++s) {
          double* dvrow = dv + (row0 + s) * width + col0;
          const double w = prow[s];
          for (std::size_t c = 0; c < hd; ++c) dvrow[c] += w * gout[c];
        }
        double dot = 0.0;
        for (std::size_t s = 0; s < len; ++s) dot += dscore[s] * prow[s];
        const double* qrow = q + (row0 + t) * width + col0;
        double* dqrow = dq + (row0 + t) * width + col0;
        for (std::size_t s = 0; s < len; ++s) {
          const double ds = prow[s] * (dscore[s] - dot) * scale;
          const double* krow = k + (row0 + s) * width + col0;
          double* dkrow = dk + (row0 + s) * width + col0;
          for (std::size_t c = 0; c < hd; ++c) {
            dqrow[c] += ds * krow[c];
            dkrow[c] += ds * qrow[c];
          }
        }
      }
    }
  }
}

void rope(const double* x, double* y, std::size_t rows, std::size_t n_heads,
          std::size_t head_dim, std::size_t seq_len, bool inverse) {
  const std::size_t half = head_dim / 2;
  std::vector<double> cos_table(seq_len * half);
  std::vector<double> sin_table(seq_len * half);
  for (std::size_t pos = 0; pos < seq_len; ++pos) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq =
          std::pow(kRopeBase, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      const double angle = static_cast<double>(pos) * freq;
      cos_table[pos * half + i] = std::cos(angle);
      sin_table[pos * half + i] = inverse ? -std::sin(angle) : std::sin(angle);
    }
  }
  const std::size_t width = n_heads * head_dim;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t pos = r % seq_len;
    const double* cs = cos_table.data() + pos * half;
    const double* sn = sin_table.data() + pos * half;
    for (std::size_t h = 0; h < n_heads; ++h) {
      const double* xin = x + r * width + h * head_dim;
      double* yout = y + r * width + h * head_dim;
      for (std::size_t i = 0; i < half; ++i) {
        const double a = xin[2 * i];
        const double b = xin[2 * i + 1];
        yout[2 * i] = a * cs[i] - b * sn[i];
        yout[2 * i + 1] = a * sn[i] + b * cs[i];
      }
    }
  }
}

namespace serial {

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) acc += a[i * k + p] * b[i * n + j];
      c[p * n + j] = accumulate ? c[p * n + j] + acc : acc;
    }
}

void attention_forward(const double* q, const double* k, const double* v, double* out,
                       double* probs, const AttentionDims& dims) {
  const std::size_t T = dims.seq_len;
  const std::size_t hd = dims.head_dim;
  const std::size_t width = dims.width();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t seq = 0; seq < dims.n_seq; ++seq)
    for (std::size_t h = 0; h < dims.n_heads; ++h) {
      double* p_block = probs + (seq * dims.n_heads + h) * T * T;
      for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> s(t + 1);
        for (std::size_t j = 0; j <= t; ++j) {
          double dot = 0.0;
          for (std::size_t c = 0; c < hd; ++c)
            dot += q[(seq * T + t) * width + h * hd + c] * k[(seq * T + j) * width + h * hd + c];
          s[j] = dot * scale;
        }
        const double mx = *std::max_element(s.begin(), s.end());
        double denom = 0.0;
        for (double& x : s) {
          x = std::exp(x - mx);
          denom += x;
        }
        for (std::size_t j = 0; j < T; ++j) p_block[t * T + j] = j <= t ? s[j] / denom : 0.0;
        for (std::size_t c = 0; c < hd; ++c) {
          double acc = 0.0;
          for (std::size_t j = 0; j <= t; ++j)
            acc += p_block[t * T + j] * v[(seq * T + j) * width + h * hd + c];
          out[(seq * T + t) * width + h * hd + c] = acc;
        }
      }
    }
}

void attention_backward(const double* q, const double* k, const double* v,
                        const double* probs, const double* dout, double* dq, double* dk,
                        double* dv, const AttentionDims& dims) {
  const std::size_t T = dims.seq_len;
  const std::size_t hd = dims.head_dim;
  const std::size_t width = dims.width();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t seq = 0; seq < dims.n_seq; ++seq)
    for (std::size_t h = 0; h < dims.n_heads; ++h) {
      const double* p_block = probs + (seq * dims.n_heads + h) * T * T;
      auto at = [&](std::size_t row, std::size_t c) { return (seq * T + row) * width + h * hd + c; };
      for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> dp(t + 1);
        for (std::size_t j = 0; j <= t; ++j) {
          double dot = 0.0;
          for (std::size_t c = 0; c < hd; ++c) dot += dout[at(t, c)] * v[at(j, c)];
          dp[j] = dot;
          for (std::size_t c = 0; c < hd; ++c) dv[at(j, c)] += p_block[t * T + j] * dout[at(t, c)];
        }
        double row_dot = 0.0;
        for (std::size_t j = 0; j <= t; ++j) row_dot += dp[j] * p_block[t * T + j];
        for (std::size_t j = 0; j <= t; ++j) {
          const double ds = p_block[t * T + j] * (dp[j] - row_dot) * scale;
          for (std::size_t c = 0; c < hd; ++c) {
            dq[at(t, c)] += ds * k[at(j, c)];
            dk[at(j, c)] += ds * q[at(t, c)];
          }
        }
      }
    }
}

}  // namespace serial

void configure_threads_from_env() {
  if (const char* env = std::getenv("BAMFORGE_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) omp_set_num_threads(n);
    } catch (const std::exception&) {
    }
  }
}

int max_threads() { return omp_get_max_threads(); }

}  // namespace bamforge::kernels
