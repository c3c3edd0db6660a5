// SPDX-License-Identifier: Apache-2.0
//
// OpenMP kernels. Work is split over independent output rows (or columns for
// the reductions that run over rows), and each element is summed in the same
// order as the serial reference.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ql/kernels.hpp"

namespace ql::kernels {

using idx = std::int64_t;

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <typename T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
#pragma omp parallel
  {
    std::vector<T> row(n);
#pragma omp for schedule(static)
    for (idx i = 0; i < static_cast<idx>(m); ++i) {
      std::fill(row.begin(), row.end(), T(0));
      const T* ai = a.data() + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = ai[p];
        const T* bp = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) row[j] += av * bp[j];
      }
      T* ci = c.data() + i * n;
      if (accumulate) {
        for (std::size_t j = 0; j < n; ++j) ci[j] = ci[j] + row[j];
      } else {
        std::copy(row.begin(), row.end(), ci);
      }
    }
  }
}

template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (idx i = 0; i < static_cast<idx>(m); ++i) {
    const T* ai = a.data() + i * k;
    T* ci = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b.data() + j * k;
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] = accumulate ? ci[j] + s : s;
    }
  }
}

template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
#pragma omp parallel
  {
    std::vector<T> row(n);
#pragma omp for schedule(static)
    for (idx i = 0; i < static_cast<idx>(m); ++i) {
      std::fill(row.begin(), row.end(), T(0));
      for (std::size_t p = 0; p < k; ++p) {
        const T av = a[p * m + i];
        const T* bp = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) row[j] += av * bp[j];
      }
      T* ci = c.data() + i * n;
      if (accumulate) {
        for (std::size_t j = 0; j < n; ++j) ci[j] = ci[j] + row[j];
      } else {
        std::copy(row.begin(), row.end(), ci);
      }
    }
  }
}

template <typename T>
void softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static)
  for (idx r = 0; r < static_cast<idx>(rows); ++r) {
    const T* xr = x.data() + r * cols;
    T* yr = y.data() + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, xr[j]);
    T s = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      s += yr[j];
    }
    for (std::size_t j = 0; j < cols; ++j) yr[j] /= s;
  }
}

template <typename T>
void softmax_rows_backward(std::span<const T> y, std::span<const T> dy, std::span<T> dx,
                           std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static)
  for (idx r = 0; r < static_cast<idx>(rows); ++r) {
    const std::size_t o = r * cols;
    T dot = 0;
    for (std::size_t j = 0; j < cols; ++j) dot += dy[o + j] * y[o + j];
    for (std::size_t j = 0; j < cols; ++j) dx[o + j] += y[o + j] * (dy[o + j] - dot);
  }
}

template <typename T>
void layer_norm_rows(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                     std::span<T> y, std::span<T> xhat, std::span<T> inv_std, std::size_t rows,
                     std::size_t cols, double eps) {
#pragma omp parallel for schedule(static)
  for (idx r = 0; r < static_cast<idx>(rows); ++r) {
    const std::size_t o = r * cols;
    T mu = 0;
    for (std::size_t j = 0; j < cols; ++j) mu += x[o + j];
    mu /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      const T d = x[o + j] - mu;
      var += d * d;
    }
    var /= static_cast<T>(cols);
    const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
    inv_std[r] = is;
    for (std::size_t j = 0; j < cols; ++j) {
      xhat[o + j] = (x[o + j] - mu) * is;
      y[o + j] = xhat[o + j] * gain[j] + bias[j];
    }
  }
}

template <typename T>
void layer_norm_rows_backward(std::span<const T> dy, std::span<const T> xhat,
                              std::span<const T> inv_std, std::span<const T> gain,
                              std::span<T> dx, std::span<T> dgain, std::span<T> dbias,
                              std::size_t rows, std::size_t cols) {
  if (!dx.empty()) {
#pragma omp parallel
    {
      std::vector<T> dxh(cols);
#pragma omp for schedule(static)
      for (idx r = 0; r < static_cast<idx>(rows); ++r) {
        const std::size_t o = r * cols;
        T m1 = 0;
        T m2 = 0;
        for (std::size_t j = 0; j < cols; ++j) {
          dxh[j] = dy[o + j] * gain[j];
          m1 += dxh[j];
          m2 += dxh[j] * xhat[o + j];
        }
        m1 /= static_cast<T>(cols);
        m2 /= static_cast<T>(cols);
        for (std::size_t j = 0; j < cols; ++j)
          dx[o + j] += inv_std[r] * (dxh[j] - m1 - xhat[o + j] * m2);
      }
    }
  }
  if (dgain.empty() && dbias.empty()) return;
#pragma omp parallel for schedule(static)
  for (idx j = 0; j < static_cast<idx>(cols); ++j) {
    for (std::size_t r = 0; r < rows; ++r) {
      if (!dgain.empty()) dgain[j] += dy[r * cols + j] * xhat[r * cols + j];
      if (!dbias.empty()) dbias[j] += dy[r * cols + j];
    }
  }
}

template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<const std::uint8_t> mask, std::span<T> out, std::span<T> probs,
                       const AttentionDims& d) {
  const std::size_t dh = d.d_qk / d.heads;
  const std::size_t dvh = d.d_v / d.heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const T neg_inf = -std::numeric_limits<T>::infinity();
  const idx work = static_cast<idx>(d.heads * d.n_q);
#pragma omp parallel for schedule(static)
  for (idx w = 0; w < work; ++w) {
    const std::size_t h = static_cast<std::size_t>(w) / d.n_q;
    const std::size_t i = static_cast<std::size_t>(w) % d.n_q;
    T* p = probs.data() + (h * d.n_q + i) * d.n_k;
    const T* qi = q.data() + i * d.d_qk + h * dh;
    T mx = neg_inf;
    for (std::size_t j = 0; j < d.n_k; ++j) {
      if (!mask.empty() && mask[j] == 0) {
        p[j] = neg_inf;
        continue;
      }
      const T* kj = k.data() + j * d.d_qk + h * dh;
      T s = 0;
      for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
      p[j] = s * scale;
      mx = std::max(mx, p[j]);
    }
    T total = 0;
    for (std::size_t j = 0; j < d.n_k; ++j) {
      p[j] = (!mask.empty() && mask[j] == 0) ? T(0) : std::exp(p[j] - mx);
      total += p[j];
    }
    for (std::size_t j = 0; j < d.n_k; ++j) p[j] /= total;
    T* oi = out.data() + i * d.d_v + h * dvh;
    for (std::size_t c = 0; c < dvh; ++c) {
      T acc = 0;
      for (std::size_t j = 0; j < d.n_k; ++j) acc += p[j] * v[j * d.d_v + h * dvh + c];
      oi[c] = acc;
    }
  }
}

template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const T> probs, std::span<const T> dout, std::span<T> dq,
                        std::span<T> dk, std::span<T> dv, const AttentionDims& d) {
  const std::size_t dh = d.d_qk / d.heads;
  const std::size_t dvh = d.d_v / d.heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<T> ds(d.heads * d.n_q * d.n_k);
  const idx rows = static_cast<idx>(d.heads * d.n_q);

#pragma omp parallel for schedule(static)
  for (idx w = 0; w < rows; ++w) {
    const std::size_t h = static_cast<std::size_t>(w) / d.n_q;
    const std::size_t i = static_cast<std::size_t>(w) % d.n_q;
    const T* p = probs.data() + w * d.n_k;
    T* s = ds.data() + w * d.n_k;
    T rowdot = 0;
    for (std::size_t j = 0; j < d.n_k; ++j) {
      T dp = 0;
      for (std::size_t c = 0; c < dvh; ++c) dp += dout[i * d.d_v + h * dvh + c] * v[j * d.d_v + h * dvh + c];
      s[j] = dp;
      rowdot += p[j] * dp;
    }
    for (std::size_t j = 0; j < d.n_k; ++j) s[j] = p[j] * (s[j] - rowdot);
  }

  if (!dq.empty()) {
#pragma omp parallel for schedule(static)
    for (idx w = 0; w < rows; ++w) {
      const std::size_t h = static_cast<std::size_t>(w) / d.n_q;
      const std::size_t i = static_cast<std::size_t>(w) % d.n_q;
      const T* s = ds.data() + w * d.n_k;
      for (std::size_t c = 0; c < dh; ++c) {
        T acc = 0;
        for (std::size_t j = 0; j < d.n_k; ++j) acc += s[j] * k[j * d.d_qk + h * dh + c];
        dq[i * d.d_qk + h * dh + c] += scale * acc;
      }
    }
  }

  if (dk.empty() && dv.empty()) return;
  const idx key_rows = static_cast<idx>(d.heads * d.n_k);
#pragma omp parallel for schedule(static)
  for (idx w = 0; w < key_rows; ++w) {
    const std::size_t h = static_cast<std::size_t>(w) / d.n_k;
    const std::size_t j = static_cast<std::size_t>(w) % d.n_k;
    if (!dk.empty()) {
      for (std::size_t c = 0; c < dh; ++c) {
        T acc = 0;
        for (std::size_t i = 0; i < d.n_q; ++i)
          acc += ds[(h * d.n_q + i) * d.n_k + j] * q[i * d.d_qk + h * dh + c];
        dk[j * d.d_qk + h * dh + c] += scale * acc;
      }
    }
    if (!dv.empty()) {
      for (std::size_t c = 0; c < dvh; ++c) {
        T acc = 0;
        for (std::size_t i = 0; i < d.n_q; ++i)
          acc += probs[(h * d.n_q + i) * d.n_k + j] * dout[i * d.d_v + h * dvh + c];
        dv[j * d.d_v + h * dvh + c] += acc;
      }
    }
  }
}

#define QL_INSTANTIATE(T)                                                                        \
  template void matmul_nn<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,  \
                             std::size_t, std::size_t, bool);                                     \
  template void matmul_nt<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,  \
                             std::size_t, std::size_t, bool);                                     \
  template void matmul_tn<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,  \
                             std::size_t, std::size_t, bool);                                     \
  template void softmax_rows<T>(std::span<const T>, std::span<T>, std::size_t, std::size_t);     \
  template void softmax_rows_backward<T>(std::span<const T>, std::span<const T>, std::span<T>,   \
                                         std::size_t, std::size_t);                              \
  template void layer_norm_rows<T>(std::span<const T>, std::span<const T>, std::span<const T>,   \
                                   std::span<T>, std::span<T>, std::span<T>, std::size_t,        \
                                   std::size_t, double);                                         \
  template void layer_norm_rows_backward<T>(std::span<const T>, std::span<const T>,              \
                                            std::span<const T>, std::span<const T>,              \
                                            std::span<T>, std::span<T>, std::span<T>,            \
                                            std::size_t, std::size_t);                           \
  template void attention_forward<T>(std::span<const T>, std::span<const T>, std::span<const T>, \
                                     std::span<const std::uint8_t>, std::span<T>, std::span<T>,  \
                                     const AttentionDims&);                                      \
  template void attention_backward<T>(std::span<const T>, std::span<const T>,                    \
                                      std::span<const T>, std::span<const T>,                    \
                                      std::span<const T>, std::span<T>, std::span<T>,            \
                                      std::span<T>, const AttentionDims&);

QL_INSTANTIATE(float)
QL_INSTANTIATE(double)
#undef QL_INSTANTIATE

}  // namespace ql::kernels
