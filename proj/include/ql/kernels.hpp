// SPDX-License-Identifier: Apache-2.0
//
// Raw row-major kernels behind the tensor ops.
//
// ql::kernels holds the OpenMP versions used by the engine. ql::kernels::serial
// holds plain single-threaded loops kept as the reference for tests and
// benchmarks. Both accumulate every output element in the same order, so the
// two agree bit for bit, and the parallel results do not depend on the thread
// count.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace ql::kernels {

/// c[m,n] (+)= a[m,k] * b[k,n]
template <typename T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);
/// c[m,n] (+)= a[m,k] * b[n,k]^T
template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);
/// c[m,n] (+)= a[k,m]^T * b[k,n]
template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);

template <typename T>
void softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t cols);
/// dx (+)= y * (dy - sum(dy * y)) per row.
template <typename T>
void softmax_rows_backward(std::span<const T> y, std::span<const T> dy, std::span<T> dx,
                           std::size_t rows, std::size_t cols);

/// Writes y, the normalized values xhat and per-row 1/sqrt(var + eps).
template <typename T>
void layer_norm_rows(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                     std::span<T> y, std::span<T> xhat, std::span<T> inv_std, std::size_t rows,
                     std::size_t cols, double eps);
/// Accumulates into dx, dgain, dbias (any may be empty to skip).
template <typename T>
void layer_norm_rows_backward(std::span<const T> dy, std::span<const T> xhat,
                              std::span<const T> inv_std, std::span<const T> gain,
                              std::span<T> dx, std::span<T> dgain, std::span<T> dbias,
                              std::size_t rows, std::size_t cols);

struct AttentionDims {
  std::size_t n_q;
  std::size_t n_k;
  std::size_t d_qk;  // total across heads
  std::size_t d_v;   // total across heads
  std::size_t heads;
};

/// out[n_q, d_v]; probs[heads, n_q, n_k]. mask empty or length n_k.
template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<const std::uint8_t> mask, std::span<T> out, std::span<T> probs,
                       const AttentionDims& dims);
/// Accumulates into dq, dk, dv (any may be empty to skip).
template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const T> probs, std::span<const T> dout, std::span<T> dq,
                        std::span<T> dk, std::span<T> dv, const AttentionDims& dims);

namespace serial {

template <typename T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);
template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);
template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);
template <typename T>
void softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t cols);
template <typename T>
void softmax_rows_backward(std::span<const T> y, std::span<const T> dy, std::span<T> dx,
                           std::size_t rows, std::size_t cols);
template <typename T>
void layer_norm_rows(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                     std::span<T> y, std::span<T> xhat, std::span<T> inv_std, std::size_t rows,
                     std::size_t cols, double eps);
template <typename T>
void layer_norm_rows_backward(std::span<const T> dy, std::span<const T> xhat,
                              std::span<const T> inv_std, std::span<const T> gain,
                              std::span<T> dx, std::span<T> dgain, std::span<T> dbias,
                              std::size_t rows, std::size_t cols);
template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<const std::uint8_t> mask, std::span<T> out, std::span<T> probs,
                       const AttentionDims& dims);
template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const T> probs, std::span<const T> dout, std::span<T> dq,
                        std::span<T> dk, std::span<T> dv, const AttentionDims& dims);

}  // namespace serial

/// Threads the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace ql::kernels
