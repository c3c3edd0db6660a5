// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "ql/rng.hpp"
#include "ql/tensor.hpp"

namespace ql {

/// A named handle onto a parameter tensor owned by some module.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

/// Draws are made in double and then cast, so float and double models built
/// from the same seed hold the same initial values up to rounding.
template <typename T>
Tensor<T> random_normal(Rng& rng, Shape shape, double stddev);

/// Pointwise affine map over the last axis: x [n, in] -> [n, out]. Also serves
/// as the 1x1 convolution over token channels.
template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [1, out]; undefined when the layer has no bias

  static Linear create(Rng& rng, std::size_t in, std::size_t out, bool with_bias = true,
                       double gain = 1.0);
  static Linear zeros(std::size_t in, std::size_t out, bool with_bias = true);

  Tensor<T> operator()(const Tensor<T>& x) const;
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  void collect(const std::string& prefix, ParamList<T>& out);
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain;  // [dim]
  Tensor<T> bias;  // [dim]
  double eps = 1e-5;

  static LayerNorm create(std::size_t dim, double eps = 1e-5);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out);
};

/// CLIP-style attention pooling: the mean token is prepended, learned
/// positional embeddings are added, and the mean token's query attends over
/// all positions. Output is one row projected to out_dim.
template <typename T>
struct AttentionPool {
  Tensor<T> positional;  // [tokens + 1, dim]
  Linear<T> q_proj;
  Linear<T> k_proj;
  Linear<T> v_proj;
  Linear<T> c_proj;
  std::size_t heads = 1;

  static AttentionPool create(Rng& rng, std::size_t tokens, std::size_t dim, std::size_t out_dim,
                              std::size_t heads);
  /// x [tokens, dim] -> [1, out_dim]
  Tensor<T> operator()(const Tensor<T>& x, AttentionRecord* record = nullptr) const;
  void collect(const std::string& prefix, ParamList<T>& out);
};

/// Softmax(f1 W_Q (f2 W_K)^T / sqrt(d_k)) f2 W_V, split over heads, with an
/// optional output projection. Self-attention is the f1 == f2 case.
template <typename T>
struct CrossAttention {
  Linear<T> q_proj;
  Linear<T> k_proj;
  Linear<T> v_proj;
  Linear<T> out_proj;  // weight undefined when there is no output projection
  std::size_t heads = 1;

  /// query_dim -> attn_dim for Q/K, kv_dim -> value_dim for V. Projections
  /// carry no bias.
  static CrossAttention create(Rng& rng, std::size_t query_dim, std::size_t kv_dim,
                               std::size_t attn_dim, std::size_t value_dim, std::size_t heads,
                               bool with_out_proj, std::size_t out_dim = 0);

  Tensor<T> operator()(const Tensor<T>& f1, const Tensor<T>& f2,
                       std::span<const std::uint8_t> mask = {},
                       AttentionRecord* record = nullptr) const;
  void collect(const std::string& prefix, ParamList<T>& out);
};

}  // namespace ql
