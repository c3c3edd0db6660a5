// SPDX-License-Identifier: Apache-2.0
#include "ql/nn.hpp"

#include <cmath>

#include "ql/error.hpp"

namespace ql {

template <typename T>
Tensor<T> random_normal(Rng& rng, Shape shape, double stddev) {
  const auto values = rng.normals(shape_numel(shape), stddev);
  return Tensor<T>::from_doubles(std::move(shape), values);
}

template <typename T>
Linear<T> Linear<T>::create(Rng& rng, std::size_t in, std::size_t out, bool with_bias, double gain) {
  Linear l;
  l.weight = random_normal<T>(rng, {in, out}, gain / std::sqrt(static_cast<double>(in)));
  if (with_bias) l.bias = Tensor<T>::zeros({1, out});
  return l;
}

template <typename T>
Linear<T> Linear<T>::zeros(std::size_t in, std::size_t out, bool with_bias) {
  Linear l;
  l.weight = Tensor<T>::zeros({in, out});
  if (with_bias) l.bias = Tensor<T>::zeros({1, out});
  return l;
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  if (x.rank() != 2 || x.dim(1) != in_features()) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  auto y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".weight", &weight});
  if (bias.defined()) out.push_back({prefix + ".bias", &bias});
}

template <typename T>
LayerNorm<T> LayerNorm<T>::create(std::size_t dim, double eps) {
  return LayerNorm{Tensor<T>::full({dim}, T(1)), Tensor<T>::zeros({dim}), eps};
}

template <typename T>
Tensor<T> LayerNorm<T>::operator()(const Tensor<T>& x) const {
  return layer_norm(x, gain, bias, eps);
}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".gain", &gain});
  out.push_back({prefix + ".bias", &bias});
}

template <typename T>
AttentionPool<T> AttentionPool<T>::create(Rng& rng, std::size_t tokens, std::size_t dim,
                                          std::size_t out_dim, std::size_t heads) {
  AttentionPool p;
  p.positional = random_normal<T>(rng, {tokens + 1, dim}, 1.0 / std::sqrt(static_cast<double>(dim)));
  p.q_proj = Linear<T>::create(rng, dim, dim);
  p.k_proj = Linear<T>::create(rng, dim, dim);
  p.v_proj = Linear<T>::create(rng, dim, dim);
  p.c_proj = Linear<T>::create(rng, dim, out_dim);
  p.heads = heads;
  return p;
}

template <typename T>
Tensor<T> AttentionPool<T>::operator()(const Tensor<T>& x, AttentionRecord* record) const {
  if (x.rank() != 2 || x.dim(0) + 1 != positional.dim(0) || x.dim(1) != positional.dim(1)) {
    throw DimensionError("attention pool: input " + shape_str(x.shape()) +
                         " does not match positional table " + shape_str(positional.shape()));
  }
  auto tokens = add(concat<T>({mean_axis(x, 0), x}, 0), positional);
  auto q = q_proj(slice(tokens, 0, 0, 1));
  auto pooled = mha(q, k_proj(tokens), v_proj(tokens), heads, {}, record);
  return c_proj(pooled);
}

template <typename T>
void AttentionPool<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".positional", &positional});
  q_proj.collect(prefix + ".q_proj", out);
  k_proj.collect(prefix + ".k_proj", out);
  v_proj.collect(prefix + ".v_proj", out);
  c_proj.collect(prefix + ".c_proj", out);
}

template <typename T>
CrossAttention<T> CrossAttention<T>::create(Rng& rng, std::size_t query_dim, std::size_t kv_dim,
                                            std::size_t attn_dim, std::size_t value_dim,
                                            std::size_t heads, bool with_out_proj,
                                            std::size_t out_dim) {
  if (heads == 0 || attn_dim % heads != 0 || value_dim % heads != 0) {
    throw DimensionError("cross attention: heads=" + std::to_string(heads) + " must divide " +
                         std::to_string(attn_dim) + " and " + std::to_string(value_dim));
  }
  CrossAttention a;
  a.q_proj = Linear<T>::create(rng, query_dim, attn_dim, false);
  a.k_proj = Linear<T>::create(rng, kv_dim, attn_dim, false);
  a.v_proj = Linear<T>::create(rng, kv_dim, value_dim, false);
  if (with_out_proj) a.out_proj = Linear<T>::create(rng, value_dim, out_dim ? out_dim : value_dim);
  a.heads = heads;
  return a;
}

template <typename T>
Tensor<T> CrossAttention<T>::operator()(const Tensor<T>& f1, const Tensor<T>& f2,
                                        std::span<const std::uint8_t> mask,
                                        AttentionRecord* record) const {
  auto o = mha(q_proj(f1), k_proj(f2), v_proj(f2), heads, mask, record);
  return out_proj.weight.defined() ? out_proj(o) : o;
}

template <typename T>
void CrossAttention<T>::collect(const std::string& prefix, ParamList<T>& out) {
  q_proj.collect(prefix + ".q_proj", out);
  k_proj.collect(prefix + ".k_proj", out);
  v_proj.collect(prefix + ".v_proj", out);
  if (out_proj.weight.defined()) out_proj.collect(prefix + ".out_proj", out);
}

template Tensor<float> random_normal<float>(Rng&, Shape, double);
template Tensor<double> random_normal<double>(Rng&, Shape, double);
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct AttentionPool<float>;
template struct AttentionPool<double>;
template struct CrossAttention<float>;
template struct CrossAttention<double>;

}  // namespace ql
