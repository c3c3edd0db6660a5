// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with a dynamic reverse-mode tape.
//
// A Tensor is a cheap handle onto a shared node. Ops build new nodes and, when
// any input requires a gradient and grad mode is on, record a backward closure
// plus their parents. Tensor::backward() on a scalar walks the recorded graph
// in reverse topological order. Leaf gradients accumulate until zero_grad().
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ql {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// True unless a NoGradGuard is alive on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodeType = detail::Node<T>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value);
  /// Values converted from double, e.g. the output of Rng::normals.
  static Tensor from_doubles(Shape shape, std::span<const double> values,
                             bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const T> data() const;
  /// In-place access, reserved for optimizer updates and loaders.
  std::span<T> mutable_data();
  T item() const;
  std::vector<double> to_doubles() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  /// Reverse-mode sweep from this scalar.
  void backward() const;

  /// Same values, no graph history, never requires grad.
  Tensor detach() const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(numel());
    auto src = data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
    return Tensor<U>(shape(), std::move(out));
  }

  const std::shared_ptr<NodeType>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<NodeType> node);

 private:
  std::shared_ptr<NodeType> node_;
};

/// Attention probabilities captured during an mha forward, laid out
/// [heads, n_q, n_k].
struct AttentionRecord {
  std::size_t heads = 0;
  std::size_t n_q = 0;
  std::size_t n_k = 0;
  std::vector<double> weights;
};

// ---- ops -------------------------------------------------------------------

/// Batched contraction [.., m, k] x [.., k, n]; batch extents broadcast.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise with numpy broadcasting.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> silu(const Tensor<T>& a);
template <typename T>
Tensor<T> square(const Tensor<T>& a);

template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);
/// Sum over one axis, keeping it with extent 1.
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis);
template <typename T>
Tensor<T> mean_axis(const Tensor<T>& a, std::size_t axis);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Numerically stable softmax along `axis` (max subtracted first).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// Layer normalization over the last axis with affine gain/bias of that extent.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     double eps = 1e-5);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis);
/// Half-open range [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);

/// Rows of `table` selected by `ids` (embedding lookup).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> ids);

/// Scaled dot-product multi-head attention without projections.
/// q [n_q, d_q], k [n_k, d_q], v [n_k, d_v]; heads divides d_q and d_v; each
/// head uses scale 1/sqrt(d_q / heads). A nonzero mask entry marks a key as
/// attendable; an empty mask attends to every key.
template <typename T>
Tensor<T> mha(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
              std::span<const std::uint8_t> mask = {}, AttentionRecord* record = nullptr);

template <typename T>
Tensor<T> mse(const Tensor<T>& prediction, const Tensor<T>& target);

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return sub(a, b);
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, b);
}

}  // namespace ql
