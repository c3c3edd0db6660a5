// SPDX-License-Identifier: Apache-2.0
#include "ql/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "ql/error.hpp"
#include "ql/kernels.hpp"

namespace ql {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---- Tensor ------------------------------------------------------------------

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  node_ = std::make_shared<NodeType>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
Tensor<T> Tensor<T>::from_doubles(Shape shape, std::span<const double> values, bool requires_grad) {
  std::vector<T> data(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) data[i] = static_cast<T>(values[i]);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_node(std::shared_ptr<NodeType> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

namespace {
template <typename N>
const N& checked(const std::shared_ptr<N>& node) {
  if (!node) throw ValidationError("use of an undefined tensor");
  return *node;
}
}  // namespace

template <typename T>
const Shape& Tensor<T>::shape() const {
  return checked(node_).shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  return checked(node_).data.size();
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  return checked(node_).data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  checked(node_);
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

template <typename T>
std::vector<double> Tensor<T>::to_doubles() const {
  auto d = data();
  return std::vector<double>(d.begin(), d.end());
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return checked(node_).requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  checked(node_);
  if (node_->backward) throw ValidationError("requires_grad can only be toggled on leaf tensors");
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return !checked(node_).grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return checked(node_).grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  checked(node_);
  return node_->ensure_grad();
}

template <typename T>
void Tensor<T>::zero_grad() {
  checked(node_);
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) {
    throw DimensionError("backward() needs a scalar, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) throw ValidationError("backward() on a tensor without grad history");

  // Post-order DFS gives a topological order with parents first.
  std::vector<NodeType*> order;
  std::unordered_set<NodeType*> seen;
  std::vector<std::pair<NodeType*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      NodeType* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeType* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), std::vector<T>(data().begin(), data().end()));
}

template class Tensor<float>;
template class Tensor<double>;

// ---- op plumbing -----------------------------------------------------------

namespace {

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
void check_finite(const char* op, const std::vector<T>& data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      std::ostringstream os;
      os << op << " produced a non-finite value (" << data[i] << ") at flat index " << i;
      throw NumericalError(os.str());
    }
  }
}

/// Wraps freshly computed values into a node, wiring the tape when needed.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(detail::Node<T>&)> backward) {
  check_finite(op, data);
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto* in : inputs) needs = needs || in->requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto* in : inputs) node->parents.push_back(in->node());
    node->backward = std::move(backward);
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> make_result_n(const char* op, Shape shape, std::vector<T> data,
                        const std::vector<Tensor<T>>& inputs,
                        std::function<void(detail::Node<T>&)> backward) {
  check_finite(op, data);
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor<T>::from_node(std::move(node));
}

void require_defined(const char* op, bool ok) {
  if (!ok) throw ValidationError(std::string(op) + ": undefined tensor argument");
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcastable");
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

/// For every flat index of `out`, the flat index into a tensor of shape `in`
/// broadcast against it.
std::vector<std::size_t> broadcast_map(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    const std::size_t oi = i + (r - in.size());
    stride[oi] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t flat = 0;
  for (std::size_t o = 0; o < n; ++o) {
    map[o] = flat;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      flat += stride[d];
      if (idx[d] < out[d]) break;
      flat -= stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

struct AxisSplit {
  std::size_t outer;
  std::size_t len;
  std::size_t inner;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void check_axis(const char* op, const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(s));
  }
}

enum class Binary { Add, Sub, Mul };

template <typename T>
Tensor<T> binary_op(const char* op, Binary kind, const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(op, a.defined() && b.defined());
  const Shape out = broadcast_shape(op, a.shape(), b.shape());
  const std::size_t n = shape_numel(out);
  const bool same = a.shape() == out && b.shape() == out;
  auto ma = same ? std::make_shared<std::vector<std::size_t>>()
                 : std::make_shared<std::vector<std::size_t>>(broadcast_map(a.shape(), out));
  auto mb = same ? std::make_shared<std::vector<std::size_t>>()
                 : std::make_shared<std::vector<std::size_t>>(broadcast_map(b.shape(), out));
  auto ia = [&](std::size_t i) { return same ? i : (*ma)[i]; };
  auto ib = [&](std::size_t i) { return same ? i : (*mb)[i]; };
  std::vector<T> y(n);
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    const T x1 = da[ia(i)];
    const T x2 = db[ib(i)];
    y[i] = kind == Binary::Add ? x1 + x2 : kind == Binary::Sub ? x1 - x2 : x1 * x2;
  }
  return make_result<T>(op, out, std::move(y), {&a, &b}, [kind, same, ma, mb](detail::Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t i1 = same ? i : (*ma)[i];
      const std::size_t i2 = same ? i : (*mb)[i];
      if (pa.requires_grad) {
        pa.ensure_grad()[i1] += kind == Binary::Mul ? g[i] * pb.data[i2] : g[i];
      }
      if (pb.requires_grad) {
        pb.ensure_grad()[i2] += kind == Binary::Add   ? g[i]
                                : kind == Binary::Sub ? -g[i]
                                                      : g[i] * pa.data[i1];
      }
    }
  });
}

}  // namespace

// ---- ops -------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op("add", Binary::Add, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op("sub", Binary::Sub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op("mul", Binary::Mul, a, b);
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined("matmul", a.defined() && b.defined());
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2 || sa[sa.size() - 1] != sb[sb.size() - 2]) {
    throw DimensionError("matmul: cannot contract " + shape_str(sa) + " with " + shape_str(sb));
  }
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa[sa.size() - 1];
  const std::size_t n = sb[sb.size() - 1];
  const Shape ba(sa.begin(), sa.end() - 2);
  const Shape bb(sb.begin(), sb.end() - 2);
  Shape batch;
  try {
    batch = broadcast_shape("matmul", ba, bb);
  } catch (const DimensionError&) {
    throw DimensionError("matmul: batch extents of " + shape_str(sa) + " and " + shape_str(sb) +
                         " are not broadcastable");
  }
  const std::size_t nb = shape_numel(batch);
  auto map_a = std::make_shared<std::vector<std::size_t>>(broadcast_map(ba, batch));
  auto map_b = std::make_shared<std::vector<std::size_t>>(broadcast_map(bb, batch));
  Shape out = batch;
  out.push_back(m);
  out.push_back(n);
  std::vector<T> y(nb * m * n);
  for (std::size_t bi = 0; bi < nb; ++bi) {
    kernels::matmul_nn<T>(a.data().subspan((*map_a)[bi] * m * k, m * k),
                          b.data().subspan((*map_b)[bi] * k * n, k * n),
                          std::span<T>(y).subspan(bi * m * n, m * n), m, k, n, false);
  }
  return make_result<T>("matmul", out, std::move(y), {&a, &b},
                        [m, k, n, nb, map_a, map_b](detail::Node<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          const std::span<const T> g(self.grad);
                          for (std::size_t bi = 0; bi < nb; ++bi) {
                            const auto gc = g.subspan(bi * m * n, m * n);
                            const std::size_t oa = (*map_a)[bi] * m * k;
                            const std::size_t ob = (*map_b)[bi] * k * n;
                            if (pa.requires_grad) {
                              kernels::matmul_nt<T>(gc, std::span<const T>(pb.data).subspan(ob, k * n),
                                                    std::span<T>(pa.ensure_grad()).subspan(oa, m * k),
                                                    m, n, k, true);
                            }
                            if (pb.requires_grad) {
                              kernels::matmul_tn<T>(std::span<const T>(pa.data).subspan(oa, m * k), gc,
                                                    std::span<T>(pb.ensure_grad()).subspan(ob, k * n),
                                                    k, m, n, true);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  require_defined("scale", a.defined());
  std::vector<T> y(a.numel());
  auto d = a.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = d[i] * factor;
  return make_result<T>("scale", a.shape(), std::move(y), {&a}, [factor](detail::Node<T>& self) {
    auto& p = *self.parents[0];
    auto& pg = p.ensure_grad();
    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  require_defined("silu", a.defined());
  std::vector<T> y(a.numel());
  auto d = a.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = d[i] / (T(1) + std::exp(-d[i]));
  return make_result<T>("silu", a.shape(), std::move(y), {&a}, [](detail::Node<T>& self) {
    auto& p = *self.parents[0];
    auto& pg = p.ensure_grad();
    for (std::size_t i = 0; i < pg.size(); ++i) {
      const T x = p.data[i];
      const T s = T(1) / (T(1) + std::exp(-x));
      pg[i] += self.grad[i] * s * (T(1) + x * (T(1) - s));
    }
  });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  require_defined("square", a.defined());
  std::vector<T> y(a.numel());
  auto d = a.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = d[i] * d[i];
  return make_result<T>("square", a.shape(), std::move(y), {&a}, [](detail::Node<T>& self) {
    auto& p = *self.parents[0];
    auto& pg = p.ensure_grad();
    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += self.grad[i] * T(2) * p.data[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  require_defined("sum", a.defined());
  T s = 0;
  for (T x : a.data()) s += x;
  return make_result<T>("sum", Shape{}, std::vector<T>{s}, {&a}, [](detail::Node<T>& self) {
    auto& pg = self.parents[0]->ensure_grad();
    for (auto& g : pg) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  require_defined("mean", a.defined());
  T s = 0;
  for (T x : a.data()) s += x;
  const T inv = T(1) / static_cast<T>(a.numel());
  return make_result<T>("mean", Shape{}, std::vector<T>{s * inv}, {&a}, [inv](detail::Node<T>& self) {
    auto& pg = self.parents[0]->ensure_grad();
    for (auto& g : pg) g += self.grad[0] * inv;
  });
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis) {
  require_defined("sum_axis", a.defined());
  check_axis("sum_axis", a.shape(), axis);
  const AxisSplit s = split_at(a.shape(), axis);
  Shape out = a.shape();
  out[axis] = 1;
  std::vector<T> y(s.outer * s.inner, T(0));
  auto d = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i) y[o * s.inner + i] += d[(o * s.len + l) * s.inner + i];
  return make_result<T>("sum_axis", out, std::move(y), {&a}, [s](detail::Node<T>& self) {
    auto& pg = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t i = 0; i < s.inner; ++i) pg[(o * s.len + l) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& a, std::size_t axis) {
  check_axis("mean_axis", a.shape(), axis);
  return scale(sum_axis(a, axis), T(1) / static_cast<T>(a.shape()[axis]));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require_defined("reshape", a.defined());
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> y(a.data().begin(), a.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(y), {&a}, [](detail::Node<T>& self) {
    auto& pg = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  require_defined("softmax", x.defined());
  check_axis("softmax", x.shape(), axis);
  const AxisSplit s = split_at(x.shape(), axis);
  const std::size_t rows = s.outer * s.inner;
  // Gather each softmax lane into a contiguous row.
  std::vector<T> lanes(rows * s.len);
  auto d = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i) lanes[(o * s.inner + i) * s.len + l] = d[(o * s.len + l) * s.inner + i];
  auto probs = std::make_shared<std::vector<T>>(rows * s.len);
  kernels::softmax_rows<T>(lanes, *probs, rows, s.len);
  std::vector<T> y(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i) y[(o * s.len + l) * s.inner + i] = (*probs)[(o * s.inner + i) * s.len + l];
  return make_result<T>("softmax", x.shape(), std::move(y), {&x}, [s, rows, probs](detail::Node<T>& self) {
    std::vector<T> gl(rows * s.len);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t i = 0; i < s.inner; ++i) gl[(o * s.inner + i) * s.len + l] = self.grad[(o * s.len + l) * s.inner + i];
    std::vector<T> dl(rows * s.len, T(0));
    kernels::softmax_rows_backward<T>(*probs, gl, dl, rows, s.len);
    auto& pg = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t i = 0; i < s.inner; ++i) pg[(o * s.len + l) * s.inner + i] += dl[(o * s.inner + i) * s.len + l];
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double eps) {
  require_defined("layer_norm", x.defined() && gain.defined() && bias.defined());
  if (x.rank() == 0) throw DimensionError("layer_norm: input must have a channel axis");
  const std::size_t cols = x.shape().back();
  if (gain.numel() != cols || bias.numel() != cols) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match channel extent " +
                         std::to_string(cols) + " of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / cols;
  std::vector<T> y(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  kernels::layer_norm_rows<T>(x.data(), gain.data(), bias.data(), y, *xhat, *inv_std, rows, cols, eps);
  return make_result<T>("layer_norm", x.shape(), std::move(y), {&x, &gain, &bias},
                        [rows, cols, xhat, inv_std](detail::Node<T>& self) {
                          auto& px = *self.parents[0];
                          auto& pg = *self.parents[1];
                          auto& pb = *self.parents[2];
                          kernels::layer_norm_rows_backward<T>(
                              self.grad, *xhat, *inv_std, pg.data,
                              px.requires_grad ? std::span<T>(px.ensure_grad()) : std::span<T>(),
                              pg.requires_grad ? std::span<T>(pg.ensure_grad()) : std::span<T>(),
                              pb.requires_grad ? std::span<T>(pb.ensure_grad()) : std::span<T>(), rows,
                              cols);
                        });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw ValidationError("concat: no inputs");
  for (const auto& x : xs) require_defined("concat", x.defined());
  const Shape& s0 = xs[0].shape();
  check_axis("concat", s0, axis);
  std::size_t total = 0;
  std::vector<std::size_t> lens;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) {
      throw DimensionError("concat along axis " + std::to_string(axis) + ": " + shape_str(s0) +
                           " vs " + shape_str(s) + " differ off-axis");
    }
    lens.push_back(s[axis]);
    total += s[axis];
  }
  Shape out = s0;
  out[axis] = total;
  const AxisSplit so = split_at(out, axis);
  std::vector<T> y(shape_numel(out));
  std::size_t offset = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    auto d = xs[t].data();
    const std::size_t chunk = lens[t] * so.inner;
    for (std::size_t o = 0; o < so.outer; ++o)
      std::copy_n(d.begin() + o * chunk, chunk, y.begin() + o * total * so.inner + offset * so.inner);
    offset += lens[t];
  }
  return make_result_n<T>("concat", out, std::move(y), xs, [lens, so, total](detail::Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t t = 0; t < lens.size(); ++t) {
      auto& p = *self.parents[t];
      const std::size_t chunk = lens[t] * so.inner;
      if (p.requires_grad) {
        auto& pg = p.ensure_grad();
        for (std::size_t o = 0; o < so.outer; ++o)
          for (std::size_t i = 0; i < chunk; ++i) pg[o * chunk + i] += self.grad[o * total * so.inner + off * so.inner + i];
      }
      off += lens[t];
    }
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_defined("slice", x.defined());
  check_axis("slice", x.shape(), axis);
  if (begin >= end || end > x.shape()[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out = x.shape();
  out[axis] = end - begin;
  const std::size_t len = end - begin;
  std::vector<T> y(shape_numel(out));
  auto d = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(d.begin() + (o * s.len + begin) * s.inner, len * s.inner, y.begin() + o * len * s.inner);
  return make_result<T>("slice", out, std::move(y), {&x}, [s, begin, len](detail::Node<T>& self) {
    auto& pg = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < len * s.inner; ++i) pg[(o * s.len + begin) * s.inner + i] += self.grad[o * len * s.inner + i];
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> ids) {
  require_defined("gather_rows", table.defined());
  if (table.rank() != 2) throw DimensionError("gather_rows: table must be 2-D, got " + shape_str(table.shape()));
  if (ids.empty()) throw ValidationError("gather_rows: empty id list");
  const std::size_t rows = table.shape()[0];
  const std::size_t cols = table.shape()[1];
  for (auto id : ids) {
    if (id >= rows) {
      throw ValidationError("gather_rows: id " + std::to_string(id) + " outside table of " +
                            std::to_string(rows) + " rows");
    }
  }
  std::vector<T> y(ids.size() * cols);
  auto d = table.data();
  for (std::size_t r = 0; r < ids.size(); ++r) std::copy_n(d.begin() + ids[r] * cols, cols, y.begin() + r * cols);
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return make_result<T>("gather_rows", Shape{ids.size(), cols}, std::move(y), {&table},
                        [idv, cols](detail::Node<T>& self) {
                          auto& pg = self.parents[0]->ensure_grad();
                          for (std::size_t r = 0; r < idv.size(); ++r)
                            for (std::size_t c = 0; c < cols; ++c) pg[idv[r] * cols + c] += self.grad[r * cols + c];
                        });
}

template <typename T>
Tensor<T> mha(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
              std::span<const std::uint8_t> mask, AttentionRecord* record) {
  require_defined("mha", q.defined() && k.defined() && v.defined());
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw DimensionError("mha: q/k/v must be 2-D, got " + shape_str(q.shape()) + " " +
                         shape_str(k.shape()) + " " + shape_str(v.shape()));
  }
  const kernels::AttentionDims dims{q.dim(0), k.dim(0), q.dim(1), v.dim(1), heads};
  if (k.dim(1) != dims.d_qk || v.dim(0) != dims.n_k) {
    throw DimensionError("mha: incompatible q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()));
  }
  if (heads == 0 || dims.d_qk % heads != 0 || dims.d_v % heads != 0) {
    throw DimensionError("mha: heads=" + std::to_string(heads) + " must divide d_q=" +
                         std::to_string(dims.d_qk) + " and d_v=" + std::to_string(dims.d_v));
  }
  if (!mask.empty()) {
    if (mask.size() != dims.n_k) {
      throw DimensionError("mha: mask length " + std::to_string(mask.size()) + " != key count " +
                           std::to_string(dims.n_k));
    }
    if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) {
      throw ValidationError("mha: every key is masked out");
    }
  }
  std::vector<T> out(dims.n_q * dims.d_v);
  auto probs = std::make_shared<std::vector<T>>(heads * dims.n_q * dims.n_k);
  kernels::attention_forward<T>(q.data(), k.data(), v.data(), mask, out, *probs, dims);
  if (record != nullptr) {
    record->heads = heads;
    record->n_q = dims.n_q;
    record->n_k = dims.n_k;
    record->weights.assign(probs->begin(), probs->end());
  }
  return make_result<T>("mha", Shape{dims.n_q, dims.d_v}, std::move(out), {&q, &k, &v},
                        [dims, probs](detail::Node<T>& self) {
                          auto& pq = *self.parents[0];
                          auto& pk = *self.parents[1];
                          auto& pv = *self.parents[2];
                          kernels::attention_backward<T>(
                              pq.data, pk.data, pv.data, *probs, self.grad,
                              pq.requires_grad ? std::span<T>(pq.ensure_grad()) : std::span<T>(),
                              pk.requires_grad ? std::span<T>(pk.ensure_grad()) : std::span<T>(),
                              pv.requires_grad ? std::span<T>(pv.ensure_grad()) : std::span<T>(), dims);
                        });
}

template <typename T>
Tensor<T> mse(const Tensor<T>& prediction, const Tensor<T>& target) {
  require_defined("mse", prediction.defined() && target.defined());
  if (prediction.shape() != target.shape()) {
    throw DimensionError("mse: prediction " + shape_str(prediction.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  const std::size_t n = prediction.numel();
  auto p = prediction.data();
  auto t = target.data();
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = p[i] - t[i];
    s += d * d;
  }
  const T inv = T(1) / static_cast<T>(n);
  return make_result<T>("mse", Shape{}, std::vector<T>{s * inv}, {&prediction, &target},
                        [inv](detail::Node<T>& self) {
                          auto& pp = *self.parents[0];
                          auto& pt = *self.parents[1];
                          const T g = self.grad[0] * T(2) * inv;
                          for (std::size_t i = 0; i < pp.data.size(); ++i) {
                            const T d = pp.data[i] - pt.data[i];
                            if (pp.requires_grad) pp.ensure_grad()[i] += g * d;
                            if (pt.requires_grad) pt.ensure_grad()[i] -= g * d;
                          }
                        });
}

#define QL_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                             \
  template Tensor<T> silu<T>(const Tensor<T>&);                                                 \
  template Tensor<T> square<T>(const Tensor<T>&);                                               \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                  \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                 \
  template Tensor<T> sum_axis<T>(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> mean_axis<T>(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                       \
  template Tensor<T> softmax<T>(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double); \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);                     \
  template Tensor<T> slice<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);         \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const std::size_t>);            \
  template Tensor<T> mha<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,  \
                            std::span<const std::uint8_t>, AttentionRecord*);                   \
  template Tensor<T> mse<T>(const Tensor<T>&, const Tensor<T>&);

QL_INSTANTIATE_OPS(float)
QL_INSTANTIATE_OPS(double)
#undef QL_INSTANTIATE_OPS

}  // namespace ql
