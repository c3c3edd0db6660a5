// SPDX-License-Identifier: Apache-2.0
#include "ql/optim.hpp"

#include <cmath>

#include "ql/error.hpp"

namespace ql {

template <typename T>
void adamw_update(std::span<T> value, std::span<const T> grad, std::span<T> m, std::span<T> v,
                  std::int64_t step, const AdamWOptions& opt) {
  if (grad.size() != value.size() || m.size() != value.size() || v.size() != value.size()) {
    throw DimensionError("adamw_update: value/grad/moment sizes disagree");
  }
  if (step < 1) throw ValidationError("adamw_update: step index starts at 1");
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
  const T decay = static_cast<T>(1.0 - opt.lr * opt.weight_decay);
  const T b1 = static_cast<T>(opt.beta1);
  const T b2 = static_cast<T>(opt.beta2);
  for (std::size_t i = 0; i < value.size(); ++i) {
    const T g = grad[i];
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    const double mhat = static_cast<double>(m[i]) / bc1;
    const double vhat = static_cast<double>(v[i]) / bc2;
    value[i] = value[i] * decay - static_cast<T>(opt.lr * mhat / (std::sqrt(vhat) + opt.eps));
  }
}

template <typename T>
AdamW<T>::AdamW(ParamList<T> params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    moments_.push_back({std::vector<T>(p.tensor->numel(), T(0)), std::vector<T>(p.tensor->numel(), T(0))});
  }
}

template <typename T>
void AdamW<T>::step() {
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<T>& p = *params_[i].tensor;
    if (!p.has_grad()) continue;
    adamw_update<T>(p.mutable_data(), p.grad(), moments_[i].m, moments_[i].v, step_, options_);
    for (T x : p.data()) {
      if (!std::isfinite(x)) throw NumericalError("AdamW produced a non-finite value in " + params_[i].name);
    }
  }
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p.tensor->zero_grad();
}

template void adamw_update<float>(std::span<float>, std::span<const float>, std::span<float>,
                                  std::span<float>, std::int64_t, const AdamWOptions&);
template void adamw_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                   std::span<double>, std::int64_t, const AdamWOptions&);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace ql
