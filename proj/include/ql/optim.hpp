// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ql/nn.hpp"

namespace ql {

struct AdamWOptions {
  double lr = 2.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

/// One decoupled-weight-decay Adam update of a single array. `step` is the
/// 1-based step index used for bias correction.
template <typename T>
void adamw_update(std::span<T> value, std::span<const T> grad, std::span<T> m, std::span<T> v,
                  std::int64_t step, const AdamWOptions& opt);

/// Optimizer over a fixed parameter list. Parameters that never received a
/// gradient are left untouched, matching the usual "grad is None" skip.
template <typename T>
class AdamW {
 public:
  AdamW(ParamList<T> params, AdamWOptions options);

  void step();
  void zero_grad();

  std::int64_t steps() const { return step_; }
  const AdamWOptions& options() const { return options_; }
  const ParamList<T>& params() const { return params_; }

 private:
  struct Moments {
    std::vector<T> m;
    std::vector<T> v;
  };
  ParamList<T> params_;
  AdamWOptions options_;
  std::vector<Moments> moments_;
  std::int64_t step_ = 0;
};

}  // namespace ql
