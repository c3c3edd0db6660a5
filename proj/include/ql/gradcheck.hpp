// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference checks of the reverse-mode gradients.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ql/nn.hpp"

namespace ql {

struct GradcheckOptions {
  double step = 1e-3;
  double tolerance = 1e-4;
  /// Test hook: perturbs one analytic gradient entry before comparison.
  bool corrupt = false;
};

struct GradcheckGroup {
  std::string name;
  std::size_t elements = 0;
  double rel_error = 0;  // worst tensor in the group
  bool passed = true;
};

/// ||a - n|| / max(||a||, ||n||) over one tensor; 0 when both norms are tiny.
double gradient_rel_error(std::span<const double> analytic, std::span<const double> numeric);

/// Tensors are grouped by their name up to the last '.'; group order follows
/// first appearance.
std::vector<GradcheckGroup> check_gradients(const ParamList<double>& params, const std::function<Tensor<double>()>& loss,
                                            const GradcheckOptions& options);

/// Every op and module on small random shapes for one seed.
std::vector<GradcheckGroup> gradcheck_suite(std::uint64_t seed, const GradcheckOptions& options);

/// Worst error per group across seeds, each group listed once.
std::vector<GradcheckGroup> merge_gradcheck(const std::vector<std::vector<GradcheckGroup>>& runs);

}  // namespace ql
