// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ql {

/// Bad input, bad shape, bad file. Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Extent disagreement between operands.
class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// NaN/Inf produced, or a gradient check failed. Maps to CLI exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ql
