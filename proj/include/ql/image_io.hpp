// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "ql/tensor.hpp"

namespace ql {

/// Binary P6, 8-bit. image is [3, H, W] with values in [0,1].
void write_ppm(const std::filesystem::path& path, const Tensor<float>& image);
Tensor<float> read_ppm(const std::filesystem::path& path);

/// Reads .ppm or .qlt by extension.
Tensor<float> read_image(const std::filesystem::path& path);

}  // namespace ql
