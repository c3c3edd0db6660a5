// SPDX-License-Identifier: Apache-2.0
//
// QLT tensor files: "QLT1", u32 LE rank, rank x u32 LE extents, then the
// row-major payload as little-endian IEEE-754 binary32.
//
// A checkpoint is a directory of QLT files plus manifest.json:
//   {"tensors": {name: {"file": ..., "shape": [...]}}, ...extra sections}
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ql/nn.hpp"
#include "ql/tensor.hpp"

namespace ql {

struct QltArray {
  Shape shape;
  std::vector<float> values;
};

std::vector<std::uint8_t> encode_qlt(const Shape& shape, std::span<const float> values);
QltArray decode_qlt(std::span<const std::uint8_t> bytes);

void write_qlt(const std::filesystem::path& path, const Shape& shape, std::span<const float> values);
QltArray read_qlt(const std::filesystem::path& path);

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t);
template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path);

/// Writes every listed parameter and a manifest. `extra` keys are merged into
/// the manifest next to "tensors".
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const ParamList<T>& params,
                     const nlohmann::json& extra = nlohmann::json::object());

/// Fills every listed parameter from the checkpoint. Missing names, shape
/// disagreements and malformed files raise ValidationError naming the
/// parameter. Returns the manifest.
template <typename T>
nlohmann::json load_checkpoint(const std::filesystem::path& dir, const ParamList<T>& params);

nlohmann::json read_manifest(const std::filesystem::path& dir);

}  // namespace ql
