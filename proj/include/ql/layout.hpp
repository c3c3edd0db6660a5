// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ql/nn.hpp"
#include "ql/tensor.hpp"

namespace ql {

/// Normalized box (x0, y0, x1, y1) in [0,1]. (0,0,0,0) is the padding sentinel.
struct Box4 {
  double x0 = 0;
  double y0 = 0;
  double x1 = 0;
  double y1 = 0;

  bool valid() const;
  double area() const;
  friend bool operator==(const Box4&, const Box4&) = default;
};

/// Integer pixel box, end-exclusive.
struct PixelBox {
  long x0 = 0;
  long y0 = 0;
  long x1 = 0;
  long y1 = 0;
};

inline constexpr Box4 kGlobalBox{0, 0, 1, 1};
inline constexpr Box4 kPaddingBox{0, 0, 0, 0};

std::vector<Box4> normalize_boxes(std::span<const PixelBox> boxes, long width, long height);

/// Fixed-capacity layout: slot 0 is the global box, slots 1..n the real boxes,
/// the rest padding. mask[i] != 0 exactly for slots 0..n.
struct LayoutSet {
  std::vector<Box4> boxes;
  std::size_t valid_count = 0;
  std::vector<std::uint8_t> mask;

  std::size_t max_n() const { return boxes.size() - 1; }
};

LayoutSet build_layout(std::span<const Box4> boxes, std::size_t max_n);

/// One box per patch, row-major: patch (u, v) -> (u/h, v/w, (u+1)/h, (v+1)/w).
/// The row index lands in the first coordinate, as in the defining formula.
std::vector<Box4> patch_grid(std::size_t h, std::size_t w);

/// Shared layout embedding W_L [4, d_L] (no bias) and positional projection
/// W_P [d_L, d_I]. Layout boxes and patch-grid boxes go through the same W_L.
template <typename T>
struct LayoutEmbedder {
  Tensor<T> w_layout;    // [4, d_L]
  Tensor<T> w_position;  // [d_L, d_I]

  static LayoutEmbedder create(Rng& rng, std::size_t d_layout, std::size_t d_image);

  /// boxes -> [len, d_L]
  Tensor<T> embed(std::span<const Box4> boxes) const;
  /// L [len, d_L] -> P [len, d_I]
  Tensor<T> project_positions(const Tensor<T>& layout_embedding) const;
  void collect(const std::string& prefix, ParamList<T>& out);
};

/// On-disk layout description; `boxes` are normalized.
struct LayoutFile {
  std::string image;
  long width = 0;
  long height = 0;
  std::string category;
  long count = 0;
  std::vector<Box4> boxes;
};

LayoutFile read_layout_file(const std::filesystem::path& path);
void write_layout_file(const std::filesystem::path& path, const LayoutFile& layout);

}  // namespace ql
