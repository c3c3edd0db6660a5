// SPDX-License-Identifier: Apache-2.0
//
// Synthetic layout scenes: 1 to 10 circles or squares of one color on a plain
// background, placed in distinct cells of a 4x4 grid so they never overlap.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ql/layout.hpp"
#include "ql/rng.hpp"

namespace ql {

enum class ShapeKind { Circle, Square };

std::string to_string(ShapeKind kind);
ShapeKind parse_shape(const std::string& text);

struct Scene {
  std::string name;
  ShapeKind shape = ShapeKind::Circle;
  std::vector<PixelBox> boxes;
  Tensor<float> image;  // [3, size, size] in [0,1]
  std::string caption;
};

struct SynthOptions {
  std::size_t num_scenes = 8;
  std::size_t image_size = 32;
  std::optional<std::size_t> count;  // 1..10; random when unset
  std::optional<ShapeKind> shape;    // alternates when unset
};

inline constexpr std::size_t kMaxSceneObjects = 10;

Scene render_scene(Rng& rng, const std::string& name, std::size_t count, ShapeKind shape, std::size_t image_size);
std::vector<Scene> generate_scenes(std::uint64_t seed, const SynthOptions& options);

/// "<count-word> <shape>s"
std::string scene_caption(std::size_t count, ShapeKind shape);

/// Writes <name>.qlt, <name>.ppm, <name>.json per scene plus scenes.json and
/// vocab.json.
void write_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes);

struct DatasetEntry {
  std::string name;
  Tensor<float> image;
  LayoutFile layout;
  std::string caption;
};

std::vector<DatasetEntry> read_dataset(const std::filesystem::path& dir);

}  // namespace ql
