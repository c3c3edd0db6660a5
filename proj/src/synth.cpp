// SPDX-License-Identifier: Apache-2.0
#include "ql/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "ql/encoders.hpp"
#include "ql/error.hpp"
#include "ql/image_io.hpp"
#include "ql/qlt.hpp"

namespace ql {

namespace {

constexpr std::size_t kCells = 4;

const double kPalette[][3] = {{0.90, 0.20, 0.20}, {0.20, 0.75, 0.25}, {0.20, 0.35, 0.90},
                              {0.95, 0.85, 0.15}, {0.95, 0.95, 0.95}};
const double kBackgrounds[][3] = {{0.10, 0.10, 0.12}, {0.25, 0.22, 0.20}, {0.12, 0.18, 0.25}};

}  // namespace

std::string to_string(ShapeKind kind) { return kind == ShapeKind::Circle ? "circle" : "square"; }

ShapeKind parse_shape(const std::string& text) {
  if (text == "circle") return ShapeKind::Circle;
  if (text == "square") return ShapeKind::Square;
  throw ValidationError("unknown shape '" + text + "' (expected circle or square)");
}

std::string scene_caption(std::size_t count, ShapeKind shape) {
  if (count == 0 || count > kMaxSceneObjects) {
    throw ValidationError("object count " + std::to_string(count) + " outside 1.." + std::to_string(kMaxSceneObjects));
  }
  return count_words()[count - 1] + " " + to_string(shape) + "s";
}

Scene render_scene(Rng& rng, const std::string& name, std::size_t count, ShapeKind shape, std::size_t size) {
  if (count == 0 || count > kMaxSceneObjects) {
    throw ValidationError("object count " + std::to_string(count) + " outside 1.." + std::to_string(kMaxSceneObjects));
  }
  if (size % kCells != 0 || size / kCells < 4) {
    throw ValidationError("image size " + std::to_string(size) + " must be a multiple of 4 and at least 16");
  }
  const std::size_t cell = size / kCells;
  Scene s;
  s.name = name;
  s.shape = shape;
  s.caption = scene_caption(count, shape);

  const auto& bg = kBackgrounds[rng.below(std::size(kBackgrounds))];
  const auto& fg = kPalette[rng.below(std::size(kPalette))];
  std::vector<float> px(3 * size * size);
  for (std::size_t c = 0; c < 3; ++c) {
    std::fill(px.begin() + static_cast<long>(c * size * size), px.begin() + static_cast<long>((c + 1) * size * size),
              static_cast<float>(bg[c]));
  }

  // Partial Fisher-Yates over the grid cells.
  std::vector<std::size_t> cells(kCells * kCells);
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
  for (std::size_t i = 0; i < count; ++i) std::swap(cells[i], cells[i + rng.below(cells.size() - i)]);

  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t side = cell / 2 + rng.below(cell / 2 + 1);
    const long cx = static_cast<long>((cells[i] % kCells) * cell + rng.below(cell - side + 1));
    const long cy = static_cast<long>((cells[i] / kCells) * cell + rng.below(cell - side + 1));
    const long sl = static_cast<long>(side);
    s.boxes.push_back({cx, cy, cx + sl, cy + sl});
    const double r = static_cast<double>(side) / 2.0;
    for (long y = cy; y < cy + sl; ++y) {
      for (long x = cx; x < cx + sl; ++x) {
        const double dx = static_cast<double>(x - cx) + 0.5 - r;
        const double dy = static_cast<double>(y - cy) + 0.5 - r;
        if (shape == ShapeKind::Circle && dx * dx + dy * dy > r * r) continue;
        for (std::size_t c = 0; c < 3; ++c) {
          px[(c * size + static_cast<std::size_t>(y)) * size + static_cast<std::size_t>(x)] = static_cast<float>(fg[c]);
        }
      }
    }
  }
  s.image = Tensor<float>({3, size, size}, std::move(px));
  return s;
}

std::vector<Scene> generate_scenes(std::uint64_t seed, const SynthOptions& options) {
  if (options.num_scenes == 0) throw ValidationError("num_scenes must be positive");
  if (options.count && (*options.count == 0 || *options.count > kMaxSceneObjects)) {
    throw ValidationError("count must lie in 1.." + std::to_string(kMaxSceneObjects) + ", got " +
                          std::to_string(*options.count));
  }
  std::vector<Scene> scenes;
  for (std::size_t i = 0; i < options.num_scenes; ++i) {
    Rng rng(seed, 0x5ce0 + i);
    const std::size_t count = options.count ? *options.count : 1 + rng.below(kMaxSceneObjects);
    const ShapeKind shape = options.shape ? *options.shape : (i % 2 == 0 ? ShapeKind::Circle : ShapeKind::Square);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%03zu", i);
    scenes.push_back(render_scene(rng, name, count, shape, options.image_size));
  }
  return scenes;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json index = nlohmann::json::array();
  for (const auto& s : scenes) {
    save_tensor(dir / (s.name + ".qlt"), s.image);
    write_ppm(dir / (s.name + ".ppm"), s.image);
    const auto size = static_cast<long>(s.image.dim(1));
    LayoutFile lf{s.name + ".qlt", size, size, to_string(s.shape), static_cast<long>(s.boxes.size()),
                  normalize_boxes(s.boxes, size, size)};
    write_layout_file(dir / (s.name + ".json"), lf);
    index.push_back({{"name", s.name}, {"caption", s.caption}});
  }
  std::ofstream out(dir / "scenes.json", std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + (dir / "scenes.json").string());
  out << index.dump(2) << '\n';
  Vocabulary::builtin().save(dir / "vocab.json");
}

std::vector<DatasetEntry> read_dataset(const std::filesystem::path& dir) {
  const auto index_path = dir / "scenes.json";
  std::ifstream in(index_path);
  if (!in) throw ValidationError("dataset index " + index_path.string() + " not found");
  nlohmann::json index;
  try {
    in >> index;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed dataset index: " + std::string(e.what()));
  }
  std::vector<DatasetEntry> out;
  for (const auto& e : index) {
    DatasetEntry d;
    d.name = e.at("name").get<std::string>();
    d.caption = e.at("caption").get<std::string>();
    d.layout = read_layout_file(dir / (d.name + ".json"));
    d.image = load_tensor<float>(dir / d.layout.image);
    out.push_back(std::move(d));
  }
  if (out.empty()) throw ValidationError("dataset " + dir.string() + " holds no scenes");
  return out;
}

}  // namespace ql
