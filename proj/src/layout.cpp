// SPDX-License-Identifier: Apache-2.0
#include "ql/layout.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "ql/error.hpp"

namespace ql {

bool Box4::valid() const {
  return 0.0 <= x0 && x0 <= x1 && x1 <= 1.0 && 0.0 <= y0 && y0 <= y1 && y1 <= 1.0;
}

double Box4::area() const { return (x1 - x0) * (y1 - y0); }

std::vector<Box4> normalize_boxes(std::span<const PixelBox> boxes, long width, long height) {
  if (width <= 0 || height <= 0) throw ValidationError("normalize_boxes: image extents must be positive");
  std::vector<Box4> out;
  out.reserve(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& b = boxes[i];
    if (b.x0 < 0 || b.y0 < 0 || b.x1 > width || b.y1 > height) {
      throw ValidationError("box " + std::to_string(i) + " lies outside the " + std::to_string(width) +
                            "x" + std::to_string(height) + " image");
    }
    if (b.x0 > b.x1 || b.y0 > b.y1) throw ValidationError("box " + std::to_string(i) + " is inverted");
    out.push_back({static_cast<double>(b.x0) / static_cast<double>(width),
                   static_cast<double>(b.y0) / static_cast<double>(height),
                   static_cast<double>(b.x1) / static_cast<double>(width),
                   static_cast<double>(b.y1) / static_cast<double>(height)});
  }
  return out;
}

LayoutSet build_layout(std::span<const Box4> boxes, std::size_t max_n) {
  if (boxes.size() > max_n) {
    throw ValidationError("layout holds " + std::to_string(boxes.size()) + " boxes but max_n is " +
                          std::to_string(max_n));
  }
  LayoutSet set;
  set.valid_count = boxes.size();
  set.boxes.assign(max_n + 1, kPaddingBox);
  set.mask.assign(max_n + 1, 0);
  set.boxes[0] = kGlobalBox;
  set.mask[0] = 1;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (!boxes[i].valid()) throw ValidationError("layout box " + std::to_string(i) + " is not a valid normalized box");
    set.boxes[i + 1] = boxes[i];
    set.mask[i + 1] = 1;
  }
  return set;
}

std::vector<Box4> patch_grid(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw ValidationError("patch_grid: extents must be positive");
  std::vector<Box4> out;
  out.reserve(h * w);
  const double dh = static_cast<double>(h);
  const double dw = static_cast<double>(w);
  for (std::size_t u = 0; u < h; ++u) {
    for (std::size_t v = 0; v < w; ++v) {
      out.push_back({static_cast<double>(u) / dh, static_cast<double>(v) / dw,
                     static_cast<double>(u + 1) / dh, static_cast<double>(v + 1) / dw});
    }
  }
  return out;
}

template <typename T>
LayoutEmbedder<T> LayoutEmbedder<T>::create(Rng& rng, std::size_t d_layout, std::size_t d_image) {
  LayoutEmbedder e;
  e.w_layout = random_normal<T>(rng, {4, d_layout}, 1.0);
  e.w_position = random_normal<T>(rng, {d_layout, d_image}, 1.0 / std::sqrt(static_cast<double>(d_layout)));
  return e;
}

template <typename T>
Tensor<T> LayoutEmbedder<T>::embed(std::span<const Box4> boxes) const {
  if (boxes.empty()) throw ValidationError("embed: no boxes");
  std::vector<T> coords;
  coords.reserve(boxes.size() * 4);
  for (const auto& b : boxes) {
    coords.push_back(static_cast<T>(b.x0));
    coords.push_back(static_cast<T>(b.y0));
    coords.push_back(static_cast<T>(b.x1));
    coords.push_back(static_cast<T>(b.y1));
  }
  return matmul(Tensor<T>({boxes.size(), 4}, std::move(coords)), w_layout);
}

template <typename T>
Tensor<T> LayoutEmbedder<T>::project_positions(const Tensor<T>& layout_embedding) const {
  if (layout_embedding.rank() != 2 || layout_embedding.dim(1) != w_position.dim(0)) {
    throw DimensionError("project_positions: embedding " + shape_str(layout_embedding.shape()) +
                         " does not match W_P " + shape_str(w_position.shape()));
  }
  return matmul(layout_embedding, w_position);
}

template <typename T>
void LayoutEmbedder<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".w_layout", &w_layout});
  out.push_back({prefix + ".w_position", &w_position});
}

template struct LayoutEmbedder<float>;
template struct LayoutEmbedder<double>;

LayoutFile read_layout_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open layout file " + path.string());
  LayoutFile f;
  try {
    nlohmann::json j;
    in >> j;
    f.image = j.at("image").get<std::string>();
    f.width = j.at("width").get<long>();
    f.height = j.at("height").get<long>();
    f.category = j.at("category").get<std::string>();
    f.count = j.at("count").get<long>();
    for (const auto& b : j.at("boxes")) {
      const auto v = b.get<std::vector<double>>();
      if (v.size() != 4) throw ValidationError("layout box must have 4 coordinates");
      f.boxes.push_back({v[0], v[1], v[2], v[3]});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed layout file " + path.string() + ": " + e.what());
  }
  for (std::size_t i = 0; i < f.boxes.size(); ++i) {
    if (!f.boxes[i].valid()) {
      throw ValidationError(path.string() + ": box " + std::to_string(i) + " is not normalized");
    }
  }
  return f;
}

void write_layout_file(const std::filesystem::path& path, const LayoutFile& layout) {
  nlohmann::json j;
  j["image"] = layout.image;
  j["width"] = layout.width;
  j["height"] = layout.height;
  j["category"] = layout.category;
  j["count"] = layout.count;
  j["boxes"] = nlohmann::json::array();
  for (const auto& b : layout.boxes) j["boxes"].push_back({b.x0, b.y0, b.x1, b.y1});
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace ql
