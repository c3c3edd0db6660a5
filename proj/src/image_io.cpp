// SPDX-License-Identifier: Apache-2.0
#include "ql/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "ql/error.hpp"
#include "ql/qlt.hpp"

namespace ql {

void write_ppm(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("ppm output needs a [3, H, W] image, got " + shape_str(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "P6\n" << w << ' ' << h << "\n255\n";
  auto px = image.data();
  std::string row(w * 3, '\0');
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(px[(c * h + y) * w + x], 0.0f, 1.0f);
        row[x * 3 + c] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
      }
    }
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
}

Tensor<float> read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w == 0 || h == 0 || maxval != 255) {
    throw ValidationError(path.string() + " is not an 8-bit binary PPM");
  }
  in.get();
  std::vector<unsigned char> bytes(w * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw ValidationError(path.string() + " is truncated");
  std::vector<float> out(bytes.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out[(c * h + y) * w + x] = static_cast<float>(bytes[(y * w + x) * 3 + c]) / 255.0f;
    }
  }
  return Tensor<float>({3, h, w}, std::move(out));
}

Tensor<float> read_image(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".ppm") return read_ppm(path);
  if (ext == ".qlt") return load_tensor<float>(path);
  throw ValidationError("unsupported image format '" + ext + "' (expected .ppm or .qlt)");
}

}  // namespace ql
