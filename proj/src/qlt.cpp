// SPDX-License-Identifier: Apache-2.0
#include "ql/qlt.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ql/error.hpp"

namespace ql {
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'Q', 'L', 'T', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> encode_qlt(const Shape& shape, std::span<const float> values) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("QLT: shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto e : shape) put_u32(out, static_cast<std::uint32_t>(e));
  for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

QltArray decode_qlt(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ValidationError("QLT: bad magic or truncated header");
  }
  const std::uint32_t rank = get_u32(bytes, 4);
  if (bytes.size() < 8 + 4ull * rank) throw ValidationError("QLT: truncated extents");
  QltArray a;
  for (std::uint32_t i = 0; i < rank; ++i) a.shape.push_back(get_u32(bytes, 8 + 4 * i));
  const std::size_t n = shape_numel(a.shape);
  const std::size_t payload = 8 + 4ull * rank;
  if (bytes.size() != payload + 4 * n) {
    throw ValidationError("QLT: payload holds " + std::to_string((bytes.size() - payload) / 4) +
                          " floats, shape " + shape_str(a.shape) + " needs " + std::to_string(n));
  }
  a.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) a.values[i] = std::bit_cast<float>(get_u32(bytes, payload + 4 * i));
  return a;
}

void write_qlt(const fs::path& path, const Shape& shape, std::span<const float> values) {
  const auto bytes = encode_qlt(shape, values);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("short write to " + path.string());
}

QltArray read_qlt(const fs::path& path) {
  const auto bytes = read_bytes(path);
  try {
    return decode_qlt(bytes);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

template <typename T>
void save_tensor(const fs::path& path, const Tensor<T>& t) {
  std::vector<float> v(t.numel());
  auto d = t.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(d[i]);
  write_qlt(path, t.shape(), v);
}

template <typename T>
Tensor<T> load_tensor(const fs::path& path) {
  auto a = read_qlt(path);
  std::vector<T> v(a.values.begin(), a.values.end());
  return Tensor<T>(a.shape, std::move(v));
}

template <typename T>
void save_checkpoint(const fs::path& dir, const ParamList<T>& params, const nlohmann::json& extra) {
  fs::create_directories(dir);
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& p : params) {
    const std::string file = p.name + ".qlt";
    save_tensor(dir / file, *p.tensor);
    tensors[p.name] = {{"file", file}, {"shape", p.tensor->shape()}};
  }
  nlohmann::json manifest = extra.is_object() ? extra : nlohmann::json::object();
  manifest["tensors"] = std::move(tensors);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw ValidationError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

nlohmann::json read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw ValidationError("checkpoint manifest not found: " + path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed manifest " + path.string() + ": " + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("tensors") || !manifest["tensors"].is_object()) {
    throw ValidationError("manifest " + path.string() + " has no \"tensors\" object");
  }
  return manifest;
}

template <typename T>
nlohmann::json load_checkpoint(const fs::path& dir, const ParamList<T>& params) {
  auto manifest = read_manifest(dir);
  const auto& tensors = manifest["tensors"];
  for (const auto& p : params) {
    if (!tensors.contains(p.name)) throw ValidationError("checkpoint has no parameter '" + p.name + "'");
    const nlohmann::json& entry = tensors[p.name];
    Shape declared;
    try {
      declared = entry.at("shape").get<Shape>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("manifest entry for '" + p.name + "' is malformed");
    }
    if (declared != p.tensor->shape()) {
      throw ValidationError("parameter '" + p.name + "': checkpoint shape " + shape_str(declared) +
                            " != model shape " + shape_str(p.tensor->shape()));
    }
    QltArray a;
    try {
      a = read_qlt(dir / entry.at("file").get<std::string>());
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("manifest entry for '" + p.name + "' has no file");
    } catch (const ValidationError& e) {
      throw ValidationError("parameter '" + p.name + "': " + e.what());
    }
    if (a.shape != declared) {
      throw ValidationError("parameter '" + p.name + "': file shape " + shape_str(a.shape) +
                            " != manifest shape " + shape_str(declared));
    }
    auto dst = p.tensor->mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(a.values[i]);
  }
  return manifest;
}

template void save_tensor<float>(const fs::path&, const Tensor<float>&);
template void save_tensor<double>(const fs::path&, const Tensor<double>&);
template Tensor<float> load_tensor<float>(const fs::path&);
template Tensor<double> load_tensor<double>(const fs::path&);
template void save_checkpoint<float>(const fs::path&, const ParamList<float>&, const nlohmann::json&);
template void save_checkpoint<double>(const fs::path&, const ParamList<double>&, const nlohmann::json&);
template nlohmann::json load_checkpoint<float>(const fs::path&, const ParamList<float>&);
template nlohmann::json load_checkpoint<double>(const fs::path&, const ParamList<double>&);

}  // namespace ql
