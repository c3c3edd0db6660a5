// SPDX-License-Identifier: Apache-2.0
#include "ql/encoders.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ql/error.hpp"

namespace ql {

template <typename T>
ImageEncoder<T> ImageEncoder<T>::create(Rng& rng, const ImageEncoderShape& shape) {
  if (shape.patch == 0 || shape.image_size % shape.patch != 0) {
    throw ValidationError("image encoder: image size " + std::to_string(shape.image_size) +
                          " is not divisible by patch " + std::to_string(shape.patch));
  }
  ImageEncoder e;
  e.shape = shape;
  const std::size_t tokens = shape.grid() * shape.grid();
  const std::size_t d = shape.dim;
  e.patch_proj = Linear<T>::create(rng, shape.channels * shape.patch * shape.patch, d);
  e.positional = random_normal<T>(rng, {tokens, d}, 0.5);
  e.norm = LayerNorm<T>::create(d);
  e.q_proj = Linear<T>::create(rng, d, d);
  e.k_proj = Linear<T>::create(rng, d, d);
  e.v_proj = Linear<T>::create(rng, d, d);
  e.out_proj = Linear<T>::create(rng, d, d);
  e.pool = AttentionPool<T>::create(rng, tokens, d, d, shape.heads);
  return e;
}

template <typename T>
ImageEncoding<T> ImageEncoder<T>::encode(const Tensor<T>& image) const {
  const auto& s = image.shape();
  if (s.size() != 3 || s[0] != shape.channels) {
    throw DimensionError("encode_image: expected [" + std::to_string(shape.channels) + ",H,W], got " +
                         shape_str(s));
  }
  const std::size_t p = shape.patch;
  if (s[1] % p != 0 || s[2] % p != 0) {
    throw ValidationError("encode_image: " + shape_str(s) + " is not divisible by patch size " +
                          std::to_string(p));
  }
  const std::size_t gh = s[1] / p;
  const std::size_t gw = s[2] / p;
  if (gh * gw != positional.dim(0)) {
    throw DimensionError("encode_image: image " + shape_str(s) + " gives a " + std::to_string(gh) + "x" +
                         std::to_string(gw) + " grid, encoder expects " + std::to_string(shape.grid()) +
                         "x" + std::to_string(shape.grid()));
  }
  // Pixel blocks flattened as (channel, dy, dx).
  const std::size_t c = s[0];
  const std::size_t width = s[2];
  std::vector<std::size_t> order(gh * gw * c * p * p);
  for (std::size_t u = 0; u < gh; ++u)
    for (std::size_t v = 0; v < gw; ++v)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx)
            order[((u * gw + v) * c + ch) * p * p + dy * p + dx] = (ch * s[1] + u * p + dy) * width + v * p + dx;
  auto x = reshape(gather_rows(reshape(image, {image.numel(), 1}), std::span<const std::size_t>(order)),
                   {gh * gw, c * p * p});

  auto h = add(patch_proj(x), positional);
  auto z = norm(h);
  h = add(h, out_proj(mha(q_proj(z), k_proj(z), v_proj(z), shape.heads)));
  auto cls = reshape(pool(h), {shape.dim});
  return {cls, h, gh, gw};
}

template <typename T>
void ImageEncoder<T>::collect(const std::string& prefix, ParamList<T>& out) {
  patch_proj.collect(prefix + ".patch_proj", out);
  out.push_back({prefix + ".positional", &positional});
  norm.collect(prefix + ".norm", out);
  q_proj.collect(prefix + ".q_proj", out);
  k_proj.collect(prefix + ".k_proj", out);
  v_proj.collect(prefix + ".v_proj", out);
  out_proj.collect(prefix + ".out_proj", out);
  pool.collect(prefix + ".pool", out);
}

template struct ImageEncoder<float>;
template struct ImageEncoder<double>;

// ---- text ------------------------------------------------------------------

const std::vector<std::string>& count_words() {
  static const std::vector<std::string> words{"one", "two",   "three", "four", "five",
                                              "six", "seven", "eight", "nine", "ten"};
  return words;
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (words_[i].empty()) throw ValidationError("vocabulary entry " + std::to_string(i) + " is empty");
    if (!index_.emplace(words_[i], i).second) throw ValidationError("duplicate vocabulary entry '" + words_[i] + "'");
  }
}

Vocabulary Vocabulary::builtin() {
  std::vector<std::string> words = count_words();
  for (const char* w : {"circle", "circles", "square", "squares", "a", "an", "of", "make", "turn",
                        "into", "change", "to", "add", "remove", "red", "green", "blue", "yellow",
                        "white", "apple", "apples", "egg", "eggs", "cat", "cats", "dog", "dogs"}) {
    words.emplace_back(w);
  }
  return Vocabulary(std::move(words));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open vocabulary " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    return Vocabulary(j.get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed vocabulary " + path.string() + ": " + e.what());
  }
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << nlohmann::json(words_).dump(2) << '\n';
}

std::vector<std::size_t> Vocabulary::tokenize(const std::string& text) const {
  std::istringstream in(text);
  std::vector<std::size_t> ids;
  std::string word;
  while (in >> word) {
    auto it = index_.find(word);
    if (it == index_.end()) throw ValidationError("unknown token '" + word + "'");
    ids.push_back(it->second);
  }
  return ids;
}

template <typename T>
TextEncoder<T> TextEncoder<T>::create(Rng& rng, std::size_t vocab_size, std::size_t dim, std::size_t max_len) {
  TextEncoder e;
  e.table = random_normal<T>(rng, {vocab_size, dim}, 1.0);
  e.positional = random_normal<T>(rng, {max_len, dim}, 0.1);
  e.null_token = random_normal<T>(rng, {1, dim}, 1.0);
  return e;
}

template <typename T>
TextEncoding<T> TextEncoder<T>::encode(std::span<const std::size_t> ids) const {
  if (ids.empty()) return empty();
  if (ids.size() > positional.dim(0)) {
    throw ValidationError("prompt has " + std::to_string(ids.size()) + " tokens, limit is " +
                          std::to_string(positional.dim(0)));
  }
  for (auto id : ids) {
    if (id >= table.dim(0)) throw ValidationError("unknown token id " + std::to_string(id));
  }
  return {add(gather_rows(table, ids), slice(positional, 0, 0, ids.size()))};
}

template <typename T>
void TextEncoder<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".table", &table});
  out.push_back({prefix + ".positional", &positional});
  out.push_back({prefix + ".null_token", &null_token});
}

template struct TextEncoder<float>;
template struct TextEncoder<double>;

}  // namespace ql
