// SPDX-License-Identifier: Apache-2.0
//
// Small stand-ins for the frozen image and text towers.
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ql/nn.hpp"
#include "ql/tensor.hpp"

namespace ql {

template <typename T>
struct ImageEncoding {
  Tensor<T> cls;      // [d_I]
  Tensor<T> patches;  // [h*w, d_I], row-major like patch_grid
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
};

template <typename T>
struct TextEncoding {
  Tensor<T> tokens;  // [n_T, d_T]
};

struct ImageEncoderShape {
  std::size_t channels = 3;
  std::size_t image_size = 32;
  std::size_t patch = 8;
  std::size_t dim = 64;
  std::size_t heads = 8;

  std::size_t grid() const { return image_size / patch; }
};

/// Patch embedding, one pre-norm self-attention block, attention-pooled CLS.
template <typename T>
struct ImageEncoder {
  ImageEncoderShape shape;
  Linear<T> patch_proj;
  Tensor<T> positional;  // [h*w, d_I]
  LayerNorm<T> norm;
  Linear<T> q_proj;
  Linear<T> k_proj;
  Linear<T> v_proj;
  Linear<T> out_proj;
  AttentionPool<T> pool;

  static ImageEncoder create(Rng& rng, const ImageEncoderShape& shape);
  /// image [C, H, W]
  ImageEncoding<T> encode(const Tensor<T>& image) const;
  void collect(const std::string& prefix, ParamList<T>& out);
};

/// Whitespace tokenizer over a fixed word list; index = token id.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words);

  /// Count words "one".."ten", shape nouns and a few edit verbs/colors.
  static Vocabulary builtin();
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::vector<std::size_t> tokenize(const std::string& text) const;
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Embedding lookup plus learned positional offsets. The empty prompt maps to
/// a dedicated learned null row.
template <typename T>
struct TextEncoder {
  Tensor<T> table;       // [vocab, d_T]
  Tensor<T> positional;  // [max_len, d_T]
  Tensor<T> null_token;  // [1, d_T]

  static TextEncoder create(Rng& rng, std::size_t vocab_size, std::size_t dim, std::size_t max_len);
  TextEncoding<T> encode(std::span<const std::size_t> ids) const;
  TextEncoding<T> empty() const { return {null_token}; }
  void collect(const std::string& prefix, ParamList<T>& out);
};

const std::vector<std::string>& count_words();

}  // namespace ql
