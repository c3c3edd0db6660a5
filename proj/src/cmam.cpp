// SPDX-License-Identifier: Apache-2.0
#include "ql/cmam.hpp"

#include "ql/error.hpp"

namespace ql {

template <typename T>
Cmam<T> Cmam<T>::create(Rng& rng, std::size_t d_text, std::size_t d_image, std::size_t heads) {
  Cmam m;
  m.self_attn = CrossAttention<T>::create(rng, d_text, d_text, d_text, d_text, heads, true);
  m.text_to_image = CrossAttention<T>::create(rng, d_text, d_image, d_text, d_text, heads, false);
  m.fc = Linear<T>::create(rng, d_text, d_text);
  m.image_to_text = CrossAttention<T>::create(rng, d_image, d_text, d_image, d_image, heads, false);
  m.heads = heads;
  return m;
}

template <typename T>
CmamOutput<T> Cmam<T>::forward(const Tensor<T>& text, const Tensor<T>& cls, CmamTrace<T>* trace) const {
  const std::size_t d_text = fc.in_features();
  const std::size_t d_image = image_to_text.q_proj.in_features();
  if (text.rank() != 2 || text.dim(1) != d_text) {
    throw DimensionError("cmam: text " + shape_str(text.shape()) + " needs " + std::to_string(d_text) + " channels");
  }
  if (cls.numel() != d_image) {
    throw DimensionError("cmam: CLS " + shape_str(cls.shape()) + " needs " + std::to_string(d_image) + " values");
  }
  auto cls_row = reshape(cls, {1, d_image});
  auto s = self_attn(text, text);
  auto mixed = text_to_image(s, cls_row);
  auto text_out = fc(mixed);
  auto image_out = image_to_text(cls_row, text_out);
  if (trace != nullptr) {
    trace->self_attended = s;
    trace->pre_fc = mixed;
  }
  return {text_out, reshape(image_out, {d_image})};
}

template <typename T>
void Cmam<T>::collect(const std::string& prefix, ParamList<T>& out) {
  self_attn.collect(prefix + ".self_attn", out);
  text_to_image.collect(prefix + ".text_to_image", out);
  fc.collect(prefix + ".fc", out);
  image_to_text.collect(prefix + ".image_to_text", out);
}

template struct Cmam<float>;
template struct Cmam<double>;

}  // namespace ql
