// SPDX-License-Identifier: Apache-2.0
#include "ql/adapter.hpp"

#include <algorithm>

#include "ql/error.hpp"

namespace ql {

std::string to_string(InjectionPosition position) {
  switch (position) {
    case InjectionPosition::Down2: return "down2";
    case InjectionPosition::Down4: return "down4";
    case InjectionPosition::Mid: return "mid";
    case InjectionPosition::All: return "all";
  }
  return "down4";
}

InjectionPosition parse_injection_position(const std::string& text) {
  if (text == "down2") return InjectionPosition::Down2;
  if (text == "down4") return InjectionPosition::Down4;
  if (text == "mid") return InjectionPosition::Mid;
  if (text == "all") return InjectionPosition::All;
  throw ValidationError("unknown injection position '" + text + "' (expected down2, down4, mid or all)");
}

const std::vector<std::string>& denoiser_block_names() {
  static const std::vector<std::string> names{"down1", "down2", "down3", "down4", "mid",
                                              "up1",   "up2",   "up3",   "up4"};
  return names;
}

std::vector<std::string> InjectionConfig::sites() const {
  if (position == InjectionPosition::All) return denoiser_block_names();
  return {to_string(position)};
}

bool InjectionConfig::active(const std::string& block) const {
  const auto s = sites();
  return std::find(s.begin(), s.end(), block) != s.end();
}

double InjectionConfig::scale_at(const std::string& block) const {
  if (!active(block)) return 0.0;
  if (position == InjectionPosition::All && block != "down4") return 1.0;
  return ip_scale;
}

template <typename T>
FuseHead<T> FuseHead<T>::create(Rng& rng, std::size_t d_image, std::size_t d_text, std::size_t heads) {
  FuseHead f;
  f.layout_stage = CrossAttention<T>::create(rng, d_image, d_image, d_image, d_image, heads, true, d_image);
  f.text_stage = CrossAttention<T>::create(rng, d_image, d_text, d_image, d_image, heads, true, d_image);
  return f;
}

template <typename T>
void FuseHead<T>::zero_output() {
  for (auto* l : {&layout_stage.out_proj, &text_stage.out_proj}) {
    l->weight = Tensor<T>::zeros(l->weight.shape());
    l->bias = Tensor<T>::zeros(l->bias.shape());
  }
}

template <typename T>
Tensor<T> FuseHead<T>::operator()(const Tensor<T>& cls, const Tensor<T>& text,
                                  const Tensor<T>& layout_feature) const {
  const std::size_t d = layout_stage.q_proj.in_features();
  if (cls.numel() != d || layout_feature.numel() != d) {
    throw DimensionError("fuse: CLS " + shape_str(cls.shape()) + " and F_L " + shape_str(layout_feature.shape()) +
                         " must both hold " + std::to_string(d) + " values");
  }
  if (text.rank() != 2 || text.dim(1) != text_stage.k_proj.in_features()) {
    throw DimensionError("fuse: text " + shape_str(text.shape()) + " needs " +
                         std::to_string(text_stage.k_proj.in_features()) + " channels");
  }
  auto i0 = reshape(cls, {1, d});
  auto fl = reshape(layout_feature, {1, d});
  auto i1 = add(i0, layout_stage(i0, fl));
  return add(i1, text_stage(i1, text));
}

template <typename T>
void FuseHead<T>::collect(const std::string& prefix, ParamList<T>& out) {
  layout_stage.collect(prefix + ".layout_stage", out);
  text_stage.collect(prefix + ".text_stage", out);
}

template <typename T>
TextBranchWeights<T> TextBranchWeights<T>::create(Rng& rng, std::size_t d_latent, std::size_t d_text) {
  return {Linear<T>::create(rng, d_latent, d_latent, false), Linear<T>::create(rng, d_text, d_latent, false),
          Linear<T>::create(rng, d_text, d_latent, false)};
}

template <typename T>
void TextBranchWeights<T>::collect(const std::string& prefix, ParamList<T>& out) {
  q.collect(prefix + ".q", out);
  k.collect(prefix + ".k", out);
  v.collect(prefix + ".v", out);
}

template <typename T>
IpBranchWeights<T> IpBranchWeights<T>::create(Rng& rng, std::size_t d_latent, std::size_t d_image) {
  return {Linear<T>::create(rng, d_image, d_latent, false), Linear<T>::zeros(d_image, d_latent, false)};
}

template <typename T>
void IpBranchWeights<T>::collect(const std::string& prefix, ParamList<T>& out) {
  k.collect(prefix + ".k", out);
  v.collect(prefix + ".v", out);
}

template <typename T>
Tensor<T> dual_branch_attention(const Tensor<T>& latent, const Tensor<T>& text_cond,
                                const Tensor<T>& image_cond, double lambda,
                                const TextBranchWeights<T>& text, const IpBranchWeights<T>* ip,
                                std::size_t heads, DualBranchRecord* record) {
  if (latent.rank() != 2 || latent.dim(1) != text.q.in_features()) {
    throw DimensionError("dual-branch attention: latent " + shape_str(latent.shape()) + " needs " +
                         std::to_string(text.q.in_features()) + " channels");
  }
  if (!(lambda >= 0)) throw ValidationError("dual-branch attention: lambda must be >= 0, got " + std::to_string(lambda));
  auto q = text.q(latent);
  auto z = mha(q, text.k(text_cond), text.v(text_cond), heads, {}, record ? &record->text : nullptr);
  if (ip == nullptr || lambda == 0.0) return z;
  if (image_cond.rank() != 2 || image_cond.dim(0) != 1) {
    throw DimensionError("dual-branch attention: image condition must be a single token, got " +
                         shape_str(image_cond.shape()));
  }
  auto zf = mha(q, ip->k(image_cond), ip->v(image_cond), heads, {}, record ? &record->ip : nullptr);
  return add(z, scale(zf, static_cast<T>(lambda)));
}

template struct FuseHead<float>;
template struct FuseHead<double>;
template struct TextBranchWeights<float>;
template struct TextBranchWeights<double>;
template struct IpBranchWeights<float>;
template struct IpBranchWeights<double>;
template Tensor<float> dual_branch_attention(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                             double, const TextBranchWeights<float>&,
                                             const IpBranchWeights<float>*, std::size_t, DualBranchRecord*);
template Tensor<double> dual_branch_attention(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                              double, const TextBranchWeights<double>&,
                                              const IpBranchWeights<double>*, std::size_t, DualBranchRecord*);

}  // namespace ql
