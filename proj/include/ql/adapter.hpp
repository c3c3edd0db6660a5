// SPDX-License-Identifier: Apache-2.0
//
// Adapter head and the dual-branch attention used at injection sites.
//
//   I'' = I_cls' + MHCA(I_cls', F_L)
//   F   = I''    + MHCA(I'', T')
//   Z   = Attn(Q, K_t, V_t) + lambda * Attn(Q, K_f, V_f)
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ql/nn.hpp"

namespace ql {

enum class InjectionPosition { Down2, Down4, Mid, All };

std::string to_string(InjectionPosition position);
/// Accepts "down2", "down4", "mid", "all".
InjectionPosition parse_injection_position(const std::string& text);

/// Denoiser block names in forward order.
const std::vector<std::string>& denoiser_block_names();

struct InjectionConfig {
  InjectionPosition position = InjectionPosition::Down4;
  double ip_scale = 1.0;

  std::vector<std::string> sites() const;
  bool active(const std::string& block) const;
  /// ip_scale at the selected site. Under `all`, only down4 takes ip_scale and
  /// every other site runs at 1.
  double scale_at(const std::string& block) const;
};

template <typename T>
struct ConditionBundle {
  Tensor<T> text;   // F_t [n_T, d_T]
  Tensor<T> image;  // F [1, d_I]
  double lambda = 0.8;
};

template <typename T>
struct FuseHead {
  CrossAttention<T> layout_stage;  // query I_cls', key/value F_L
  CrossAttention<T> text_stage;    // query I'', key/value T'

  static FuseHead create(Rng& rng, std::size_t d_image, std::size_t d_text, std::size_t heads);
  /// Zeroes both output projections, so the head returns I_cls'.
  void zero_output();

  /// cls [d_I], text [n_T, d_T], layout_feature [d_I] -> [1, d_I]
  Tensor<T> operator()(const Tensor<T>& cls, const Tensor<T>& text, const Tensor<T>& layout_feature) const;
  void collect(const std::string& prefix, ParamList<T>& out);
};

template <typename T>
struct TextBranchWeights {
  Linear<T> q;  // d_z -> d_z
  Linear<T> k;  // d_T -> d_z
  Linear<T> v;  // d_T -> d_z

  static TextBranchWeights create(Rng& rng, std::size_t d_latent, std::size_t d_text);
  void collect(const std::string& prefix, ParamList<T>& out);
};

template <typename T>
struct IpBranchWeights {
  Linear<T> k;  // d_I -> d_z
  Linear<T> v;  // d_I -> d_z, zero at a fresh start

  static IpBranchWeights create(Rng& rng, std::size_t d_latent, std::size_t d_image);
  void collect(const std::string& prefix, ParamList<T>& out);
};

struct DualBranchRecord {
  AttentionRecord text;
  AttentionRecord ip;
};

/// latent [n_z, d_z] -> [n_z, d_z]. With ip == nullptr or lambda == 0 the
/// result is the text branch alone.
template <typename T>
Tensor<T> dual_branch_attention(const Tensor<T>& latent, const Tensor<T>& text_cond,
                                const Tensor<T>& image_cond, double lambda,
                                const TextBranchWeights<T>& text, const IpBranchWeights<T>* ip,
                                std::size_t heads, DualBranchRecord* record = nullptr);

}  // namespace ql
