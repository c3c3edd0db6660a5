// SPDX-License-Identifier: Apache-2.0
//
// Image-layout fusion: patch tokens attend over themselves and over the
// layout slots, with shared box embeddings supplying positions, then the
// per-patch outputs are attention-pooled to one d_I vector F_L.
//
//   Q = Q_I (+)c P_I
//   K = (K_I (+)c P_I) (+)s (K_L (+)c P_L)
//   V = V_I (+)s V_L
//
// (+)c joins channels and (+)s joins sequences. Padded layout slots are masked
// out of the key sequence, so F_L does not depend on the layout capacity.
#pragma once

#include "ql/layout.hpp"
#include "ql/nn.hpp"

namespace ql {

struct IlfmTrace {
  AttentionRecord fusion;
  AttentionRecord pool;
};

template <typename T>
struct Ilfm {
  LayerNorm<T> norm;
  Linear<T> q_image;  // pointwise projections of Norm(I), d_I -> d_I
  Linear<T> k_image;
  Linear<T> v_image;
  Linear<T> k_layout;  // pointwise projections of L, d_L -> d_I
  Linear<T> v_layout;
  AttentionPool<T> pool;
  std::size_t heads = 1;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;

  /// heads must divide both d_image and 2 * d_image.
  static Ilfm create(Rng& rng, std::size_t d_image, std::size_t d_layout, std::size_t grid_h,
                     std::size_t grid_w, std::size_t heads);

  /// patches [h*w, d_I] -> F_L [d_I]
  Tensor<T> forward(const Tensor<T>& patches, std::size_t grid_h, std::size_t grid_w,
                    const LayoutSet& layout, const LayoutEmbedder<T>& embedder,
                    IlfmTrace* trace = nullptr) const;
  void collect(const std::string& prefix, ParamList<T>& out);
};

}  // namespace ql
