// SPDX-License-Identifier: Apache-2.0
//
// Cross-modal augmentation, a plain four-stage pipeline:
//   S      = MHSA(T)
//   T'     = FC(MHCA(S, I_cls))
//   I_cls' = MHCA(I_cls, T')
// I_cls is a single key/value position wherever it is attended to.
#pragma once

#include "ql/nn.hpp"

namespace ql {

template <typename T>
struct CmamOutput {
  Tensor<T> text;   // T'     [n_T, d_T]
  Tensor<T> image;  // I_cls' [d_I]
};

template <typename T>
struct CmamTrace {
  Tensor<T> self_attended;  // S
  Tensor<T> pre_fc;         // MHCA(S, I_cls)
};

template <typename T>
struct Cmam {
  CrossAttention<T> self_attn;      // MHSA over T, output projection included
  CrossAttention<T> text_to_image;  // query T, key/value I_cls
  Linear<T> fc;
  CrossAttention<T> image_to_text;  // query I_cls, key/value T'
  std::size_t heads = 1;

  static Cmam create(Rng& rng, std::size_t d_text, std::size_t d_image, std::size_t heads);

  /// text [n_T, d_T], cls [d_I]
  CmamOutput<T> forward(const Tensor<T>& text, const Tensor<T>& cls, CmamTrace<T>* trace = nullptr) const;
  void collect(const std::string& prefix, ParamList<T>& out);
};

}  // namespace ql
