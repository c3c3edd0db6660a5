// SPDX-License-Identifier: Apache-2.0
//
// The assembled toy system: frozen encoders, the adapter head that produces
// the condition token F, and the denoiser carrying the IP branches.
#pragma once

#include <filesystem>
#include <optional>
#include <span>

#include <json.hpp>

#include "ql/cmam.hpp"
#include "ql/config.hpp"
#include "ql/diffusion.hpp"
#include "ql/encoders.hpp"
#include "ql/ilfm.hpp"
#include "ql/layout.hpp"

namespace ql {

template <typename T>
struct AdapterTrace {
  Tensor<T> layout_feature;  // F_L
  CmamOutput<T> cmam;
  IlfmTrace ilfm;
};

template <typename T>
struct QlModel {
  ModelConfig config;
  std::size_t vocab_size = 0;
  std::uint64_t seed = 0;
  std::uint64_t ip_seed = 0;
  ImageEncoder<T> image_encoder;
  TextEncoder<T> text_encoder;
  LayoutEmbedder<T> layout;
  Ilfm<T> ilfm;
  Cmam<T> cmam;
  FuseHead<T> fuse;
  Denoiser<T> denoiser;

  static QlModel create(const ModelConfig& config, std::size_t vocab_size, std::uint64_t seed);

  /// image [C, H, W] in [0,1] and its caption -> F [1, d_I]
  Tensor<T> condition(const Tensor<T>& image, const LayoutSet& layout_set, std::span<const std::size_t> caption,
                      AdapterTrace<T>* trace = nullptr) const;
  /// An empty prompt selects the null text token.
  ConditionBundle<T> bundle(const Tensor<T>& image_token, std::span<const std::size_t> prompt, double lambda) const;
  /// Null text token and a zero image token.
  ConditionBundle<T> unconditional(double lambda) const;

  ParamList<T> parameters();
  /// K/V of the IP branches at the active injection sites.
  ParamList<T> ip_parameters();
  /// Denoiser weights outside the IP branches.
  ParamList<T> backbone_parameters();
  /// Marks exactly `trainable` as requiring grad.
  void set_trainable(const ParamList<T>& trainable);

  /// {"init_seed": ..., "sites": {site: [names]}}
  nlohmann::json ip_manifest();
};

template <typename T>
void save_model(const std::filesystem::path& dir, QlModel<T>& model,
                const nlohmann::json& extra = nlohmann::json::object());
template <typename T>
QlModel<T> load_model(const std::filesystem::path& dir);

/// Loads the IP branches from a checkpoint directory, or, without one,
/// draws them afresh from `seed` (keys random, values zero).
template <typename T>
void load_pretrained_ip_weights(QlModel<T>& model, const std::optional<std::filesystem::path>& checkpoint,
                                std::uint64_t seed);

}  // namespace ql
