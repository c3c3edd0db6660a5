// SPDX-License-Identifier: Apache-2.0
//
// Toy diffusion backbone and harness: linear beta schedule, closed-form
// forward noising, a small U-shaped token denoiser with named blocks, the
// epsilon-prediction training step and a guided DDIM sampler.
#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ql/adapter.hpp"
#include "ql/optim.hpp"
#include "ql/rng.hpp"

namespace ql {

struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alpha_bars;

  static NoiseSchedule linear(std::size_t steps, double beta_start = 1e-4, double beta_end = 2e-2);
  std::size_t size() const { return betas.size(); }
};

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
template <typename T>
Tensor<T> forward_noise(const Tensor<T>& x0, std::size_t t, const Tensor<T>& eps, const NoiseSchedule& schedule);

template <typename T>
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Tensor<T> predict(const Tensor<T>& x_t, std::size_t t, const ConditionBundle<T>& cond) const = 0;
};

struct DenoiserShape {
  std::size_t tokens = 256;         // 16x16 latent grid
  std::size_t latent_channels = 12;
  std::size_t channels = 32;
  std::size_t heads = 8;
  std::size_t mlp_mult = 2;
  std::size_t text_dim = 64;
  std::size_t image_dim = 64;
};

template <typename T>
struct DenoiserBlock {
  std::string name;
  LayerNorm<T> mlp_norm;
  Linear<T> mlp_in;
  Linear<T> mlp_out;
  LayerNorm<T> attn_norm;
  TextBranchWeights<T> text;
  std::optional<IpBranchWeights<T>> ip;
  Linear<T> attn_out;
  Linear<T> skip;  // up blocks only

  void collect(const std::string& prefix, ParamList<T>& out, bool with_ip);
};

struct DenoiserTrace {
  std::vector<std::pair<std::string, DualBranchRecord>> blocks;
};

template <typename T>
class Denoiser : public NoisePredictor<T> {
 public:
  DenoiserShape shape;
  InjectionConfig injection;
  Linear<T> in_proj;
  Tensor<T> positional;  // [tokens, channels]
  Linear<T> time_in;
  Linear<T> time_out;
  std::vector<DenoiserBlock<T>> blocks;
  LayerNorm<T> out_norm;
  Linear<T> out_proj;

  static Denoiser create(Rng& rng, const DenoiserShape& shape, const InjectionConfig& injection);

  Tensor<T> predict(const Tensor<T>& x_t, std::size_t t, const ConditionBundle<T>& cond) const override {
    return forward(x_t, t, cond, nullptr);
  }
  /// x_t [tokens, latent_channels]
  Tensor<T> forward(const Tensor<T>& x_t, std::size_t t, const ConditionBundle<T>& cond,
                    DenoiserTrace* trace) const;

  DenoiserBlock<T>& block(const std::string& name);
  /// Everything except the IP branches.
  void collect_backbone(const std::string& prefix, ParamList<T>& out);
  void collect_ip(const std::string& prefix, ParamList<T>& out);
};

/// Sinusoidal timestep features of width dim (sin half, then cos half).
std::vector<double> timestep_features(std::size_t t, std::size_t dim);

template <typename T>
struct TrainingSample {
  Tensor<T> x0;
  ConditionBundle<T> cond;
};

struct TrainStepResult {
  double loss = 0;
  std::size_t dropped = 0;
  std::vector<std::size_t> timesteps;
};

/// One epsilon-prediction step over the batch. Each sample draws, in order, a
/// dropout coin, a timestep and its noise. A dropped sample sees a zero image
/// token. With an optimizer the mean loss is backpropagated and the optimizer
/// stepped; only tensors that require grad receive gradients.
template <typename T>
TrainStepResult training_step(const NoisePredictor<T>& model, std::span<const TrainingSample<T>> batch,
                              const NoiseSchedule& schedule, double dropout_rate, Rng& rng,
                              AdamW<T>* optimizer);

/// w * cond + (1 - w) * uncond
template <typename T>
Tensor<T> guided_epsilon(const Tensor<T>& cond, const Tensor<T>& uncond, double w);

/// Evenly spaced descending timesteps from T-1 down to 0.
std::vector<std::size_t> ddim_timesteps(std::size_t train_steps, std::size_t steps);

template <typename T>
using GuidanceObserver = std::function<void(std::size_t step, std::size_t t, const Tensor<T>& cond,
                                            const Tensor<T>& uncond, const Tensor<T>& guided)>;

struct SamplerOptions {
  double guidance = 5.0;
  std::size_t steps = 30;
};

/// Deterministic DDIM loop from seeded Gaussian noise; returns the final x0.
template <typename T>
Tensor<T> sample(const NoisePredictor<T>& model, const ConditionBundle<T>& cond,
                 const ConditionBundle<T>& uncond, const Shape& latent_shape, const NoiseSchedule& schedule,
                 const SamplerOptions& options, Rng& rng, const GuidanceObserver<T>& observer = {});

/// image [C, H, W] in [0,1] -> latent [(H/f)*(W/f), C*f*f] in [-1,1]
template <typename T>
Tensor<T> image_to_latent(const Tensor<T>& image, std::size_t factor);
/// Inverse of image_to_latent, clamped back into [0,1].
template <typename T>
Tensor<T> latent_to_image(const Tensor<T>& latent, std::size_t channels, std::size_t height, std::size_t width,
                          std::size_t factor);

}  // namespace ql
