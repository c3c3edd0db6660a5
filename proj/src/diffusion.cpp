// SPDX-License-Identifier: Apache-2.0
#include "ql/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ql/error.hpp"

namespace ql {

NoiseSchedule NoiseSchedule::linear(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 2) throw ValidationError("noise schedule needs at least 2 steps, got " + std::to_string(steps));
  if (!(beta_start > 0 && beta_start < beta_end && beta_end < 1)) {
    throw ValidationError("noise schedule needs 0 < beta_start < beta_end < 1");
  }
  NoiseSchedule s;
  s.betas.resize(steps);
  s.alpha_bars.resize(steps);
  double running = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    s.betas[i] = beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(steps - 1);
    running *= 1.0 - s.betas[i];
    s.alpha_bars[i] = running;
  }
  return s;
}

template <typename T>
Tensor<T> forward_noise(const Tensor<T>& x0, std::size_t t, const Tensor<T>& eps, const NoiseSchedule& schedule) {
  if (t >= schedule.size()) {
    throw ValidationError("timestep " + std::to_string(t) + " out of range [0, " + std::to_string(schedule.size()) + ")");
  }
  if (x0.shape() != eps.shape()) {
    throw DimensionError("forward noise: x0 " + shape_str(x0.shape()) + " vs eps " + shape_str(eps.shape()));
  }
  const double a = schedule.alpha_bars[t];
  return add(scale(x0, static_cast<T>(std::sqrt(a))), scale(eps, static_cast<T>(std::sqrt(1.0 - a))));
}

std::vector<double> timestep_features(std::size_t t, std::size_t dim) {
  std::vector<double> out(dim, 0.0);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    out[i] = std::sin(static_cast<double>(t) * freq);
    out[half + i] = std::cos(static_cast<double>(t) * freq);
  }
  return out;
}

template <typename T>
void DenoiserBlock<T>::collect(const std::string& prefix, ParamList<T>& out, bool with_ip) {
  if (!with_ip) {
    mlp_norm.collect(prefix + ".mlp_norm", out);
    mlp_in.collect(prefix + ".mlp_in", out);
    mlp_out.collect(prefix + ".mlp_out", out);
    attn_norm.collect(prefix + ".attn_norm", out);
    text.collect(prefix + ".text", out);
    attn_out.collect(prefix + ".attn_out", out);
    if (skip.weight.defined()) skip.collect(prefix + ".skip", out);
  } else if (ip) {
    ip->collect(prefix + ".ip", out);
  }
}

template <typename T>
Denoiser<T> Denoiser<T>::create(Rng& rng, const DenoiserShape& shape, const InjectionConfig& injection) {
  const std::size_t c = shape.channels;
  if (shape.heads == 0 || c % shape.heads != 0) {
    throw DimensionError("denoiser: heads=" + std::to_string(shape.heads) + " must divide channels=" + std::to_string(c));
  }
  Denoiser d;
  d.shape = shape;
  d.injection = injection;
  d.in_proj = Linear<T>::create(rng, shape.latent_channels, c);
  d.positional = random_normal<T>(rng, {shape.tokens, c}, 0.1);
  d.time_in = Linear<T>::create(rng, c, c);
  d.time_out = Linear<T>::create(rng, c, c);
  for (const auto& name : denoiser_block_names()) {
    DenoiserBlock<T> b;
    b.name = name;
    b.mlp_norm = LayerNorm<T>::create(c);
    b.mlp_in = Linear<T>::create(rng, c, c * shape.mlp_mult);
    b.mlp_out = Linear<T>::create(rng, c * shape.mlp_mult, c);
    b.attn_norm = LayerNorm<T>::create(c);
    b.text = TextBranchWeights<T>::create(rng, c, shape.text_dim);
    b.attn_out = Linear<T>::create(rng, c, c);
    if (name.rfind("up", 0) == 0) b.skip = Linear<T>::create(rng, c, c);
    Rng ip_rng = rng.fork(0x1b00 + d.blocks.size());
    if (injection.active(name)) b.ip = IpBranchWeights<T>::create(ip_rng, c, shape.image_dim);
    d.blocks.push_back(std::move(b));
  }
  d.out_norm = LayerNorm<T>::create(c);
  d.out_proj = Linear<T>::create(rng, c, shape.latent_channels);
  return d;
}

template <typename T>
Tensor<T> Denoiser<T>::forward(const Tensor<T>& x_t, std::size_t t, const ConditionBundle<T>& cond,
                               DenoiserTrace* trace) const {
  if (x_t.rank() != 2 || x_t.dim(0) != shape.tokens || x_t.dim(1) != shape.latent_channels) {
    throw DimensionError("denoiser: x_t " + shape_str(x_t.shape()) + " expected [" + std::to_string(shape.tokens) +
                         ", " + std::to_string(shape.latent_channels) + "]");
  }
  const auto feat = timestep_features(t, shape.channels);
  auto temb = time_out(silu(time_in(Tensor<T>::from_doubles({1, shape.channels}, feat))));
  auto h = add(add(in_proj(x_t), positional), temb);

  std::vector<Tensor<T>> skips;
  for (const auto& b : blocks) {
    if (b.skip.weight.defined()) {
      h = add(h, b.skip(skips.back()));
      skips.pop_back();
    }
    h = add(h, b.mlp_out(silu(b.mlp_in(b.mlp_norm(h)))));
    DualBranchRecord* rec = nullptr;
    if (trace != nullptr) {
      trace->blocks.emplace_back(b.name, DualBranchRecord{});
      rec = &trace->blocks.back().second;
    }
    const double lambda = cond.lambda * injection.scale_at(b.name);
    auto a = dual_branch_attention(b.attn_norm(h), cond.text, cond.image, lambda, b.text,
                                   b.ip ? &*b.ip : nullptr, shape.heads, rec);
    h = add(h, b.attn_out(a));
    if (b.name.rfind("down", 0) == 0) skips.push_back(h);
  }
  return out_proj(out_norm(h));
}

template <typename T>
DenoiserBlock<T>& Denoiser<T>::block(const std::string& name) {
  for (auto& b : blocks) {
    if (b.name == name) return b;
  }
  throw ValidationError("denoiser has no block named '" + name + "'");
}

template <typename T>
void Denoiser<T>::collect_backbone(const std::string& prefix, ParamList<T>& out) {
  in_proj.collect(prefix + ".in_proj", out);
  out.push_back({prefix + ".positional", &positional});
  time_in.collect(prefix + ".time_in", out);
  time_out.collect(prefix + ".time_out", out);
  for (auto& b : blocks) b.collect(prefix + "." + b.name, out, false);
  out_norm.collect(prefix + ".out_norm", out);
  out_proj.collect(prefix + ".out_proj", out);
}

template <typename T>
void Denoiser<T>::collect_ip(const std::string& prefix, ParamList<T>& out) {
  for (auto& b : blocks) b.collect(prefix + "." + b.name, out, true);
}

template <typename T>
TrainStepResult training_step(const NoisePredictor<T>& model, std::span<const TrainingSample<T>> batch,
                              const NoiseSchedule& schedule, double dropout_rate, Rng& rng,
                              AdamW<T>* optimizer) {
  if (batch.empty()) throw ValidationError("training step needs a non-empty batch");
  if (!(dropout_rate >= 0 && dropout_rate <= 1)) {
    throw ValidationError("dropout rate must lie in [0, 1], got " + std::to_string(dropout_rate));
  }
  TrainStepResult result;
  if (optimizer != nullptr) optimizer->zero_grad();
  Tensor<T> total;
  try {
    for (const auto& s : batch) {
      const bool drop = rng.uniform() < dropout_rate;
      const std::size_t t = rng.below(schedule.size());
      result.timesteps.push_back(t);
      auto eps = Tensor<T>::from_doubles(s.x0.shape(), rng.normals(s.x0.numel()));
      auto x_t = forward_noise(s.x0, t, eps, schedule);
      ConditionBundle<T> cond = s.cond;
      if (drop) {
        ++result.dropped;
        cond.image = Tensor<T>::zeros(s.cond.image.shape());
      }
      auto l = mse(model.predict(x_t, t, cond), eps);
      total = total.defined() ? add(total, l) : l;
    }
    total = scale(total, static_cast<T>(1.0 / static_cast<double>(batch.size())));
  } catch (const NumericalError& e) {
    std::string ts;
    for (auto t : result.timesteps) ts += (ts.empty() ? "" : ",") + std::to_string(t);
    throw NumericalError(std::string("training step aborted (timesteps ") + ts + "): " + e.what());
  }
  result.loss = static_cast<double>(total.item());
  if (!std::isfinite(result.loss)) throw NumericalError("training step produced a non-finite loss");
  if (optimizer != nullptr && total.requires_grad()) {
    total.backward();
    optimizer->step();
  }
  return result;
}

template <typename T>
Tensor<T> guided_epsilon(const Tensor<T>& cond, const Tensor<T>& uncond, double w) {
  if (cond.shape() != uncond.shape()) {
    throw DimensionError("guidance: cond " + shape_str(cond.shape()) + " vs uncond " + shape_str(uncond.shape()));
  }
  return add(scale(cond, static_cast<T>(w)), scale(uncond, static_cast<T>(1.0 - w)));
}

std::vector<std::size_t> ddim_timesteps(std::size_t train_steps, std::size_t steps) {
  if (steps == 0) throw ValidationError("sampler needs at least one step");
  if (steps > train_steps) {
    throw ValidationError("sampler steps " + std::to_string(steps) + " exceed schedule length " + std::to_string(train_steps));
  }
  std::vector<std::size_t> out(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const std::size_t k = steps - 1 - i;
    out[i] = steps == 1 ? train_steps - 1 : (k * (train_steps - 1) + (steps - 1) / 2) / (steps - 1);
  }
  return out;
}

template <typename T>
Tensor<T> sample(const NoisePredictor<T>& model, const ConditionBundle<T>& cond, const ConditionBundle<T>& uncond,
                 const Shape& latent_shape, const NoiseSchedule& schedule, const SamplerOptions& options, Rng& rng,
                 const GuidanceObserver<T>& observer) {
  NoGradGuard guard;
  const auto ts = ddim_timesteps(schedule.size(), options.steps);
  auto x = Tensor<T>::from_doubles(latent_shape, rng.normals(shape_numel(latent_shape)));
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const std::size_t t = ts[i];
    auto c = model.predict(x, t, cond);
    auto u = model.predict(x, t, uncond);
    auto e = guided_epsilon(c, u, options.guidance);
    if (observer) observer(i, t, c, u, e);
    const double a = schedule.alpha_bars[t];
    const double a_prev = i + 1 < ts.size() ? schedule.alpha_bars[ts[i + 1]] : 1.0;
    std::vector<T> next(x.numel());
    auto xd = x.data();
    auto ed = e.data();
    for (std::size_t j = 0; j < next.size(); ++j) {
      double x0 = (static_cast<double>(xd[j]) - std::sqrt(1.0 - a) * static_cast<double>(ed[j])) / std::sqrt(a);
      x0 = std::clamp(x0, -1.0, 1.0);
      next[j] = static_cast<T>(std::sqrt(a_prev) * x0 + std::sqrt(1.0 - a_prev) * static_cast<double>(ed[j]));
    }
    x = Tensor<T>(latent_shape, std::move(next));
  }
  return x;
}

template <typename T>
Tensor<T> image_to_latent(const Tensor<T>& image, std::size_t f) {
  if (image.rank() != 3 || f == 0 || image.dim(1) % f != 0 || image.dim(2) % f != 0) {
    throw DimensionError("image " + shape_str(image.shape()) + " cannot be folded by " + std::to_string(f));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const std::size_t gh = h / f, gw = w / f, lc = c * f * f;
  std::vector<T> out(gh * gw * lc);
  auto src = image.data();
  for (std::size_t r = 0; r < gh; ++r) {
    for (std::size_t q = 0; q < gw; ++q) {
      T* dst = out.data() + (r * gw + q) * lc;
      std::size_t k = 0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t dy = 0; dy < f; ++dy) {
          for (std::size_t dx = 0; dx < f; ++dx) {
            dst[k++] = T(2) * src[(ch * h + r * f + dy) * w + q * f + dx] - T(1);
          }
        }
      }
    }
  }
  return Tensor<T>({gh * gw, lc}, std::move(out));
}

template <typename T>
Tensor<T> latent_to_image(const Tensor<T>& latent, std::size_t c, std::size_t h, std::size_t w, std::size_t f) {
  if (f == 0 || h % f != 0 || w % f != 0 || latent.rank() != 2 || latent.dim(0) != (h / f) * (w / f) ||
      latent.dim(1) != c * f * f) {
    throw DimensionError("latent " + shape_str(latent.shape()) + " does not unfold to [" + std::to_string(c) + ", " +
                         std::to_string(h) + ", " + std::to_string(w) + "]");
  }
  const std::size_t gw = w / f, lc = c * f * f;
  std::vector<T> out(c * h * w);
  auto src = latent.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t token = (y / f) * gw + x / f;
        const std::size_t k = (ch * f + y % f) * f + x % f;
        const T v = (src[token * lc + k] + T(1)) / T(2);
        out[(ch * h + y) * w + x] = std::clamp(v, T(0), T(1));
      }
    }
  }
  return Tensor<T>({c, h, w}, std::move(out));
}

#define QL_INSTANTIATE_DIFFUSION(T)                                                                           \
  template Tensor<T> forward_noise(const Tensor<T>&, std::size_t, const Tensor<T>&, const NoiseSchedule&);     \
  template struct DenoiserBlock<T>;                                                                           \
  template class Denoiser<T>;                                                                                 \
  template TrainStepResult training_step(const NoisePredictor<T>&, std::span<const TrainingSample<T>>,         \
                                         const NoiseSchedule&, double, Rng&, AdamW<T>*);                      \
  template Tensor<T> guided_epsilon(const Tensor<T>&, const Tensor<T>&, double);                              \
  template Tensor<T> sample(const NoisePredictor<T>&, const ConditionBundle<T>&, const ConditionBundle<T>&,    \
                            const Shape&, const NoiseSchedule&, const SamplerOptions&, Rng&,                  \
                            const GuidanceObserver<T>&);                                                      \
  template Tensor<T> image_to_latent(const Tensor<T>&, std::size_t);                                          \
  template Tensor<T> latent_to_image(const Tensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t);

QL_INSTANTIATE_DIFFUSION(float)
QL_INSTANTIATE_DIFFUSION(double)

}  // namespace ql
