// SPDX-License-Identifier: Apache-2.0
#include "ql/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>

#include "ql/error.hpp"

namespace ql {

namespace {

void require_positive(std::size_t v, const char* name) {
  if (v == 0) throw ValidationError(std::string(name) + " must be positive");
}

void require_divides(std::size_t d, std::size_t n, const std::string& what) {
  if (d == 0 || n % d != 0) {
    throw ValidationError(what + ": " + std::to_string(d) + " does not divide " + std::to_string(n));
  }
}

template <typename V>
void take(const nlohmann::json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config key '") + key + "': " + e.what());
  }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const char* where) {
  if (!j.is_object()) throw ValidationError(std::string(where) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ValidationError(std::string("unknown key '") + key + "' in " + where);
  }
}

}  // namespace

void ModelConfig::validate() const {
  require_positive(image_size, "image_size");
  require_positive(image_channels, "image_channels");
  require_positive(d_image, "d_I");
  require_positive(d_text, "d_T");
  require_positive(d_layout, "d_L");
  require_positive(max_boxes, "max_n");
  require_positive(max_text_len, "max_text_len");
  require_positive(denoiser_channels, "denoiser_channels");
  require_positive(mlp_mult, "mlp_mult");
  require_divides(patch, image_size, "patch size");
  require_divides(latent_factor, image_size, "latent factor");
  require_divides(heads, d_image, "heads vs d_I");
  require_divides(heads, d_text, "heads vs d_T");
  require_divides(denoiser_heads, denoiser_channels, "denoiser heads vs channels");
  if (train_timesteps < 2) throw ValidationError("train_timesteps must be at least 2");
  if (!(beta_start > 0 && beta_start < beta_end && beta_end < 1)) {
    throw ValidationError("beta schedule needs 0 < beta_start < beta_end < 1");
  }
  if (!(injection.ip_scale >= 0)) throw ValidationError("ip_scale must be >= 0");
}

void RunConfig::validate() const {
  model.validate();
  if (!(lambda >= 0)) throw ValidationError("lambda must be >= 0");
  if (!std::isfinite(cfg_w)) throw ValidationError("cfg_w must be finite");
  if (steps == 0 || steps > model.train_timesteps) {
    throw ValidationError("steps must lie in [1, " + std::to_string(model.train_timesteps) + "]");
  }
  if (!(lr > 0) || !(pretrain_lr > 0)) throw ValidationError("learning rates must be positive");
  if (!(weight_decay >= 0)) throw ValidationError("weight_decay must be >= 0");
  require_positive(batch_size, "batch_size");
  require_positive(num_scenes, "num_scenes");
  if (!(dropout_rate >= 0 && dropout_rate < 1)) throw ValidationError("dropout_rate must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const InjectionConfig& c) {
  j = {{"position", to_string(c.position)}, {"ip_scale", c.ip_scale}};
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"image_size", c.image_size},
       {"image_channels", c.image_channels},
       {"patch", c.patch},
       {"d_I", c.d_image},
       {"d_T", c.d_text},
       {"d_L", c.d_layout},
       {"heads", c.heads},
       {"max_n", c.max_boxes},
       {"max_text_len", c.max_text_len},
       {"latent_factor", c.latent_factor},
       {"denoiser_channels", c.denoiser_channels},
       {"denoiser_heads", c.denoiser_heads},
       {"mlp_mult", c.mlp_mult},
       {"train_timesteps", c.train_timesteps},
       {"beta_start", c.beta_start},
       {"beta_end", c.beta_end},
       {"injection", c.injection}};
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"seed", c.seed},
       {"model", c.model},
       {"lambda", c.lambda},
       {"cfg_w", c.cfg_w},
       {"steps", c.steps},
       {"lr", c.lr},
       {"weight_decay", c.weight_decay},
       {"train_steps", c.train_steps},
       {"batch_size", c.batch_size},
       {"dropout_rate", c.dropout_rate},
       {"pretrain_steps", c.pretrain_steps},
       {"pretrain_lr", c.pretrain_lr},
       {"num_scenes", c.num_scenes},
       {"data_dir", c.data_dir},
       {"checkpoint_dir", c.checkpoint_dir},
       {"report_path", c.report_path},
       {"output_path", c.output_path}};
}

void merge_json(const nlohmann::json& j, ModelConfig& c) {
  reject_unknown(j,
                 {"image_size", "image_channels", "patch", "d_I", "d_T", "d_L", "heads", "max_n", "max_text_len",
                  "latent_factor", "denoiser_channels", "denoiser_heads", "mlp_mult", "train_timesteps",
                  "beta_start", "beta_end", "injection"},
                 "model config");
  take(j, "image_size", c.image_size);
  take(j, "image_channels", c.image_channels);
  take(j, "patch", c.patch);
  take(j, "d_I", c.d_image);
  take(j, "d_T", c.d_text);
  take(j, "d_L", c.d_layout);
  take(j, "heads", c.heads);
  take(j, "max_n", c.max_boxes);
  take(j, "max_text_len", c.max_text_len);
  take(j, "latent_factor", c.latent_factor);
  take(j, "denoiser_channels", c.denoiser_channels);
  take(j, "denoiser_heads", c.denoiser_heads);
  take(j, "mlp_mult", c.mlp_mult);
  take(j, "train_timesteps", c.train_timesteps);
  take(j, "beta_start", c.beta_start);
  take(j, "beta_end", c.beta_end);
  if (j.contains("injection")) {
    const auto& inj = j.at("injection");
    reject_unknown(inj, {"position", "ip_scale"}, "injection config");
    std::string position = to_string(c.injection.position);
    take(inj, "position", position);
    c.injection.position = parse_injection_position(position);
    take(inj, "ip_scale", c.injection.ip_scale);
  }
}

void merge_json(const nlohmann::json& j, RunConfig& c) {
  reject_unknown(j,
                 {"seed", "model", "lambda", "cfg_w", "steps", "lr", "weight_decay", "train_steps", "batch_size",
                  "dropout_rate", "pretrain_steps", "pretrain_lr", "num_scenes", "data_dir", "checkpoint_dir",
                  "report_path", "output_path"},
                 "run config");
  take(j, "seed", c.seed);
  if (j.contains("model")) merge_json(j.at("model"), c.model);
  take(j, "lambda", c.lambda);
  take(j, "cfg_w", c.cfg_w);
  take(j, "steps", c.steps);
  take(j, "lr", c.lr);
  take(j, "weight_decay", c.weight_decay);
  take(j, "train_steps", c.train_steps);
  take(j, "batch_size", c.batch_size);
  take(j, "dropout_rate", c.dropout_rate);
  take(j, "pretrain_steps", c.pretrain_steps);
  take(j, "pretrain_lr", c.pretrain_lr);
  take(j, "num_scenes", c.num_scenes);
  take(j, "data_dir", c.data_dir);
  take(j, "checkpoint_dir", c.checkpoint_dir);
  take(j, "report_path", c.report_path);
  take(j, "output_path", c.output_path);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed config " + path.string() + ": " + e.what());
  }
  RunConfig c;
  merge_json(j, c);
  return c;
}

void apply_seed_env(RunConfig& config) {
  const char* env = std::getenv("QL_SEED");
  if (env == nullptr || *env == '\0') return;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
    config.seed = v;
  } catch (const std::exception&) {
    throw ValidationError(std::string("QL_SEED is not an unsigned integer: '") + env + "'");
  }
}

}  // namespace ql
