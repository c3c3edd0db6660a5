// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "ql/adapter.hpp"

namespace ql {

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t image_channels = 3;
  std::size_t patch = 8;
  std::size_t d_image = 64;
  std::size_t d_text = 64;
  std::size_t d_layout = 64;
  std::size_t heads = 8;
  std::size_t max_boxes = 16;
  std::size_t max_text_len = 16;
  std::size_t latent_factor = 2;
  std::size_t denoiser_channels = 32;
  std::size_t denoiser_heads = 8;
  std::size_t mlp_mult = 2;
  std::size_t train_timesteps = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  InjectionConfig injection;

  std::size_t grid() const { return image_size / patch; }
  std::size_t latent_side() const { return image_size / latent_factor; }
  std::size_t latent_tokens() const { return latent_side() * latent_side(); }
  std::size_t latent_channels() const { return image_channels * latent_factor * latent_factor; }

  void validate() const;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  double lambda = 0.8;
  double cfg_w = 5.0;
  std::size_t steps = 30;
  double lr = 2.5e-4;
  double weight_decay = 1e-2;
  std::size_t train_steps = 2100;
  std::size_t batch_size = 1;
  double dropout_rate = 0.05;
  std::size_t pretrain_steps = 0;
  double pretrain_lr = 2e-3;
  std::size_t num_scenes = 8;
  std::string data_dir = "data";
  std::string checkpoint_dir = "checkpoint";
  std::string report_path = "report.json";
  std::string output_path = "out";

  void validate() const;
};

void to_json(nlohmann::json& j, const InjectionConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);

/// Overlays the keys present in j onto c. Unknown keys are rejected.
void merge_json(const nlohmann::json& j, ModelConfig& c);
void merge_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);
/// QL_SEED, when set, replaces the seed.
void apply_seed_env(RunConfig& config);

}  // namespace ql
