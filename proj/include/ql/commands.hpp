// SPDX-License-Identifier: Apache-2.0
//
// The subcommands behind tools/ql, callable in-process by tests.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ql/config.hpp"
#include "ql/gradcheck.hpp"

namespace ql {

struct SynthArgs {
  std::optional<std::size_t> count;
  std::optional<std::string> shape;
};

void cmd_synth(const RunConfig& config, const SynthArgs& args, std::ostream& log);

struct TrainArgs {
  std::optional<std::filesystem::path> init_checkpoint;  // full model to start from
  std::optional<std::filesystem::path> ip_checkpoint;    // IP branches only
};

struct TrainSummary {
  std::vector<double> losses;
  std::vector<double> pretrain_losses;
  std::size_t dropped = 0;
  std::size_t samples = 0;
  double first_window = 0;
  double last_window = 0;
  double seconds = 0;
};

/// Mean of the first / last `window` entries (fewer when the run is short).
double window_mean(const std::vector<double>& values, std::size_t window, bool from_end);

TrainSummary cmd_train(const RunConfig& config, const TrainArgs& args, std::ostream& log);

struct EditArgs {
  std::filesystem::path image;
  std::filesystem::path layout;
  std::string prompt;
  std::optional<std::string> caption;  // defaults to the layout's count and category
};

/// Writes <output_path>.qlt and <output_path>.ppm; returns the image.
Tensor<float> cmd_edit(const RunConfig& config, const EditArgs& args, std::ostream& log);

nlohmann::json cmd_eval(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                        const std::optional<std::filesystem::path>& report_path);

struct GradcheckArgs {
  std::size_t seeds = 5;
  bool corrupt = false;
};

/// Prints one row per parameter group; returns false if any group fails.
bool cmd_gradcheck(std::uint64_t seed, const GradcheckArgs& args, std::ostream& out,
                   std::vector<GradcheckGroup>* groups = nullptr);

struct DumpArgs {
  std::filesystem::path image;
  std::filesystem::path layout;
  std::string site = "down4";
  std::filesystem::path output_dir;
  std::size_t timestep = 500;
  std::optional<std::string> caption;
  std::string prompt;
};

/// Writes <site>_text.qlt and, when the site carries an IP branch,
/// <site>_ip.qlt, each [heads, n_q, n_k]. Returns the written paths.
std::vector<std::filesystem::path> cmd_dump_attention(const RunConfig& config, const DumpArgs& args, std::ostream& log);

}  // namespace ql
