// SPDX-License-Identifier: Apache-2.0
#include "ql/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>

#include "ql/error.hpp"
#include "ql/image_io.hpp"
#include "ql/metrics.hpp"
#include "ql/model.hpp"
#include "ql/qlt.hpp"
#include "ql/synth.hpp"

namespace ql {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTrainStream = 0x7a11;
constexpr std::uint64_t kPretrainStream = 0x7a10;
constexpr std::uint64_t kSampleStream = 0x5a3e;
constexpr std::uint64_t kDumpStream = 0xd0e9;

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create " + dir.string() + ": " + ec.message());
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string layout_caption(const LayoutFile& lf) {
  if (lf.count <= 0) return {};
  return scene_caption(static_cast<std::size_t>(lf.count), parse_shape(lf.category));
}

std::vector<Box4> layout_boxes(const LayoutFile& lf) { return lf.boxes; }

}  // namespace

void cmd_synth(const RunConfig& config, const SynthArgs& args, std::ostream& log) {
  SynthOptions opt;
  opt.num_scenes = config.num_scenes;
  opt.image_size = config.model.image_size;
  opt.count = args.count;
  if (args.shape) opt.shape = parse_shape(*args.shape);
  const auto scenes = generate_scenes(config.seed, opt);
  write_dataset(config.data_dir, scenes);
  for (const auto& s : scenes) log << s.name << ": " << s.caption << '\n';
  log << "wrote " << scenes.size() << " scenes to " << config.data_dir << '\n';
}

double window_mean(const std::vector<double>& values, std::size_t window, bool from_end) {
  if (values.empty()) return 0.0;
  const std::size_t n = std::min(window, values.size());
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += from_end ? values[values.size() - 1 - i] : values[i];
  return acc / static_cast<double>(n);
}

TrainSummary cmd_train(const RunConfig& config, const TrainArgs& args, std::ostream& log) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const fs::path data_dir(config.data_dir);
  const auto data = read_dataset(data_dir);
  if (data.size() < config.num_scenes) {
    throw ValidationError("dataset " + data_dir.string() + " holds " + std::to_string(data.size()) +
                          " scenes, config asks for " + std::to_string(config.num_scenes));
  }
  const auto vocab = Vocabulary::load(data_dir / "vocab.json");

  auto model = args.init_checkpoint ? load_model<float>(*args.init_checkpoint)
                                    : QlModel<float>::create(config.model, vocab.size(), config.seed);
  if (model.vocab_size != vocab.size()) throw ValidationError("checkpoint vocabulary size disagrees with the dataset");
  if (args.ip_checkpoint) load_pretrained_ip_weights(model, args.ip_checkpoint, config.seed);
  const auto& mc = model.config;
  const auto schedule = NoiseSchedule::linear(mc.train_timesteps, mc.beta_start, mc.beta_end);

  std::vector<Tensor<float>> latents;
  std::vector<Tensor<float>> tokens;
  {
    NoGradGuard guard;
    for (std::size_t i = 0; i < config.num_scenes; ++i) {
      const auto& d = data[i];
      if (d.image.rank() != 3 || d.image.dim(1) != mc.image_size || d.image.dim(2) != mc.image_size) {
        throw ValidationError("scene " + d.name + " has shape " + shape_str(d.image.shape()) + ", model expects " +
                              std::to_string(mc.image_size) + "x" + std::to_string(mc.image_size));
      }
      latents.push_back(image_to_latent(d.image, mc.latent_factor));
      const auto layout = build_layout(layout_boxes(d.layout), mc.max_boxes);
      tokens.push_back(model.condition(d.image, layout, vocab.tokenize(d.caption)));
    }
  }

  TrainSummary summary;
  ensure_dir(config.checkpoint_dir);
  const fs::path ckpt(config.checkpoint_dir);
  vocab.save(ckpt / "vocab.json");

  if (config.pretrain_steps > 0) {
    model.set_trainable(model.backbone_parameters());
    AdamW<float> opt(model.backbone_parameters(), AdamWOptions{config.pretrain_lr, 0.9, 0.999, 1e-8, config.weight_decay});
    std::vector<TrainingSample<float>> all;
    for (const auto& x0 : latents) all.push_back({x0, model.unconditional(config.lambda)});
    Rng rng(config.seed, kPretrainStream);
    std::ofstream plog(ckpt / "pretrain_log.jsonl", std::ios::trunc);
    for (std::size_t step = 0; step < config.pretrain_steps; ++step) {
      std::vector<TrainingSample<float>> batch;
      for (std::size_t b = 0; b < config.batch_size; ++b) batch.push_back(all[rng.below(all.size())]);
      const auto r = training_step<float>(model.denoiser, batch, schedule, 0.0, rng, &opt);
      summary.pretrain_losses.push_back(r.loss);
      plog << nlohmann::json{{"step", step}, {"loss", r.loss}}.dump() << '\n';
    }
    log << "pretrain: " << config.pretrain_steps << " steps, first-100 " << fixed(window_mean(summary.pretrain_losses, 100, false))
        << ", last-100 " << fixed(window_mean(summary.pretrain_losses, 100, true)) << '\n';
  }

  model.set_trainable(model.ip_parameters());
  AdamW<float> opt(model.ip_parameters(), AdamWOptions{config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  std::vector<TrainingSample<float>> all;
  const std::vector<std::size_t> empty_prompt;
  for (std::size_t i = 0; i < latents.size(); ++i) {
    all.push_back({latents[i], model.bundle(tokens[i], empty_prompt, config.lambda)});
  }
  Rng rng(config.seed, kTrainStream);
  std::ofstream loss_log(ckpt / "loss_log.jsonl", std::ios::trunc);
  if (!loss_log) throw ValidationError("cannot write " + (ckpt / "loss_log.jsonl").string());
  for (std::size_t step = 0; step < config.train_steps; ++step) {
    std::vector<TrainingSample<float>> batch;
    nlohmann::json scenes = nlohmann::json::array();
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const auto idx = rng.below(all.size());
      scenes.push_back(idx);
      batch.push_back(all[idx]);
    }
    const auto r = training_step<float>(model.denoiser, batch, schedule, config.dropout_rate, rng, &opt);
    summary.losses.push_back(r.loss);
    summary.dropped += r.dropped;
    summary.samples += batch.size();
    loss_log << nlohmann::json{{"step", step}, {"loss", r.loss}, {"dropped", r.dropped}, {"scenes", scenes},
                               {"t", r.timesteps}}
                    .dump()
             << '\n';
  }
  summary.first_window = window_mean(summary.losses, 100, false);
  summary.last_window = window_mean(summary.losses, 100, true);

  save_model(ckpt, model,
             {{"train",
               {{"steps", config.train_steps},
                {"pretrain_steps", config.pretrain_steps},
                {"first_window_loss", summary.first_window},
                {"last_window_loss", summary.last_window},
                {"dropped", summary.dropped}}}});
  summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log << "train: " << config.train_steps << " steps, first-100 " << fixed(summary.first_window) << ", last-100 "
      << fixed(summary.last_window) << ", dropped " << summary.dropped << "/" << summary.samples << '\n';
  return summary;
}

namespace {

struct Inputs {
  Tensor<float> image;
  LayoutSet layout;
  std::vector<std::size_t> caption;
  std::vector<std::size_t> prompt;
};

Inputs read_inputs(const QlModel<float>& model, const Vocabulary& vocab, const fs::path& image_path,
                   const fs::path& layout_path, const std::optional<std::string>& caption, const std::string& prompt) {
  Inputs in;
  in.image = read_image(image_path);
  const auto lf = read_layout_file(layout_path);
  in.layout = build_layout(layout_boxes(lf), model.config.max_boxes);
  in.caption = vocab.tokenize(caption ? *caption : layout_caption(lf));
  in.prompt = vocab.tokenize(prompt);
  return in;
}

Vocabulary vocabulary_for(const RunConfig& config, std::size_t vocab_size) {
  const fs::path p = fs::path(config.checkpoint_dir) / "vocab.json";
  const fs::path q = fs::path(config.data_dir) / "vocab.json";
  auto v = fs::exists(p) ? Vocabulary::load(p) : fs::exists(q) ? Vocabulary::load(q) : Vocabulary::builtin();
  if (v.size() != vocab_size) {
    throw ValidationError("vocabulary has " + std::to_string(v.size()) + " words, checkpoint expects " +
                          std::to_string(vocab_size));
  }
  return v;
}

QlModel<float> load_for_inference(const RunConfig& config) {
  const fs::path ckpt(config.checkpoint_dir);
  if (!fs::exists(ckpt / "manifest.json")) throw ValidationError("no checkpoint at " + ckpt.string());
  auto model = load_model<float>(ckpt);
  model.denoiser.injection.ip_scale = config.model.injection.ip_scale;
  return model;
}

}  // namespace

Tensor<float> cmd_edit(const RunConfig& config, const EditArgs& args, std::ostream& log) {
  config.validate();
  auto model = load_for_inference(config);
  const auto vocab = vocabulary_for(config, model.vocab_size);
  const auto in = read_inputs(model, vocab, args.image, args.layout, args.caption, args.prompt);
  const auto& mc = model.config;
  NoGradGuard guard;
  const auto f = model.condition(in.image, in.layout, in.caption);
  const auto cond = model.bundle(f, in.prompt, config.lambda);
  const auto uncond = model.unconditional(config.lambda);
  const auto schedule = NoiseSchedule::linear(mc.train_timesteps, mc.beta_start, mc.beta_end);
  Rng rng(config.seed, kSampleStream);
  const auto latent = sample<float>(model.denoiser, cond, uncond, {mc.latent_tokens(), mc.latent_channels()}, schedule,
                                    SamplerOptions{config.cfg_w, config.steps}, rng);
  auto image = latent_to_image(latent, mc.image_channels, mc.image_size, mc.image_size, mc.latent_factor);
  const fs::path out(config.output_path);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  save_tensor(fs::path(config.output_path + ".qlt"), image);
  write_ppm(fs::path(config.output_path + ".ppm"), image);
  log << "edit: lambda " << config.lambda << ", w " << config.cfg_w << ", " << config.steps << " steps -> "
      << config.output_path << ".{qlt,ppm}\n";
  return image;
}

nlohmann::json cmd_eval(const fs::path& pred_dir, const fs::path& gt_dir, const std::optional<fs::path>& report_path) {
  if (!fs::is_directory(gt_dir)) throw ValidationError("ground-truth directory " + gt_dir.string() + " not found");
  if (!fs::is_directory(pred_dir)) throw ValidationError("prediction directory " + pred_dir.string() + " not found");
  auto json_files = [](const fs::path& dir) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".json") names.push_back(e.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    return names;
  };
  const auto gt_names = json_files(gt_dir);
  for (const auto& p : json_files(pred_dir)) {
    if (!std::binary_search(gt_names.begin(), gt_names.end(), p)) {
      throw ValidationError("prediction " + (pred_dir / p).string() + " has no ground-truth file");
    }
  }
  if (gt_names.empty()) throw ValidationError("no ground-truth files in " + gt_dir.string());
  std::vector<DetectionSet> sets;
  for (const auto& name : gt_names) {
    DetectionSet gt;
    std::ifstream in(gt_dir / name);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("malformed ground truth " + (gt_dir / name).string() + ": " + e.what());
    }
    if (j.is_object() && j.contains("boxes") && !j.contains("ground_truth")) {
      gt.image = j.value("image", name);
      gt.ground_truth = read_layout_file(gt_dir / name).boxes;
    } else {
      gt = read_detection_file(gt_dir / name);
    }
    if (fs::exists(pred_dir / name)) gt.detections = read_detection_file(pred_dir / name).detections;
    sets.push_back(std::move(gt));
  }
  auto report = evaluation_report(sets);
  if (report_path) {
    if (report_path->has_parent_path()) ensure_dir(report_path->parent_path());
    std::ofstream out(*report_path, std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + report_path->string());
    out << report.dump(2) << '\n';
  }
  return report;
}

bool cmd_gradcheck(std::uint64_t seed, const GradcheckArgs& args, std::ostream& out,
                   std::vector<GradcheckGroup>* groups) {
  if (args.seeds == 0) throw ValidationError("gradcheck needs at least one seed");
  std::vector<std::vector<GradcheckGroup>> runs;
  GradcheckOptions opt;
  opt.corrupt = args.corrupt;
  for (std::size_t i = 0; i < args.seeds; ++i) runs.push_back(gradcheck_suite(seed + i, opt));
  const auto merged = merge_gradcheck(runs);
  bool ok = true;
  char line[160];
  std::snprintf(line, sizeof line, "%-36s %8s %12s  %s\n", "group", "elements", "max_rel_err", "status");
  out << line;
  for (const auto& g : merged) {
    std::snprintf(line, sizeof line, "%-36s %8zu %12.3e  %s\n", g.name.c_str(), g.elements, g.rel_error,
                  g.passed ? "pass" : "FAIL");
    out << line;
    ok = ok && g.passed;
  }
  out << merged.size() << " groups over " << args.seeds << " seeds: " << (ok ? "all pass" : "FAILURES") << '\n';
  if (groups != nullptr) *groups = merged;
  return ok;
}

std::vector<fs::path> cmd_dump_attention(const RunConfig& config, const DumpArgs& args, std::ostream& log) {
  const auto& names = denoiser_block_names();
  if (std::find(names.begin(), names.end(), args.site) == names.end()) {
    std::string valid;
    for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
    throw ValidationError("unknown site '" + args.site + "' (valid sites: " + valid + ")");
  }
  auto model = load_for_inference(config);
  const auto vocab = vocabulary_for(config, model.vocab_size);
  const auto in = read_inputs(model, vocab, args.image, args.layout, args.caption, args.prompt);
  const auto& mc = model.config;
  if (args.timestep >= mc.train_timesteps) {
    throw ValidationError("timestep " + std::to_string(args.timestep) + " out of range [0, " +
                          std::to_string(mc.train_timesteps) + ")");
  }
  NoGradGuard guard;
  const auto f = model.condition(in.image, in.layout, in.caption);
  const auto cond = model.bundle(f, in.prompt, config.lambda);
  const auto schedule = NoiseSchedule::linear(mc.train_timesteps, mc.beta_start, mc.beta_end);
  Rng rng(config.seed, kDumpStream);
  const auto x0 = image_to_latent(in.image, mc.latent_factor);
  const auto eps = Tensor<float>::from_doubles(x0.shape(), rng.normals(x0.numel()));
  DenoiserTrace trace;
  model.denoiser.forward(forward_noise(x0, args.timestep, eps, schedule), args.timestep, cond, &trace);

  ensure_dir(args.output_dir);
  std::vector<fs::path> written;
  auto dump = [&](const AttentionRecord& r, const std::string& branch) {
    if (r.weights.empty()) return;
    std::vector<float> w(r.weights.begin(), r.weights.end());
    const auto path = args.output_dir / (args.site + "_" + branch + ".qlt");
    write_qlt(path, {r.heads, r.n_q, r.n_k}, w);
    written.push_back(path);
    log << "wrote " << path.string() << " [" << r.heads << ", " << r.n_q << ", " << r.n_k << "]\n";
  };
  for (const auto& [name, rec] : trace.blocks) {
    if (name != args.site) continue;
    dump(rec.text, "text");
    dump(rec.ip, "ip");
  }
  return written;
}

}  // namespace ql
