// SPDX-License-Identifier: Apache-2.0
//
// ql: synth | train | edit | eval | gradcheck | dump-attn
//
// Settings come from defaults, then --config, then QL_SEED, then flags.
// Exit codes: 0 success, 1 validation error, 2 numerical failure.
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "ql/commands.hpp"
#include "ql/error.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda, cfg_w, lr, dropout_rate, ip_scale, pretrain_lr;
  std::optional<std::size_t> steps, train_steps, batch_size, num_scenes, pretrain_steps;
  std::optional<std::size_t> d_image, d_text, d_layout, heads, max_n;
  std::optional<std::string> position, data_dir, checkpoint_dir, report, output;

  void attach(CLI::App* app, bool model_flags) {
    app->add_option("--config", config_path, "JSON run config");
    app->add_option("--seed", seed);
    app->add_option("--data-dir", data_dir);
    app->add_option("--checkpoint-dir", checkpoint_dir);
    app->add_option("--num-scenes", num_scenes);
    if (!model_flags) return;
    app->add_option("--lambda", lambda, "IP branch weight");
    app->add_option("--cfg-w", cfg_w, "guidance scale");
    app->add_option("--steps", steps, "sampling steps");
    app->add_option("--lr", lr);
    app->add_option("--pretrain-lr", pretrain_lr);
    app->add_option("--train-steps", train_steps);
    app->add_option("--pretrain-steps", pretrain_steps);
    app->add_option("--batch-size", batch_size);
    app->add_option("--dropout-rate", dropout_rate);
    app->add_option("--position", position, "down2 | down4 | mid | all");
    app->add_option("--ip-scale", ip_scale);
    app->add_option("--d-i", d_image);
    app->add_option("--d-t", d_text);
    app->add_option("--d-l", d_layout);
    app->add_option("--heads", heads);
    app->add_option("--max-n", max_n);
    app->add_option("--output", output, "output path (without extension for images)");
  }

  ql::RunConfig resolve() const {
    ql::RunConfig c = config_path.empty() ? ql::RunConfig{} : ql::load_run_config(config_path);
    ql::apply_seed_env(c);
    if (seed) c.seed = *seed;
    if (lambda) c.lambda = *lambda;
    if (cfg_w) c.cfg_w = *cfg_w;
    if (lr) c.lr = *lr;
    if (pretrain_lr) c.pretrain_lr = *pretrain_lr;
    if (dropout_rate) c.dropout_rate = *dropout_rate;
    if (steps) c.steps = *steps;
    if (train_steps) c.train_steps = *train_steps;
    if (pretrain_steps) c.pretrain_steps = *pretrain_steps;
    if (batch_size) c.batch_size = *batch_size;
    if (num_scenes) c.num_scenes = *num_scenes;
    if (position) c.model.injection.position = ql::parse_injection_position(*position);
    if (ip_scale) c.model.injection.ip_scale = *ip_scale;
    if (d_image) c.model.d_image = *d_image;
    if (d_text) c.model.d_text = *d_text;
    if (d_layout) c.model.d_layout = *d_layout;
    if (heads) c.model.heads = *heads;
    if (max_n) c.model.max_boxes = *max_n;
    if (data_dir) c.data_dir = *data_dir;
    if (checkpoint_dir) c.checkpoint_dir = *checkpoint_dir;
    if (report) c.report_path = *report;
    if (output) c.output_path = *output;
    c.validate();
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"QL-Adapter toy: layout- and quantity-conditioned diffusion editing"};
  app.require_subcommand(1);

  Overrides synth_o, train_o, edit_o, dump_o;

  auto* synth = app.add_subcommand("synth", "render synthetic layout scenes");
  synth_o.attach(synth, false);
  std::optional<std::size_t> count;
  std::optional<std::string> shape;
  synth->add_option("--count", count, "objects per scene (1-10); random when omitted");
  synth->add_option("--shape", shape, "circle | square; alternates when omitted");

  auto* train = app.add_subcommand("train", "train the IP branches on a synthetic dataset");
  train_o.attach(train, true);
  std::optional<std::string> init_ckpt, ip_ckpt;
  train->add_option("--init", init_ckpt, "start from a full model checkpoint");
  train->add_option("--ip-init", ip_ckpt, "load IP branches from a checkpoint");

  auto* edit = app.add_subcommand("edit", "sample an edited image");
  edit_o.attach(edit, true);
  ql::EditArgs edit_args;
  std::optional<std::string> edit_caption;
  edit->add_option("--image", edit_args.image)->required();
  edit->add_option("--layout", edit_args.layout)->required();
  edit->add_option("--prompt", edit_args.prompt, "edit prompt for the text branch");
  edit->add_option("--caption", edit_caption, "caption fed to the adapter; defaults to the layout's count and shape");

  auto* eval = app.add_subcommand("eval", "compute OA and AP");
  std::string pred_dir, gt_dir;
  std::optional<std::string> report_path;
  eval->add_option("--pred", pred_dir, "directory of detection JSON files")->required();
  eval->add_option("--gt", gt_dir, "directory of ground-truth JSON files")->required();
  eval->add_option("--report", report_path, "write the report here as well as to stdout");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  std::uint64_t gc_seed = 0;
  ql::GradcheckArgs gc_args;
  gradcheck->add_option("--seed", gc_seed);
  gradcheck->add_option("--seeds", gc_args.seeds, "number of consecutive seeds");
  gradcheck->add_flag("--corrupt-gradient", gc_args.corrupt, "self-test: perturb one analytic gradient");

  auto* dump = app.add_subcommand("dump-attn", "export attention maps at one denoiser block");
  dump_o.attach(dump, true);
  ql::DumpArgs dump_args;
  std::optional<std::string> dump_caption;
  std::string dump_out;
  dump->add_option("--image", dump_args.image)->required();
  dump->add_option("--layout", dump_args.layout)->required();
  dump->add_option("--site", dump_args.site, "block name, e.g. down4");
  dump->add_option("--out-dir", dump_out, "directory for the QLT files")->required();
  dump->add_option("--timestep", dump_args.timestep);
  dump->add_option("--prompt", dump_args.prompt);
  dump->add_option("--caption", dump_caption);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      const auto c = synth_o.resolve();
      if (count && (*count == 0 || *count > 10)) throw ql::ValidationError("--count must lie in 1..10, got " + std::to_string(*count));
      ql::cmd_synth(c, {count, shape}, std::cout);
    } else if (train->parsed()) {
      ql::TrainArgs ta;
      if (init_ckpt) ta.init_checkpoint = *init_ckpt;
      if (ip_ckpt) ta.ip_checkpoint = *ip_ckpt;
      ql::cmd_train(train_o.resolve(), ta, std::cout);
    } else if (edit->parsed()) {
      edit_args.caption = edit_caption;
      ql::cmd_edit(edit_o.resolve(), edit_args, std::cout);
    } else if (eval->parsed()) {
      std::optional<std::filesystem::path> rp;
      if (report_path) rp = *report_path;
      std::cout << ql::cmd_eval(pred_dir, gt_dir, rp).dump(2) << '\n';
    } else if (gradcheck->parsed()) {
      if (!ql::cmd_gradcheck(gc_seed, gc_args, std::cout)) return 2;
    } else if (dump->parsed()) {
      dump_args.caption = dump_caption;
      dump_args.output_dir = dump_out;
      ql::cmd_dump_attention(dump_o.resolve(), dump_args, std::cout);
    }
  } catch (const ql::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 2;
  } catch (const ql::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
