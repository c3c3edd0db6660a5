// SPDX-License-Identifier: Apache-2.0
#include "ql/model.hpp"

#include "ql/error.hpp"
#include "ql/qlt.hpp"

namespace ql {

namespace {

constexpr std::uint64_t kIpStream = 0x1b00;

}  // namespace

template <typename T>
QlModel<T> QlModel<T>::create(const ModelConfig& config, std::size_t vocab_size, std::uint64_t seed) {
  config.validate();
  if (vocab_size == 0) throw ValidationError("vocabulary is empty");
  const Rng root(seed);
  QlModel m;
  m.config = config;
  m.vocab_size = vocab_size;
  m.seed = seed;
  Rng r1 = root.fork(1), r2 = root.fork(2), r3 = root.fork(3), r4 = root.fork(4), r5 = root.fork(5),
      r6 = root.fork(6), r7 = root.fork(7);
  m.image_encoder = ImageEncoder<T>::create(
      r1, ImageEncoderShape{config.image_channels, config.image_size, config.patch, config.d_image, config.heads});
  m.text_encoder = TextEncoder<T>::create(r2, vocab_size, config.d_text, config.max_text_len);
  m.layout = LayoutEmbedder<T>::create(r3, config.d_layout, config.d_image);
  m.ilfm = Ilfm<T>::create(r4, config.d_image, config.d_layout, config.grid(), config.grid(), config.heads);
  m.cmam = Cmam<T>::create(r5, config.d_text, config.d_image, config.heads);
  m.fuse = FuseHead<T>::create(r6, config.d_image, config.d_text, config.heads);
  DenoiserShape ds{config.latent_tokens(), config.latent_channels(), config.denoiser_channels,
                   config.denoiser_heads, config.mlp_mult, config.d_text, config.d_image};
  m.denoiser = Denoiser<T>::create(r7, ds, config.injection);
  load_pretrained_ip_weights(m, std::nullopt, seed);
  return m;
}

template <typename T>
Tensor<T> QlModel<T>::condition(const Tensor<T>& image, const LayoutSet& layout_set,
                                std::span<const std::size_t> caption, AdapterTrace<T>* trace) const {
  const auto enc = image_encoder.encode(image);
  auto fl = ilfm.forward(enc.patches, enc.grid_h, enc.grid_w, layout_set, layout, trace ? &trace->ilfm : nullptr);
  const auto text = caption.empty() ? text_encoder.empty() : text_encoder.encode(caption);
  auto c = cmam.forward(text.tokens, enc.cls);
  if (trace != nullptr) {
    trace->layout_feature = fl;
    trace->cmam = c;
  }
  return fuse(c.image, c.text, fl);
}

template <typename T>
ConditionBundle<T> QlModel<T>::bundle(const Tensor<T>& image_token, std::span<const std::size_t> prompt,
                                      double lambda) const {
  const auto text = prompt.empty() ? text_encoder.empty() : text_encoder.encode(prompt);
  return {text.tokens, image_token, lambda};
}

template <typename T>
ConditionBundle<T> QlModel<T>::unconditional(double lambda) const {
  return {text_encoder.empty().tokens, Tensor<T>::zeros({1, config.d_image}), lambda};
}

template <typename T>
ParamList<T> QlModel<T>::parameters() {
  ParamList<T> out;
  image_encoder.collect("image_encoder", out);
  text_encoder.collect("text_encoder", out);
  layout.collect("layout", out);
  ilfm.collect("ilfm", out);
  cmam.collect("cmam", out);
  fuse.collect("fuse", out);
  denoiser.collect_backbone("denoiser", out);
  denoiser.collect_ip("denoiser", out);
  return out;
}

template <typename T>
ParamList<T> QlModel<T>::ip_parameters() {
  ParamList<T> out;
  denoiser.collect_ip("denoiser", out);
  return out;
}

template <typename T>
ParamList<T> QlModel<T>::backbone_parameters() {
  ParamList<T> out;
  denoiser.collect_backbone("denoiser", out);
  return out;
}

template <typename T>
void QlModel<T>::set_trainable(const ParamList<T>& trainable) {
  for (auto& p : parameters()) p.tensor->set_requires_grad(false);
  for (const auto& p : trainable) p.tensor->set_requires_grad(true);
}

template <typename T>
nlohmann::json QlModel<T>::ip_manifest() {
  nlohmann::json sites = nlohmann::json::object();
  for (auto& b : denoiser.blocks) {
    if (!b.ip) continue;
    ParamList<T> list;
    b.ip->collect("denoiser." + b.name + ".ip", list);
    auto& names = sites[b.name] = nlohmann::json::array();
    for (const auto& p : list) names.push_back(p.name);
  }
  return {{"init_seed", ip_seed}, {"sites", sites}};
}

template <typename T>
void save_model(const std::filesystem::path& dir, QlModel<T>& model, const nlohmann::json& extra) {
  nlohmann::json meta = extra;
  meta["config"] = model.config;
  meta["vocab_size"] = model.vocab_size;
  meta["seed"] = model.seed;
  meta["ip_attention"] = model.ip_manifest();
  save_checkpoint(dir, model.parameters(), meta);
}

template <typename T>
QlModel<T> load_model(const std::filesystem::path& dir) {
  const auto manifest = read_manifest(dir);
  ModelConfig config;
  std::size_t vocab = 0;
  std::uint64_t seed = 0;
  try {
    merge_json(manifest.at("config"), config);
    vocab = manifest.at("vocab_size").get<std::size_t>();
    seed = manifest.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("checkpoint " + dir.string() + " lacks model metadata: " + e.what());
  }
  auto model = QlModel<T>::create(config, vocab, seed);
  load_checkpoint(dir, model.parameters());
  return model;
}

template <typename T>
void load_pretrained_ip_weights(QlModel<T>& model, const std::optional<std::filesystem::path>& checkpoint,
                                std::uint64_t seed) {
  if (checkpoint) {
    load_checkpoint(*checkpoint, model.ip_parameters());
    return;
  }
  const Rng root(seed);
  auto& blocks = model.denoiser.blocks;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (!blocks[i].ip) continue;
    Rng rng = root.fork(kIpStream + i);
    blocks[i].ip = IpBranchWeights<T>::create(rng, model.config.denoiser_channels, model.config.d_image);
  }
  model.ip_seed = seed;
}

template struct QlModel<float>;
template struct QlModel<double>;
template void save_model(const std::filesystem::path&, QlModel<float>&, const nlohmann::json&);
template void save_model(const std::filesystem::path&, QlModel<double>&, const nlohmann::json&);
template QlModel<float> load_model(const std::filesystem::path&);
template QlModel<double> load_model(const std::filesystem::path&);
template void load_pretrained_ip_weights(QlModel<float>&, const std::optional<std::filesystem::path>&, std::uint64_t);
template void load_pretrained_ip_weights(QlModel<double>&, const std::optional<std::filesystem::path>&, std::uint64_t);

}  // namespace ql
