// SPDX-License-Identifier: Apache-2.0
#include "ql/ilfm.hpp"

#include "ql/error.hpp"

namespace ql {

template <typename T>
Ilfm<T> Ilfm<T>::create(Rng& rng, std::size_t d_image, std::size_t d_layout, std::size_t grid_h,
                        std::size_t grid_w, std::size_t heads) {
  if (heads == 0 || d_image % heads != 0) {
    throw DimensionError("ilfm: heads=" + std::to_string(heads) + " must divide d_I=" + std::to_string(d_image));
  }
  Ilfm m;
  m.norm = LayerNorm<T>::create(d_image);
  m.q_image = Linear<T>::create(rng, d_image, d_image);
  m.k_image = Linear<T>::create(rng, d_image, d_image);
  m.v_image = Linear<T>::create(rng, d_image, d_image);
  m.k_layout = Linear<T>::create(rng, d_layout, d_image);
  m.v_layout = Linear<T>::create(rng, d_layout, d_image);
  m.pool = AttentionPool<T>::create(rng, grid_h * grid_w, d_image, d_image, heads);
  m.heads = heads;
  m.grid_h = grid_h;
  m.grid_w = grid_w;
  return m;
}

template <typename T>
Tensor<T> Ilfm<T>::forward(const Tensor<T>& patches, std::size_t gh, std::size_t gw,
                           const LayoutSet& layout, const LayoutEmbedder<T>& embedder,
                           IlfmTrace* trace) const {
  if (patches.rank() != 2 || patches.dim(0) != gh * gw) {
    throw DimensionError("ilfm: patches " + shape_str(patches.shape()) + " do not match a " +
                         std::to_string(gh) + "x" + std::to_string(gw) + " grid");
  }
  if (gh != grid_h || gw != grid_w) {
    throw DimensionError("ilfm: module built for a " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                         " grid, got " + std::to_string(gh) + "x" + std::to_string(gw));
  }
  if (layout.mask.size() != layout.boxes.size()) {
    throw DimensionError("ilfm: layout mask length " + std::to_string(layout.mask.size()) +
                         " != slot count " + std::to_string(layout.boxes.size()));
  }

  const auto grid_boxes = patch_grid(gh, gw);
  auto l_image = embedder.embed(grid_boxes);   // L_I
  auto l_layout = embedder.embed(layout.boxes);  // L
  auto p_image = embedder.project_positions(l_image);
  auto p_layout = embedder.project_positions(l_layout);

  auto normed = norm(patches);
  auto q = concat<T>({q_image(normed), p_image}, 1);
  auto k = concat<T>({concat<T>({k_image(normed), p_image}, 1), concat<T>({k_layout(l_layout), p_layout}, 1)}, 0);
  auto v = concat<T>({v_image(normed), v_layout(l_layout)}, 0);

  std::vector<std::uint8_t> mask(gh * gw, 1);
  mask.insert(mask.end(), layout.mask.begin(), layout.mask.end());

  auto fused = mha(q, k, v, heads, mask, trace ? &trace->fusion : nullptr);
  auto pooled = pool(fused, trace ? &trace->pool : nullptr);
  return reshape(pooled, {pooled.dim(1)});
}

template <typename T>
void Ilfm<T>::collect(const std::string& prefix, ParamList<T>& out) {
  norm.collect(prefix + ".norm", out);
  q_image.collect(prefix + ".q_image", out);
  k_image.collect(prefix + ".k_image", out);
  v_image.collect(prefix + ".v_image", out);
  k_layout.collect(prefix + ".k_layout", out);
  v_layout.collect(prefix + ".v_layout", out);
  pool.collect(prefix + ".pool", out);
}

template struct Ilfm<float>;
template struct Ilfm<double>;

}  // namespace ql
