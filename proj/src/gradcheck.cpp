// SPDX-License-Identifier: Apache-2.0
#include "ql/gradcheck.hpp"

#include <cmath>
#include <deque>
#include <map>

#include "ql/adapter.hpp"
#include "ql/cmam.hpp"
#include "ql/diffusion.hpp"
#include "ql/encoders.hpp"
#include "ql/ilfm.hpp"
#include "ql/layout.hpp"

namespace ql {

double gradient_rel_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::max(std::sqrt(na), std::sqrt(nn));
  if (denom < 1e-10) return 0.0;
  return std::sqrt(diff) / denom;
}

namespace {

std::string group_of(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

}  // namespace

std::vector<GradcheckGroup> check_gradients(const ParamList<double>& params, const std::function<Tensor<double>()>& loss,
                                            const GradcheckOptions& options) {
  for (const auto& p : params) {
    p.tensor->set_requires_grad(true);
    p.tensor->zero_grad();
  }
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    if (p.tensor->has_grad()) {
      auto g = p.tensor->grad();
      analytic.emplace_back(g.begin(), g.end());
    } else {
      analytic.emplace_back(p.tensor->numel(), 0.0);
    }
  }
  if (options.corrupt && !analytic.empty()) analytic[0][0] += 0.5 * (1.0 + std::abs(analytic[0][0]));

  std::vector<GradcheckGroup> groups;
  std::map<std::string, std::size_t> slot;
  NoGradGuard guard;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].tensor->mutable_data();
    std::vector<double> numeric(values.size());
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + options.step;
      const double up = loss().item();
      values[j] = saved - options.step;
      const double down = loss().item();
      values[j] = saved;
      numeric[j] = (up - down) / (2.0 * options.step);
    }
    const double err = gradient_rel_error(analytic[i], numeric);
    const auto name = group_of(params[i].name);
    auto [it, fresh] = slot.emplace(name, groups.size());
    if (fresh) groups.push_back({name, 0, 0.0, true});
    auto& g = groups[it->second];
    g.elements += values.size();
    g.rel_error = std::max(g.rel_error, err);
    g.passed = g.rel_error < options.tolerance;
  }
  for (const auto& p : params) p.tensor->set_requires_grad(false);
  return groups;
}

std::vector<GradcheckGroup> merge_gradcheck(const std::vector<std::vector<GradcheckGroup>>& runs) {
  std::vector<GradcheckGroup> out;
  std::map<std::string, std::size_t> slot;
  for (const auto& run : runs) {
    for (const auto& g : run) {
      auto [it, fresh] = slot.emplace(g.name, out.size());
      if (fresh) {
        out.push_back(g);
        continue;
      }
      auto& m = out[it->second];
      m.rel_error = std::max(m.rel_error, g.rel_error);
      m.passed = m.passed && g.passed;
    }
  }
  return out;
}

namespace {

using TD = Tensor<double>;

struct Suite {
  Rng rng;
  GradcheckOptions options;
  std::vector<GradcheckGroup> out;
  std::deque<TD> owned;  // stable addresses for ParamRef

  TD& input(Shape shape, double stddev = 1.0) {
    owned.push_back(random_normal<double>(rng, std::move(shape), stddev));
    return owned.back();
  }

  /// Weighted sum with fixed random weights, so every output entry matters.
  std::function<TD(const TD&)> readout(const Shape& shape) {
    auto w = random_normal<double>(rng, shape, 1.0);
    return [w](const TD& y) { return sum(mul(y, w)); };
  }

  void run(const ParamList<double>& params, const std::function<TD()>& f) {
    auto groups = check_gradients(params, f, options);
    out.insert(out.end(), groups.begin(), groups.end());
  }
};

void op_cases(Suite& s) {
  {
    auto& a = s.input({2, 3, 4});
    auto& b = s.input({4, 5});
    auto r = s.readout({2, 3, 5});
    s.run({{"op.matmul.a", &a}, {"op.matmul.b", &b}}, [&, r] { return r(matmul(a, b)); });
  }
  {
    auto& a = s.input({3, 4});
    auto& b = s.input({1, 4});
    auto r = s.readout({3, 4});
    s.run({{"op.add.a", &a}, {"op.add.b", &b}}, [&, r] { return r(add(a, b)); });
  }
  {
    auto& a = s.input({3, 1});
    auto& b = s.input({1, 4});
    auto r = s.readout({3, 4});
    s.run({{"op.sub.a", &a}, {"op.sub.b", &b}}, [&, r] { return r(sub(a, b)); });
  }
  {
    auto& a = s.input({2, 3, 4});
    auto& b = s.input({3, 1});
    auto r = s.readout({2, 3, 4});
    s.run({{"op.mul.a", &a}, {"op.mul.b", &b}}, [&, r] { return r(mul(a, b)); });
  }
  {
    auto& x = s.input({3, 4});
    auto r = s.readout({3, 4});
    s.run({{"op.scale.x", &x}}, [&, r] { return r(scale(x, 0.37)); });
    s.run({{"op.silu.x", &x}}, [&, r] { return r(silu(x)); });
    s.run({{"op.square.x", &x}}, [&, r] { return r(square(x)); });
    s.run({{"op.sum.x", &x}}, [&] { return square(sum(x)); });
    s.run({{"op.mean.x", &x}}, [&] { return square(mean(x)); });
    auto r26 = s.readout({2, 6});
    s.run({{"op.reshape.x", &x}}, [&, r26] { return r26(reshape(x, {2, 6})); });
    s.run({{"op.softmax.x", &x}}, [&, r] { return r(softmax(x, 1)); });
    s.run({{"op.softmax_axis0.x", &x}}, [&, r] { return r(softmax(x, 0)); });
    auto r33 = s.readout({3, 3});
    s.run({{"op.slice.x", &x}}, [&, r33] { return r33(slice(x, 1, 1, 4)); });
  }
  {
    auto& x = s.input({2, 3, 4});
    auto r1 = s.readout({2, 1, 4});
    s.run({{"op.sum_axis.x", &x}}, [&, r1] { return r1(sum_axis(x, 1)); });
    s.run({{"op.mean_axis.x", &x}}, [&, r1] { return r1(mean_axis(x, 1)); });
  }
  {
    auto& x = s.input({3, 5});
    auto& g = s.input({5});
    auto& b = s.input({5});
    auto r = s.readout({3, 5});
    s.run({{"op.layer_norm.x", &x}, {"op.layer_norm.gain", &g}, {"op.layer_norm.bias", &b}},
          [&, r] { return r(layer_norm(x, g, b)); });
  }
  {
    auto& a = s.input({2, 3});
    auto& b = s.input({2, 2});
    auto r = s.readout({2, 5});
    s.run({{"op.concat.a", &a}, {"op.concat.b", &b}}, [&, r] { return r(concat<double>({a, b}, 1)); });
  }
  {
    auto& table = s.input({5, 3});
    auto r = s.readout({4, 3});
    const std::vector<std::size_t> ids{4, 0, 4, 2};
    s.run({{"op.gather_rows.table", &table}}, [&, r, ids] { return r(gather_rows(table, std::span(ids))); });
  }
  {
    auto& q = s.input({3, 4});
    auto& k = s.input({5, 4});
    auto& v = s.input({5, 6});
    auto r = s.readout({3, 6});
    const std::vector<std::uint8_t> mask{1, 1, 0, 1, 1};
    s.run({{"op.mha.q", &q}, {"op.mha.k", &k}, {"op.mha.v", &v}},
          [&, r, mask] { return r(mha(q, k, v, 2, std::span(mask))); });
  }
  {
    auto& a = s.input({3, 4});
    auto& b = s.input({3, 4});
    s.run({{"op.mse.prediction", &a}, {"op.mse.target", &b}}, [&] { return mse(a, b); });
  }
}

void module_cases(Suite& s) {
  {
    auto lin = Linear<double>::create(s.rng, 4, 3);
    lin.bias = random_normal<double>(s.rng, {1, 3}, 0.5);
    auto& x = s.input({2, 4});
    auto r = s.readout({2, 3});
    ParamList<double> ps;
    lin.collect("linear", ps);
    ps.push_back({"linear.input.x", &x});
    s.run(ps, [&, r] { return r(lin(x)); });
  }
  {
    auto pool = AttentionPool<double>::create(s.rng, 4, 4, 6, 2);
    auto& x = s.input({4, 4});
    auto r = s.readout({1, 6});
    ParamList<double> ps;
    pool.collect("attention_pool", ps);
    ps.push_back({"attention_pool.input.x", &x});
    s.run(ps, [&, r] { return r(pool(x)); });
  }
  {
    auto ca = CrossAttention<double>::create(s.rng, 4, 6, 4, 4, 2, true, 5);
    auto& f1 = s.input({3, 4});
    auto& f2 = s.input({2, 6});
    auto r = s.readout({3, 5});
    ParamList<double> ps;
    ca.collect("cross_attention", ps);
    ps.push_back({"cross_attention.input.f1", &f1});
    ps.push_back({"cross_attention.input.f2", &f2});
    s.run(ps, [&, r] { return r(ca(f1, f2)); });
  }
  {
    auto enc = ImageEncoder<double>::create(s.rng, ImageEncoderShape{3, 8, 4, 8, 2});
    auto& img = s.input({3, 8, 8}, 0.5);
    auto r_cls = s.readout({8});
    auto r_patch = s.readout({4, 8});
    ParamList<double> ps;
    enc.collect("image_encoder", ps);
    ps.push_back({"image_encoder.input.image", &img});
    s.run(ps, [&, r_cls, r_patch] {
      auto e = enc.encode(img);
      return add(r_cls(e.cls), r_patch(e.patches));
    });
  }
  {
    auto text = TextEncoder<double>::create(s.rng, 6, 4, 4);
    const std::vector<std::size_t> ids{1, 3, 5};
    auto r = s.readout({3, 4});
    ParamList<double> ps;
    text.collect("text_encoder", ps);
    s.run(ps, [&, r, ids] { return r(text.encode(ids).tokens); });
  }
  {
    auto embed = LayoutEmbedder<double>::create(s.rng, 4, 8);
    auto ilfm = Ilfm<double>::create(s.rng, 8, 4, 2, 2, 2);
    const std::vector<Box4> boxes{{0.1, 0.2, 0.5, 0.6}, {0.55, 0.1, 0.9, 0.45}};
    const auto layout = build_layout(boxes, 3);
    auto& patches = s.input({4, 8});
    auto r = s.readout({8});
    ParamList<double> ps;
    embed.collect("layout", ps);
    ilfm.collect("ilfm", ps);
    ps.push_back({"ilfm.input.patches", &patches});
    s.run(ps, [&, r, layout] { return r(ilfm.forward(patches, 2, 2, layout, embed)); });
  }
  {
    auto cmam = Cmam<double>::create(s.rng, 4, 6, 2);
    auto& text = s.input({3, 4});
    auto& cls = s.input({6});
    auto r_t = s.readout({3, 4});
    auto r_i = s.readout({6});
    ParamList<double> ps;
    cmam.collect("cmam", ps);
    ps.push_back({"cmam.input.text", &text});
    ps.push_back({"cmam.input.cls", &cls});
    s.run(ps, [&, r_t, r_i] {
      auto o = cmam.forward(text, cls);
      return add(r_t(o.text), r_i(o.image));
    });
  }
  {
    auto fuse = FuseHead<double>::create(s.rng, 6, 4, 2);
    auto& cls = s.input({6});
    auto& text = s.input({3, 4});
    auto& fl = s.input({6});
    auto r = s.readout({1, 6});
    ParamList<double> ps;
    fuse.collect("fuse", ps);
    ps.push_back({"fuse.input.cls", &cls});
    ps.push_back({"fuse.input.text", &text});
    ps.push_back({"fuse.input.layout_feature", &fl});
    s.run(ps, [&, r] { return r(fuse(cls, text, fl)); });
  }
  {
    auto text_w = TextBranchWeights<double>::create(s.rng, 4, 6);
    auto ip_w = IpBranchWeights<double>::create(s.rng, 4, 8);
    ip_w.v = Linear<double>::create(s.rng, 8, 4, false);
    auto& z = s.input({5, 4});
    auto& ft = s.input({3, 6});
    auto& f = s.input({1, 8});
    auto r = s.readout({5, 4});
    ParamList<double> ps;
    text_w.collect("dual_branch.text", ps);
    ip_w.collect("dual_branch.ip", ps);
    ps.push_back({"dual_branch.input.latent", &z});
    ps.push_back({"dual_branch.input.text_cond", &ft});
    ps.push_back({"dual_branch.input.image_cond", &f});
    s.run(ps, [&, r] { return r(dual_branch_attention(z, ft, f, 0.8, text_w, &ip_w, 2)); });
  }
  {
    const DenoiserShape shape{4, 3, 4, 2, 2, 4, 6};
    auto den = Denoiser<double>::create(s.rng, shape, InjectionConfig{InjectionPosition::All, 1.0});
    for (auto& b : den.blocks) b.ip->v = Linear<double>::create(s.rng, 6, 4, false);
    auto& x = s.input({4, 3});
    ConditionBundle<double> cond{random_normal<double>(s.rng, {2, 4}, 1.0), random_normal<double>(s.rng, {1, 6}, 1.0),
                                 0.8};
    auto r = s.readout({4, 3});
    ParamList<double> ps;
    den.collect_backbone("denoiser", ps);
    den.collect_ip("denoiser", ps);
    ps.push_back({"denoiser.input.x_t", &x});
    s.run(ps, [&, r, cond] { return r(den.forward(x, 17, cond, nullptr)); });
  }
}

}  // namespace

std::vector<GradcheckGroup> gradcheck_suite(std::uint64_t seed, const GradcheckOptions& options) {
  Suite s{Rng(seed, 0x9c), options, {}, {}};
  op_cases(s);
  module_cases(s);
  return s.out;
}

}  // namespace ql
