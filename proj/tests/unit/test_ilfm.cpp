// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "golden_cases.hpp"
#include "ql/error.hpp"
#include "ql/gradcheck.hpp"
#include "reference.hpp"

using namespace ql;

namespace {

const std::vector<Box4> kBoxes{{0.10, 0.15, 0.40, 0.45}, {0.55, 0.05, 0.95, 0.35}, {0.20, 0.60, 0.50, 0.90},
                               {0.00, 0.00, 0.30, 0.20}};

double max_gap(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("golden output, double precision is bit exact") {
  auto golden = golden::from_hex(golden::load(QL_TEST_DATA "/golden_ilfm.json")["F_L"]);
  auto out = golden::ilfm_case<double>().run().to_doubles();
  REQUIRE(out.size() == golden.size());
  CHECK(std::memcmp(out.data(), golden.data(), out.size() * sizeof(double)) == 0);
}

TEST_CASE("golden output, single precision within 1e-6") {
  auto golden = golden::from_hex(golden::load(QL_TEST_DATA "/golden_ilfm.json")["F_L"]);
  auto out = golden::ilfm_case<float>().run().to_doubles();
  CHECK(max_gap(out, golden) < 1e-6);
}

TEST_CASE("agrees with the straight-line reference on random setups") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    Rng rng(seed);
    auto embed = LayoutEmbedder<double>::create(rng, 8, 16);
    auto m = Ilfm<double>::create(rng, 16, 8, 3, 2, 4);
    auto patches = random_normal<double>(rng, {6, 16}, 1.0);
    std::vector<Box4> boxes(kBoxes.begin(), kBoxes.begin() + static_cast<long>(seed % 5));
    auto layout = build_layout(boxes, 5);
    auto out = m.forward(patches, 3, 2, layout, embed).to_doubles();
    auto ref = reference::ilfm(m, embed, reference::from(patches), layout).v;
    CHECK(max_gap(out, ref) < 1e-12);
  }
}

TEST_CASE_TEMPLATE("shape, padding and permutation properties", T, float, double) {
  Rng rng(7);
  auto embed = LayoutEmbedder<T>::create(rng, 64, 64);
  auto m = Ilfm<T>::create(rng, 64, 64, 4, 4, 8);
  auto patches = random_normal<T>(rng, {16, 64}, 1.0);

  SUBCASE("output is one d_I vector for every box count") {
    for (std::size_t n = 0; n <= 4; ++n) {
      std::vector<Box4> boxes(kBoxes.begin(), kBoxes.begin() + static_cast<long>(n));
      auto out = m.forward(patches, 4, 4, build_layout(boxes, 16), embed);
      CHECK(out.shape() == Shape{64});
      for (double v : out.to_doubles()) CHECK(std::isfinite(v));
    }
  }
  SUBCASE("padding capacity does not matter") {
    auto a = m.forward(patches, 4, 4, build_layout(kBoxes, 8), embed).to_doubles();
    auto b = m.forward(patches, 4, 4, build_layout(kBoxes, 16), embed).to_doubles();
    CHECK(max_gap(a, b) < 1e-6);
  }
  SUBCASE("box order does not matter") {
    std::vector<Box4> perm{kBoxes[2], kBoxes[0], kBoxes[3], kBoxes[1]};
    auto a = m.forward(patches, 4, 4, build_layout(kBoxes, 16), embed).to_doubles();
    auto b = m.forward(patches, 4, 4, build_layout(perm, 16), embed).to_doubles();
    CHECK(max_gap(a, b) < 1e-6);
  }
  SUBCASE("padded slots get no attention and rows sum to one") {
    IlfmTrace trace;
    auto layout = build_layout(kBoxes, 16);
    m.forward(patches, 4, 4, layout, embed, &trace);
    const auto& rec = trace.fusion;
    CHECK(rec.heads == 8);
    CHECK(rec.n_q == 16);
    REQUIRE(rec.n_k == 16 + 17);
    for (std::size_t r = 0; r < rec.heads * rec.n_q; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < rec.n_k; ++j) {
        double w = rec.weights[r * rec.n_k + j];
        if (j >= 16 && layout.mask[j - 16] == 0) CHECK(w == 0.0);
        s += w;
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
  SUBCASE("shape errors") {
    auto layout = build_layout(kBoxes, 16);
    CHECK_THROWS_AS(m.forward(patches, 2, 8, layout, embed), ValidationError);
    CHECK_THROWS_AS(m.forward(random_normal<T>(rng, {16, 32}, 1.0), 4, 4, layout, embed), ValidationError);
    auto broken = layout;
    broken.mask.pop_back();
    CHECK_THROWS_AS(m.forward(patches, 4, 4, broken, embed), ValidationError);
  }
}

TEST_CASE("gradients match finite differences") {
  Rng rng(8);
  auto embed = LayoutEmbedder<double>::create(rng, 8, 16);
  auto m = Ilfm<double>::create(rng, 16, 8, 2, 2, 4);
  auto patches = random_normal<double>(rng, {4, 16}, 1.0);
  patches.set_requires_grad(true);
  auto w = random_normal<double>(rng, {16}, 1.0);
  std::vector<Box4> boxes(kBoxes.begin(), kBoxes.begin() + 2);
  auto layout = build_layout(boxes, 4);
  ParamList<double> params{{"input.patches", &patches}};
  embed.collect("layout", params);
  m.collect("ilfm", params);
  for (auto& p : params) p.tensor->set_requires_grad(true);
  auto groups = check_gradients(params, [&] { return sum(mul(m.forward(patches, 2, 2, layout, embed), w)); }, {});
  CHECK(groups.size() >= 8);
  for (const auto& g : groups) {
    INFO(g.name);
    CHECK(g.rel_error < 1e-4);
  }
}
