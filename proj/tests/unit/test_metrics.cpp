// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ap_oracle.hpp"
#include "ql/error.hpp"
#include "ql/metrics.hpp"
#include "ql/rng.hpp"
#include "scratch_dir.hpp"

using namespace ql;

namespace {

Box4 random_box(Rng& rng) {
  double x0 = rng.uniform() * 0.8, y0 = rng.uniform() * 0.8;
  return {x0, y0, x0 + 0.05 + rng.uniform() * 0.15, y0 + 0.05 + rng.uniform() * 0.15};
}

Box4 jitter(Rng& rng, const Box4& b, double amount) {
  auto j = [&] { return (rng.uniform() - 0.5) * amount; };
  Box4 out{b.x0 + j(), b.y0 + j(), b.x1 + j(), b.y1 + j()};
  out.x0 = std::clamp(out.x0, 0.0, 1.0);
  out.y0 = std::clamp(out.y0, 0.0, 1.0);
  out.x1 = std::clamp(std::max(out.x1, out.x0), 0.0, 1.0);
  out.y1 = std::clamp(std::max(out.y1, out.y0), 0.0, 1.0);
  return out;
}

std::vector<DetectionSet> random_sets(std::uint64_t seed, std::size_t count) {
  Rng rng(seed);
  std::vector<DetectionSet> sets;
  for (std::size_t s = 0; s < count; ++s) {
    DetectionSet set;
    set.image = "img" + std::to_string(s);
    std::size_t n_gt = rng.below(5);
    for (std::size_t i = 0; i < n_gt; ++i) set.ground_truth.push_back(random_box(rng));
    for (const auto& g : set.ground_truth) {
      if (rng.uniform() < 0.8) set.detections.push_back({jitter(rng, g, 0.06), std::round(rng.uniform() * 20) / 20});
    }
    std::size_t spurious = rng.below(3);
    for (std::size_t i = 0; i < spurious; ++i) set.detections.push_back({random_box(rng), std::round(rng.uniform() * 20) / 20});
    sets.push_back(set);
  }
  return sets;
}

}  // namespace

TEST_CASE("iou") {
  Box4 a{0.1, 0.2, 0.5, 0.6};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(Box4{0, 0, 0.4, 0.4}, Box4{0.5, 0.5, 1, 1}) == 0.0);
  CHECK(iou(Box4{0, 0, 1, 1}, Box4{0, 0, 0.5, 1}) == 0.5);
  CHECK(iou(kPaddingBox, kPaddingBox) == 0.0);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    auto p = random_box(rng), q = random_box(rng);
    CHECK(iou(p, q) == iou(q, p));
    CHECK(iou(p, q) >= 0.0);
    CHECK(iou(p, q) <= 1.0);
  }
}

TEST_CASE("matching") {
  Box4 g{0, 0, 0.5, 0.5};
  Box4 close{0, 0, 0.5, 0.45};  // IoU 0.9
  SUBCASE("single hit") {
    auto r = match({"a", {{close, 0.9}}, {g}});
    CHECK(r.tp() == 1);
    CHECK(r.fp() == 0);
    CHECK(r.false_negatives == 0);
  }
  SUBCASE("one to one") {
    auto r = match({"a", {{close, 0.7}, {g, 0.9}}, {g}});
    CHECK(r.tp() == 1);
    CHECK(r.fp() == 1);
    CHECK(r.true_positive[1]);
    CHECK_FALSE(r.true_positive[0]);
  }
  SUBCASE("equal scores keep list order") {
    auto r = match({"a", {{close, 0.5}, {g, 0.5}}, {g}});
    CHECK(r.true_positive[0]);
    CHECK_FALSE(r.true_positive[1]);
  }
  SUBCASE("misses only") {
    auto r = match({"a", {}, {g, close}});
    CHECK(r.false_negatives == 2);
  }
  SUBCASE("threshold is strict") {
    Box4 half{0, 0, 0.5, 0.25};  // IoU exactly 0.5
    CHECK(match({"a", {{half, 1.0}}, {g}}).tp() == 0);
  }
  SUBCASE("never more hits than either side") {
    for (const auto& s : random_sets(2, 50)) {
      auto r = match(s);
      CHECK(r.tp() <= std::min(s.detections.size(), s.ground_truth.size()));
    }
  }
}

TEST_CASE("object accuracy") {
  Box4 g1{0, 0, 0.3, 0.3}, g2{0.5, 0.5, 0.9, 0.9};
  DetectionSet good{"a", {{g1, 0.9}, {g2, 0.8}}, {g1, g2}};
  CHECK(object_accuracy({good}) == 1.0);
  DetectionSet extra{"b", {{g1, 0.9}, {g2, 0.8}, {g2, 0.7}}, {g1, g2}};
  CHECK_FALSE(set_correct(extra));
  DetectionSet weak{"c", {{g1, 0.9}, {Box4{0.5, 0.5, 0.9, 0.62}, 0.8}}, {g1, g2}};
  CHECK_FALSE(set_correct(weak));
  CHECK(object_accuracy({good, extra, weak, good}) == 0.5);
  CHECK(set_correct(DetectionSet{"empty", {}, {}}));
  CHECK_THROWS_AS(object_accuracy({}), ValidationError);

  auto sets = random_sets(3, 30);
  auto doubled = sets;
  doubled.insert(doubled.end(), sets.begin(), sets.end());
  CHECK(object_accuracy(doubled) == object_accuracy(sets));
}

TEST_CASE("average precision") {
  Box4 g{0, 0, 0.5, 0.5};
  CHECK(average_precision({{"a", {{g, 0.9}}, {g}}}) == 1.0);
  CHECK(average_precision({{"a", {}, {g}}}) == 0.0);
  CHECK_THROWS_AS(average_precision({{"a", {{g, 0.9}}, {}}}), ValidationError);

  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    auto sets = random_sets(seed, 50);
    bool any_gt = false;
    for (const auto& s : sets) any_gt = any_gt || !s.ground_truth.empty();
    REQUIRE(any_gt);
    double ap = average_precision(sets);
    CHECK(std::abs(ap - oracle::brute_force_ap(sets)) < 1e-9);
    CHECK(ap >= 0.0);
    CHECK(ap <= 1.0);

    auto padded = sets;
    padded[0].detections.push_back({Box4{0.9, 0.9, 1, 1}, 0.0});
    CHECK(average_precision(padded) <= ap + 1e-12);
  }
}

TEST_CASE("detection files and report") {
  testing::ScratchDir dir("det");
  DetectionSet s{"a.ppm", {{{0.1, 0.1, 0.3, 0.3}, 0.75}}, {{0.1, 0.1, 0.3, 0.3}}};
  write_detection_file(dir / "a.json", s);
  auto back = read_detection_file(dir / "a.json");
  CHECK(back.image == s.image);
  REQUIRE(back.detections.size() == 1);
  CHECK(back.detections[0].score == 0.75);
  CHECK(back.detections[0].box == s.detections[0].box);
  CHECK(back.ground_truth == s.ground_truth);

  auto report = evaluation_report({s});
  CHECK(report["OA"] == 1.0);
  CHECK(report["AP"] == 1.0);
  CHECK(report["per_image"].size() == 1);
  CHECK_THROWS_AS(read_detection_file(dir / "none.json"), ValidationError);
}
