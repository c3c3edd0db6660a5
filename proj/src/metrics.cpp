// SPDX-License-Identifier: Apache-2.0
#include "ql/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "ql/error.hpp"

namespace ql {

double iou(const Box4& a, const Box4& b) {
  const double iw = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double ih = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::size_t MatchResult::tp() const {
  return static_cast<std::size_t>(std::count(true_positive.begin(), true_positive.end(), true));
}

std::size_t MatchResult::fp() const { return true_positive.size() - tp(); }

namespace {

std::vector<std::size_t> score_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

}  // namespace

MatchResult match(const DetectionSet& set, double iou_threshold) {
  MatchResult r;
  r.true_positive.assign(set.detections.size(), false);
  r.matched_gt.assign(set.detections.size(), -1);
  std::vector<bool> used(set.ground_truth.size(), false);
  for (std::size_t d : score_order(set.detections)) {
    double best = iou_threshold;
    int best_gt = -1;
    for (std::size_t g = 0; g < set.ground_truth.size(); ++g) {
      if (used[g]) continue;
      const double v = iou(set.detections[d].box, set.ground_truth[g]);
      if (v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      used[static_cast<std::size_t>(best_gt)] = true;
      r.true_positive[d] = true;
      r.matched_gt[d] = best_gt;
    }
  }
  r.false_negatives = static_cast<std::size_t>(std::count(used.begin(), used.end(), false));
  return r;
}

bool set_correct(const DetectionSet& set, double iou_threshold) {
  if (set.detections.size() != set.ground_truth.size()) return false;
  return match(set, iou_threshold).false_negatives == 0;
}

double object_accuracy(const std::vector<DetectionSet>& sets, double iou_threshold) {
  if (sets.empty()) throw ValidationError("object accuracy needs at least one detection set");
  std::size_t correct = 0;
  for (const auto& s : sets) correct += set_correct(s, iou_threshold) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(sets.size());
}

double average_precision(const std::vector<DetectionSet>& sets, double iou_threshold) {
  struct Scored {
    double score;
    bool tp;
  };
  std::vector<Scored> pooled;
  std::size_t total_gt = 0;
  for (const auto& s : sets) {
    const auto m = match(s, iou_threshold);
    total_gt += s.ground_truth.size();
    for (std::size_t i = 0; i < s.detections.size(); ++i) pooled.push_back({s.detections[i].score, m.true_positive[i]});
  }
  if (total_gt == 0) throw ValidationError("average precision needs at least one ground-truth box");
  std::stable_sort(pooled.begin(), pooled.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });

  // One PR point per distinct score threshold.
  std::vector<double> recall{0.0};
  std::vector<double> precision{1.0};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    (pooled[i].tp ? tp : fp) += 1;
    if (i + 1 < pooled.size() && pooled[i + 1].score == pooled[i].score) continue;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  for (std::size_t i = precision.size() - 1; i > 0; --i) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0;
  for (std::size_t i = 1; i < recall.size(); ++i) ap += (recall[i] - recall[i - 1]) * precision[i];
  return ap;
}

namespace {

Box4 box_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw ValidationError(where + ": box must be [x0, y0, x1, y1]");
  Box4 b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!b.valid()) throw ValidationError(where + ": invalid box");
  return b;
}

nlohmann::json box_to_json(const Box4& b) { return {b.x0, b.y0, b.x1, b.y1}; }

}  // namespace

DetectionSet read_detection_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open detection file " + path.string());
  DetectionSet s;
  try {
    nlohmann::json j;
    in >> j;
    s.image = j.value("image", path.stem().string());
    std::size_t i = 0;
    for (const auto& d : j.value("detections", nlohmann::json::array())) {
      const std::string where = path.string() + " detection " + std::to_string(i++);
      const double score = d.at("score").get<double>();
      if (!(score >= 0 && score <= 1)) throw ValidationError(where + ": score must lie in [0, 1]");
      s.detections.push_back({box_from_json(d.at("box"), where), score});
    }
    i = 0;
    for (const auto& g : j.value("ground_truth", nlohmann::json::array())) {
      s.ground_truth.push_back(box_from_json(g, path.string() + " ground truth " + std::to_string(i++)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed detection file " + path.string() + ": " + e.what());
  }
  return s;
}

void write_detection_file(const std::filesystem::path& path, const DetectionSet& set) {
  nlohmann::json dets = nlohmann::json::array();
  for (const auto& d : set.detections) dets.push_back({{"box", box_to_json(d.box)}, {"score", d.score}});
  nlohmann::json gt = nlohmann::json::array();
  for (const auto& g : set.ground_truth) gt.push_back(box_to_json(g));
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << nlohmann::json{{"image", set.image}, {"detections", dets}, {"ground_truth", gt}}.dump(2) << '\n';
}

nlohmann::json evaluation_report(const std::vector<DetectionSet>& sets, double iou_threshold) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& s : sets) {
    const auto m = match(s, iou_threshold);
    per.push_back({{"image", s.image},
                   {"correct", set_correct(s, iou_threshold)},
                   {"tp", m.tp()},
                   {"fp", m.fp()},
                   {"fn", m.false_negatives}});
  }
  return {{"OA", object_accuracy(sets, iou_threshold)},
          {"AP", average_precision(sets, iou_threshold)},
          {"per_image", per}};
}

}  // namespace ql
