// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ql/layout.hpp"

namespace ql {

struct Detection {
  Box4 box;
  double score = 0;
};

struct DetectionSet {
  std::string image;
  std::vector<Detection> detections;
  std::vector<Box4> ground_truth;
};

/// Zero when the union is empty.
double iou(const Box4& a, const Box4& b);

struct MatchResult {
  std::vector<bool> true_positive;  // per detection, in input order
  std::vector<int> matched_gt;      // -1 when unmatched
  std::size_t false_negatives = 0;
  std::size_t tp() const;
  std::size_t fp() const;
};

/// Greedy one-to-one matching in descending score order (stable, so equal
/// scores keep list order). A detection takes the unused ground-truth box with
/// the highest IoU strictly above the threshold; ties go to the earlier box.
MatchResult match(const DetectionSet& set, double iou_threshold = 0.5);

/// Correct iff the counts agree and every ground-truth box is matched.
bool set_correct(const DetectionSet& set, double iou_threshold = 0.5);
double object_accuracy(const std::vector<DetectionSet>& sets, double iou_threshold = 0.5);

/// All-point interpolated area under the pooled precision/recall curve.
double average_precision(const std::vector<DetectionSet>& sets, double iou_threshold = 0.5);

DetectionSet read_detection_file(const std::filesystem::path& path);
void write_detection_file(const std::filesystem::path& path, const DetectionSet& set);

/// {"OA", "AP", "per_image": [{"image", "correct", "tp", "fp", "fn"}...]}
nlohmann::json evaluation_report(const std::vector<DetectionSet>& sets, double iou_threshold = 0.5);

}  // namespace ql
