// SPDX-License-Identifier: Apache-2.0
//
// Brute-force average precision: for every distinct score threshold the
// detections at or above it are re-matched from scratch, giving one
// precision/recall point; the interpolated precision at each recall is the
// best precision at any equal or higher recall. Shares no code with
// ql::average_precision.
#pragma once

#include <algorithm>
#include <set>
#include <vector>

#include "ql/metrics.hpp"

namespace ql::oracle {

inline double box_iou(const Box4& a, const Box4& b) {
  const double ix = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double iy = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = ix * iy;
  const double u = (a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - inter;
  return u > 0 ? inter / u : 0.0;
}

/// True positives among detections with score >= tau.
inline std::size_t true_positives(const DetectionSet& s, double tau, std::size_t& kept) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < s.detections.size(); ++i)
    if (s.detections[i].score >= tau) idx.push_back(i);
  kept = idx.size();
  // Insertion sort keeps the earlier index first among equal scores.
  for (std::size_t i = 1; i < idx.size(); ++i)
    for (std::size_t j = i; j > 0 && s.detections[idx[j]].score > s.detections[idx[j - 1]].score; --j)
      std::swap(idx[j], idx[j - 1]);
  std::vector<bool> taken(s.ground_truth.size(), false);
  std::size_t tp = 0;
  for (auto d : idx) {
    int best = -1;
    double best_iou = 0.5;
    for (std::size_t g = 0; g < s.ground_truth.size(); ++g) {
      const double v = box_iou(s.detections[d].box, s.ground_truth[g]);
      if (!taken[g] && v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      taken[static_cast<std::size_t>(best)] = true;
      ++tp;
    }
  }
  return tp;
}

inline double brute_force_ap(const std::vector<DetectionSet>& sets) {
  std::set<double, std::greater<>> thresholds;
  std::size_t gt = 0;
  for (const auto& s : sets) {
    gt += s.ground_truth.size();
    for (const auto& d : s.detections) thresholds.insert(d.score);
  }
  std::vector<std::pair<double, double>> pr;  // (recall, precision)
  for (double tau : thresholds) {
    std::size_t tp = 0, kept = 0;
    for (const auto& s : sets) {
      std::size_t k = 0;
      tp += true_positives(s, tau, k);
      kept += k;
    }
    pr.emplace_back(static_cast<double>(tp) / static_cast<double>(gt), static_cast<double>(tp) / static_cast<double>(kept));
  }
  double ap = 0, prev_recall = 0;
  for (const auto& [r, p] : pr) {
    double best = 0;
    for (const auto& [r2, p2] : pr)
      if (r2 >= r) best = std::max(best, p2);
    ap += (r - prev_recall) * best;
    prev_recall = r;
  }
  return ap;
}

}  // namespace ql::oracle
