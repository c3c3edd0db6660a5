// SPDX-License-Identifier: Apache-2.0
//
// Fixed-seed ILFM and CMAM setups shared by the golden generator and tests.
#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ql/cmam.hpp"
#include "ql/ilfm.hpp"

namespace ql::golden {

inline constexpr std::uint64_t kSeed = 20240611;

template <typename T>
struct IlfmCase {
  LayoutEmbedder<T> embed;
  Ilfm<T> ilfm;
  Tensor<T> patches;
  LayoutSet layout;

  Tensor<T> run() const { return ilfm.forward(patches, 4, 4, layout, embed); }
};

template <typename T>
IlfmCase<T> ilfm_case() {
  Rng rng(kSeed, 1);
  IlfmCase<T> c;
  c.embed = LayoutEmbedder<T>::create(rng, 8, 16);
  c.ilfm = Ilfm<T>::create(rng, 16, 8, 4, 4, 4);
  c.patches = random_normal<T>(rng, {16, 16}, 1.0);
  const std::vector<Box4> boxes{{0.10, 0.15, 0.40, 0.45}, {0.55, 0.05, 0.95, 0.35}, {0.20, 0.60, 0.50, 0.90}};
  c.layout = build_layout(boxes, 6);
  return c;
}

template <typename T>
struct CmamCase {
  Cmam<T> cmam;
  Tensor<T> text;
  Tensor<T> cls;

  CmamOutput<T> run() const { return cmam.forward(text, cls); }
};

template <typename T>
CmamCase<T> cmam_case() {
  Rng rng(kSeed, 2);
  CmamCase<T> c;
  c.cmam = Cmam<T>::create(rng, 16, 16, 4);
  c.text = random_normal<T>(rng, {5, 16}, 1.0);
  c.cls = random_normal<T>(rng, {16}, 1.0);
  return c;
}

inline std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline std::vector<double> from_hex(const nlohmann::json& arr) {
  std::vector<double> out;
  for (const auto& s : arr) out.push_back(std::strtod(s.get<std::string>().c_str(), nullptr));
  return out;
}

inline nlohmann::json load(const std::string& path) {
  std::ifstream in(path);
  nlohmann::json j;
  in >> j;
  return j;
}

}  // namespace ql::golden
