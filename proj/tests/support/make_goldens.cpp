// SPDX-License-Identifier: Apache-2.0
//
// Regenerates tests/data/golden_*.json. Each engine output is checked against
// the straight-line reference before it is frozen.
#include <cmath>
#include <iostream>

#include "golden_cases.hpp"
#include "reference.hpp"

namespace {

using namespace ql;

double max_gap(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

nlohmann::json hex_array(const std::vector<double>& v) {
  nlohmann::json out = nlohmann::json::array();
  for (double x : v) out.push_back(golden::hex(x));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_goldens <output-dir>\n";
    return 1;
  }
  const std::string dir = argv[1];

  const auto ic = golden::ilfm_case<double>();
  const auto f_l = ic.run().to_doubles();
  const auto f_ref = reference::ilfm(ic.ilfm, ic.embed, reference::from(ic.patches), ic.layout).v;
  const double gap_i = max_gap(f_l, f_ref);

  const auto cc = golden::cmam_case<double>();
  const auto co = cc.run();
  const auto cls_row = reference::from(reshape(cc.cls, {16, 1}));
  reference::Mat cls(1, 16);
  cls.v = cls_row.v;
  const auto cref = reference::cmam(cc.cmam, reference::from(cc.text), cls);
  const double gap_c = std::max(max_gap(co.text.to_doubles(), cref.text.v), max_gap(co.image.to_doubles(), cref.image.v));

  std::cout << "ilfm reference gap " << gap_i << ", cmam reference gap " << gap_c << '\n';
  if (gap_i > 1e-12 || gap_c > 1e-12) {
    std::cerr << "engine disagrees with the reference; nothing written\n";
    return 1;
  }
  std::ofstream(dir + "/golden_ilfm.json") << nlohmann::json{{"seed", golden::kSeed}, {"F_L", hex_array(f_l)}}.dump(2) << '\n';
  std::ofstream(dir + "/golden_cmam.json")
      << nlohmann::json{{"seed", golden::kSeed}, {"T_prime", hex_array(co.text.to_doubles())}, {"I_cls_prime", hex_array(co.image.to_doubles())}}
             .dump(2)
      << '\n';
  return 0;
}
