// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "ql/error.hpp"
#include "ql/nn.hpp"
#include "ql/qlt.hpp"
#include "ql/rng.hpp"
#include "scratch_dir.hpp"

using ql::testing::ScratchDir;

namespace {

std::string what_of(auto&& fn) {
  try {
    fn();
  } catch (const ql::ValidationError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("rng streams are reproducible") {
  ql::Rng a(42), b(42), c(43);
  std::vector<std::uint64_t> xa, xb, xc;
  for (int i = 0; i < 16; ++i) {
    xa.push_back(a.next_u64());
    xb.push_back(b.next_u64());
    xc.push_back(c.next_u64());
  }
  CHECK(xa == xb);
  CHECK(xa != xc);

  ql::Rng parent(5);
  auto f1 = parent.fork(1).normals(8);
  auto f2 = parent.fork(1).normals(8);
  CHECK(f1 == f2);
  CHECK(parent.counter() == 0);
  CHECK(f1 != parent.fork(2).normals(8));
}

TEST_CASE("rng distributions") {
  ql::Rng rng(9);
  double lo = 1, hi = 0;
  for (int i = 0; i < 20000; ++i) {
    double u = rng.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    CHECK_UNARY(rng.below(7) < 7);
  }
  CHECK(lo >= 0.0);
  CHECK(hi < 1.0);
  auto z = rng.normals(200000);
  double m = 0, s = 0;
  for (double x : z) m += x;
  m /= static_cast<double>(z.size());
  for (double x : z) s += (x - m) * (x - m);
  s /= static_cast<double>(z.size());
  CHECK(std::abs(m) < 0.01);
  CHECK(std::abs(s - 1.0) < 0.02);
}

TEST_CASE("qlt byte layout") {
  std::vector<float> values{1.0f, -2.5f};
  auto bytes = ql::encode_qlt({2, 1}, values);
  REQUIRE(bytes.size() == 4 + 4 + 8 + 8);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "QLT1");
  CHECK(bytes[4] == 2);
  CHECK(bytes[5] == 0);
  CHECK(bytes[8] == 2);
  CHECK(bytes[12] == 1);
  // 1.0f = 0x3f800000 little-endian
  CHECK(bytes[16] == 0x00);
  CHECK(bytes[19] == 0x3f);
  auto back = ql::decode_qlt(bytes);
  CHECK(back.shape == ql::Shape{2, 1});
  CHECK(back.values == values);
}

TEST_CASE("qlt rejects malformed input") {
  auto bytes = ql::encode_qlt({3}, std::vector<float>{1, 2, 3});
  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(ql::decode_qlt(truncated), ql::ValidationError);
  auto bad_magic = bytes;
  bad_magic[3] = '2';
  CHECK_THROWS_AS(ql::decode_qlt(bad_magic), ql::ValidationError);
  CHECK_THROWS_AS(ql::decode_qlt(std::vector<std::uint8_t>{'Q', 'L'}), ql::ValidationError);
  CHECK_THROWS_AS(ql::encode_qlt({2, 2}, std::vector<float>{1, 2, 3}), ql::DimensionError);
  CHECK_THROWS_AS(ql::read_qlt("/nonexistent/x.qlt"), ql::ValidationError);
}

TEST_CASE("tensor files round trip") {
  ScratchDir dir("qlt");
  ql::Rng rng(11);
  auto t = ql::random_normal<float>(rng, {3, 4}, 1.0);
  ql::save_tensor(dir / "t.qlt", t);
  auto back = ql::load_tensor<float>(dir / "t.qlt");
  CHECK(back.shape() == t.shape());
  CHECK(back.to_doubles() == t.to_doubles());
}

TEST_CASE("checkpoints") {
  ScratchDir dir("ckpt");
  ql::Rng rng(12);
  auto lin = ql::Linear<float>::create(rng, 4, 3);
  ql::ParamList<float> params;
  lin.collect("fc", params);
  ql::save_checkpoint(dir.path(), params, {{"note", "x"}});
  CHECK(ql::read_manifest(dir.path())["note"] == "x");

  auto other = ql::Linear<float>::zeros(4, 3);
  ql::ParamList<float> target;
  other.collect("fc", target);
  ql::load_checkpoint(dir.path(), target);
  CHECK(other.weight.to_doubles() == lin.weight.to_doubles());
  CHECK(other.bias.to_doubles() == lin.bias.to_doubles());

  SUBCASE("missing parameter is named") {
    auto extra = ql::Linear<float>::zeros(4, 3);
    ql::ParamList<float> p;
    extra.collect("other", p);
    CHECK(what_of([&] { ql::load_checkpoint(dir.path(), p); }).find("other.weight") !=
          std::string::npos);
  }
  SUBCASE("shape mismatch is named") {
    auto wrong = ql::Linear<float>::zeros(5, 3);
    ql::ParamList<float> p;
    wrong.collect("fc", p);
    auto msg = what_of([&] { ql::load_checkpoint(dir.path(), p); });
    CHECK(msg.find("fc.weight") != std::string::npos);
  }
  SUBCASE("missing manifest") {
    ScratchDir empty("empty");
    CHECK_THROWS_AS(ql::load_checkpoint(empty.path(), target), ql::ValidationError);
  }
}
