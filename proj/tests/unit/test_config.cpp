// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "ql/config.hpp"
#include "ql/error.hpp"
#include "scratch_dir.hpp"

using namespace ql;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run run_cli(const std::string& args, const std::string& env = "") {
  testing::ScratchDir dir("cli");
  auto out = dir / "out.txt";
  std::string cmd = env + " " + QL_CLI + " " + args + " > " + out.string() + " 2>&1";
  int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

}  // namespace

TEST_CASE("defaults") {
  RunConfig c;
  CHECK(c.model.heads == 8);
  CHECK(c.lambda == 0.8);
  CHECK(c.cfg_w == 5.0);
  CHECK(c.steps == 30);
  CHECK(c.lr == 2.5e-4);
  CHECK(c.train_steps == 2100);
  CHECK(c.dropout_rate == 0.05);
  CHECK(c.model.injection.position == InjectionPosition::Down4);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("validation") {
  RunConfig c;
  c.dropout_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = RunConfig{};
  c.model.heads = 7;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = RunConfig{};
  c.model.d_image = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = RunConfig{};
  c.steps = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("json round trip and unknown keys") {
  RunConfig c;
  c.seed = 42;
  c.lambda = 0.3;
  c.model.injection.position = InjectionPosition::Mid;
  nlohmann::json j = c;
  RunConfig back;
  merge_json(j, back);
  CHECK(back.seed == 42);
  CHECK(back.lambda == 0.3);
  CHECK(back.model.injection.position == InjectionPosition::Mid);
  CHECK(nlohmann::json(back) == j);

  CHECK_THROWS_AS(merge_json(nlohmann::json{{"lamda", 0.5}}, back), ValidationError);
  CHECK_THROWS_AS(merge_json(nlohmann::json{{"model", {{"d_X", 3}}}}, back), ValidationError);

  testing::ScratchDir dir("cfg");
  std::ofstream(dir / "c.json") << R"({"seed": 9, "model": {"d_I": 32, "max_n": 8}})";
  auto loaded = load_run_config(dir / "c.json");
  CHECK(loaded.seed == 9);
  CHECK(loaded.model.d_image == 32);
  CHECK(loaded.model.max_boxes == 8);
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS_AS(load_run_config(dir / "bad.json"), ValidationError);
}

TEST_CASE("seed from the environment") {
  RunConfig c;
  c.seed = 1;
  setenv("QL_SEED", "1234", 1);
  apply_seed_env(c);
  CHECK(c.seed == 1234);
  setenv("QL_SEED", "abc", 1);
  CHECK_THROWS_AS(apply_seed_env(c), ValidationError);
  unsetenv("QL_SEED");
  apply_seed_env(c);
  CHECK(c.seed == 1234);
}

TEST_CASE("command line") {
  testing::ScratchDir dir("cli_data");
  SUBCASE("count above ten is a validation error") {
    auto r = run_cli("synth --count 11 --data-dir " + (dir / "d").string());
    CHECK(r.code == 1);
    CHECK(r.output.find("11") != std::string::npos);
  }
  SUBCASE("seed precedence") {
    std::ofstream(dir / "c.json") << R"({"seed": 5, "num_scenes": 1})";
    auto a = run_cli("synth --config " + (dir / "c.json").string() + " --data-dir " + (dir / "a").string(), "QL_SEED=77");
    auto b = run_cli("synth --seed 77 --num-scenes 1 --data-dir " + (dir / "b").string());
    auto c = run_cli("synth --config " + (dir / "c.json").string() + " --data-dir " + (dir / "c").string());
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    REQUIRE(c.code == 0);
    auto bytes = [](const std::filesystem::path& p) {
      std::ifstream in(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(bytes(dir / "a" / "scene_000.qlt") == bytes(dir / "b" / "scene_000.qlt"));
    CHECK(bytes(dir / "a" / "scene_000.qlt") != bytes(dir / "c" / "scene_000.qlt"));
  }
  SUBCASE("unknown config key") {
    std::ofstream(dir / "bad.json") << R"({"sed": 5})";
    auto r = run_cli("synth --config " + (dir / "bad.json").string());
    CHECK(r.code == 1);
    CHECK(r.output.find("sed") != std::string::npos);
  }
  SUBCASE("gradcheck self-test fails loudly") {
    auto r = run_cli("gradcheck --seeds 1 --corrupt-gradient");
    CHECK(r.code == 2);
    CHECK(r.output.find("FAIL") != std::string::npos);
  }
  SUBCASE("unknown flag") {
    CHECK(run_cli("synth --frobnicate").code == 1);
  }
  SUBCASE("bad position") {
    auto r = run_cli("train --position down9 --train-steps 1 --data-dir " + (dir / "d").string());
    CHECK(r.output.find("down9") != std::string::npos);
    CHECK(r.code == 1);
  }
}
