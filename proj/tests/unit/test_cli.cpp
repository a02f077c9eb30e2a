/*
 * Copyright 2026 The qrefine Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <doctest.h>

#include <sstream>

#include "fixtures.hpp"
#include "qrefine/cli.hpp"

using namespace qrefine;
namespace fs = std::filesystem;

namespace {

struct Demo {
  fs::path dir;
  Demo() : dir(testing::scratch_dir("cli")) {
    for (const auto& e : fs::directory_iterator(QREFINE_DEMO_DIR)) {
      if (e.is_regular_file()) fs::copy_file(e.path(), dir / e.path().filename());
    }
  }
  ~Demo() { fs::remove_all(dir); }
  std::string cfg() const { return (dir / "scripted.cfg").string(); }
};

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_command(args, out, err);
  return {code, out.str(), err.str()};
}

std::set<std::string> listing(const fs::path& dir) {
  std::set<std::string> names;
  for (const auto& e : fs::recursive_directory_iterator(dir)) names.insert(fs::relative(e.path(), dir).string());
  return names;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors") {
    CHECK(cli({}).code == kExitUsage);
    const auto bogus = cli({"bogus"});
    CHECK(bogus.code == kExitUsage);
    CHECK(bogus.err.find("unknown subcommand 'bogus'") != std::string::npos);
    CHECK(cli({"infer", "--question", "q"}).code == kExitUsage);
    CHECK(cli({"infer", "--config", "/no/such/file.cfg"}).code == kExitUsage);
    CHECK(cli({"--help"}).code == kExitOk);
    Demo demo;
    CHECK(cli({"infer", "--config", demo.cfg(), "--width", "0", "--question", "q"}).code == kExitUsage);
    CHECK(cli({"infer", "--config", demo.cfg(), "--strategy", "vote", "--question", "q"}).code == kExitUsage);
  }

  TEST_CASE("bad config exits with the config code") {
    Demo demo;
    std::ofstream(demo.dir / "broken.cfg") << "{\"search\": {\"width\": 2,}";
    CHECK(cli({"infer", "--config", (demo.dir / "broken.cfg").string(), "--question", "q"}).code == kExitConfig);
    std::ofstream(demo.dir / "unknown.cfg") << "{\"surprise\": true}";
    CHECK(cli({"eval", "--config", (demo.dir / "unknown.cfg").string()}).code == kExitConfig);
  }

  TEST_CASE("infer answers the two-hop demo question") {
    Demo demo;
    const auto r = cli({"infer", "--config", demo.cfg(), "--question", "Who is the mother of Pierre Curie's spouse?"});
    REQUIRE(r.code == kExitOk);
    CHECK(r.out.find("answer: Bronislawa Sklodowska") != std::string::npos);
    CHECK(fs::exists(demo.dir / "out" / "infer" / "trajectories.jsonl"));
  }

  TEST_CASE("eval is reproducible byte for byte") {
    Demo demo;
    REQUIRE(cli({"eval", "--config", demo.cfg()}).code == kExitOk);
    const std::string first = testing::slurp(demo.dir / "out" / "eval" / "demo.json");
    REQUIRE(cli({"eval", "--config", demo.cfg()}).code == kExitOk);
    CHECK(first == testing::slurp(demo.dir / "out" / "eval" / "demo.json"));
    const auto j = nlohmann::json::parse(first);
    CHECK(j["metric"] == "f1");
    CHECK(j["items"] == 2);
    CHECK(cli({"eval", "--config", demo.cfg(), "--benchmark", "nope"}).code != kExitOk);
  }

  TEST_CASE("every command writes only inside the output directory") {
    Demo demo;
    const auto before = listing(demo.dir);
    CHECK(cli({"build-dataset", "--config", demo.cfg()}).code == kExitOk);
    CHECK(cli({"infer", "--config", demo.cfg(), "--question", "What is the capital of France?"}).code == kExitOk);
    CHECK(cli({"eval", "--config", demo.cfg()}).code == kExitOk);
    CHECK(cli({"compare-strategies", "--config", demo.cfg()}).code == kExitOk);
    const auto res = cli({"resilience", "--config", demo.cfg()});
    CHECK(res.code == kExitOk);
    CHECK(res.out.find("AVG") != std::string::npos);
    for (const auto& name : listing(demo.dir)) {
      if (before.count(name) == 0) CHECK(name.rfind("out", 0) == 0);
    }
    for (const char* f : {"dataset/instances.jsonl", "dataset/manifest.json", "eval/demo.json",
                          "compare/strategies.txt", "resilience/table.txt"})
      CHECK(fs::exists(demo.dir / "out" / f));
    const auto manifest = nlohmann::json::parse(testing::slurp(demo.dir / "out" / "dataset" / "manifest.json"));
    CHECK(manifest["passthrough"] == 1);
  }

  TEST_CASE("benchmark names cannot escape the output directory") {
    Demo demo;
    auto j = nlohmann::json::parse(testing::slurp(demo.dir / "scripted.cfg"));
    j["eval"]["benchmarks"][0]["name"] = "../../escaped";
    std::ofstream(demo.dir / "escape.cfg") << j.dump();
    CHECK(cli({"eval", "--config", (demo.dir / "escape.cfg").string()}).code == kExitRuntime);
    CHECK_FALSE(fs::exists(demo.dir.parent_path() / "escaped.json"));
  }
}
