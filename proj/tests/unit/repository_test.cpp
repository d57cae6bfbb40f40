// Copyright 2026 The careproto Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "doctest.h"

#include <atomic>
#include <filesystem>
#include <random>
#include <thread>

#include "careproto/error.hpp"
#include "careproto/repository.hpp"
#include "fixtures.hpp"

using namespace careproto;
using namespace careproto::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("careproto_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ProtocolTree with_medication(ProtocolTree t, const std::string& med) {
  std::get<LeafNode>(t.nodes.at("pos")).medications = {med};
  return t;
}

}  // namespace

TEST_SUITE("repository") {

TEST_CASE("versions and activation") {
  ProtocolRepository repo(clinic_registry());
  auto v1 = parse_tree(kMinimalTree);
  CHECK(repo.put_version(v1) == 1);
  repo.activate("diabetes", 1);
  CHECK(repo.get_active("diabetes").version == 1);

  CHECK(repo.put_version(with_medication(v1, "insulin")) == 2);
  CHECK(repo.get_active("diabetes").version == 1);
  repo.activate("diabetes", 2);
  auto active = repo.get_active("diabetes");
  CHECK(active.version == 2);
  CHECK(std::get<LeafNode>(active.nodes.at("pos")).medications[0] == "insulin");

  CHECK_THROWS_AS(repo.activate("diabetes", 3), Error);
  CHECK_THROWS_AS(repo.activate("asthma", 1), Error);
  CHECK_THROWS_AS(repo.get_active("asthma"), Error);
  CHECK_FALSE(repo.find_active("asthma").has_value());

  auto infos = repo.versions("diabetes");
  REQUIRE(infos.size() == 2);
  CHECK_FALSE(infos[0].active);
  CHECK(infos[1].active);
}

TEST_CASE("invalid trees are rejected with their violations") {
  ProtocolRepository repo(clinic_registry());
  auto bad = parse_tree(kMinimalTree);
  std::get<DecisionNode>(bad.nodes.at("q")).required_test = "hba1c_test";
  try {
    repo.put_version(bad);
    FAIL("expected rejection");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidArgument);
    REQUIRE(e.details().size() == 1);
    CHECK(e.details()[0].find("test/observation mismatch") != std::string::npos);
  }
  CHECK(repo.empty());
}

TEST_CASE("history is append-only under random operation sequences") {
  std::mt19937_64 rng(8);
  ProtocolRepository repo(clinic_registry());
  std::map<std::string, std::vector<ProtocolTree>> expected;
  std::vector<ProtocolTree> bases{parse_tree(kMinimalTree), parse_tree(kFeverTree),
                                  parse_tree(kPreeclampsiaTree)};
  for (int op = 0; op < 300; ++op) {
    const auto& base = bases[rng() % bases.size()];
    auto& hist = expected[base.disease_id];
    size_t before = hist.size();
    if (rng() % 3 || hist.empty()) {
      auto t = base;
      for (auto& [_, node] : t.nodes)
        if (auto* leaf = std::get_if<LeafNode>(&node)) {
          leaf->recommendations.push_back("note " + std::to_string(op));
          break;
        }
      int v = repo.put_version(t);
      t.version = v;
      hist.push_back(t);
      CHECK(v == static_cast<int>(hist.size()));
    } else {
      repo.activate(base.disease_id, 1 + static_cast<int>(rng() % hist.size()));
    }
    CHECK(repo.versions(base.disease_id).size() >= before);
  }
  for (const auto& [disease, hist] : expected)
    for (const auto& t : hist) CHECK(repo.get_version(disease, t.version) == t);
}

TEST_CASE("a directory-backed repository reloads identically") {
  auto dir = scratch_dir("repo");
  {
    ProtocolRepository repo(clinic_registry(), dir);
    repo.put_version(parse_tree(kMinimalTree));
    auto v2 = with_medication(parse_tree(kMinimalTree), "insulin");
    v2.source = {TreeSource::Kind::kCorrection, "r000001"};
    repo.put_version(v2);
    repo.activate("diabetes", 2);
    repo.put_version(parse_tree(kFeverTree));
  }
  CHECK(fs::exists(dir / "index.json"));
  CHECK(fs::exists(dir / "diabetes" / "v2.json"));
  // Version files are plain tree documents.
  CHECK(parse_tree(read_file(dir / "diabetes" / "v1.json")).same_structure(parse_tree(kMinimalTree)));

  ProtocolRepository reloaded(clinic_registry(), dir);
  CHECK(reloaded.active_version("diabetes") == 2);
  CHECK(reloaded.get_version("diabetes", 2).source.report_id == "r000001");
  CHECK(reloaded.get_active("infection").version == 1);
  CHECK(reloaded.diseases() == std::vector<std::string>{"diabetes", "infection"});
  fs::remove_all(dir);
}

TEST_CASE("readers see consistent snapshots while a writer appends") {
  ProtocolRepository repo(clinic_registry());
  repo.put_version(parse_tree(kMinimalTree));
  std::atomic<bool> stop{false};
  std::atomic<int> bad{0};
  std::vector<std::thread> readers;
  for (int i = 0; i < 3; ++i)
    readers.emplace_back([&] {
      while (!stop) {
        auto infos = repo.versions("diabetes");
        int active = 0;
        for (size_t k = 0; k < infos.size(); ++k) {
          if (infos[k].version != static_cast<int>(k) + 1) ++bad;
          if (infos[k].active) ++active;
        }
        if (active != 1) ++bad;
        if (repo.get_active("diabetes").version < 1) ++bad;
      }
    });
  for (int v = 0; v < 200; ++v) {
    int n = repo.put_version(with_medication(parse_tree(kMinimalTree), "m" + std::to_string(v)));
    repo.activate("diabetes", n);
  }
  stop = true;
  for (auto& t : readers) t.join();
  CHECK(bad == 0);
  CHECK(repo.versions("diabetes").size() == 201);
}

TEST_CASE("path components escape unsafe characters") {
  CHECK(path_component("pre-eclampsia_2") == "pre-eclampsia_2");
  CHECK(path_component("a/b") == "a%2Fb");
  CHECK(path_component("..") == "%2E%2E");
}

}
