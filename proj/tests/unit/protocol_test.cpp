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

#include <random>
#include <string>

#include "careproto/error.hpp"
#include "careproto/protocol.hpp"
#include "fixtures.hpp"

using namespace careproto;
using namespace careproto::testing;

namespace {

std::string error_of(const std::string& doc) {
  try {
    parse_tree(doc);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParse);
    return e.what();
  }
  return "";
}

bool has_rule(const std::vector<Violation>& vs, const std::string& rule) {
  for (const auto& v : vs)
    if (v.rule == rule) return true;
  return false;
}

}  // namespace

TEST_SUITE("protocol") {

TEST_CASE("minimal document parses into three nodes with a decision root") {
  auto tree = parse_tree(kMinimalTree);
  CHECK(tree.disease_id == "diabetes");
  CHECK(tree.nodes.size() == 3);
  REQUIRE(std::holds_alternative<DecisionNode>(tree.nodes.at(tree.root)));
  const auto& root = std::get<DecisionNode>(tree.nodes.at(tree.root));
  CHECK(root.predicate == Predicate{GreaterThan{100}});
  CHECK(std::get<LeafNode>(tree.nodes.at("pos")).medications == std::vector<std::string>{"metformin"});
  CHECK(validate_tree(tree, clinic_registry()).empty());
}

TEST_CASE("parse errors") {
  SUBCASE("dangling branch names the missing id") {
    std::string doc = kMinimalTree;
    doc.replace(doc.find("\"yes\": \"pos\""), 12, "\"yes\": \"ghost\"");
    auto msg = error_of(doc);
    CHECK(msg.find("dangling reference 'ghost'") != std::string::npos);
    CHECK(msg.find("/nodes/q/yes") != std::string::npos);
  }
  SUBCASE("malformed syntax carries line and column") {
    std::string doc = "{\n  \"format_version\": 1,\n  \"disease_id\": \"x\",,\n}";
    auto msg = error_of(doc);
    CHECK(msg.find("malformed syntax") != std::string::npos);
    CHECK(msg.find("line 3") != std::string::npos);
  }
  SUBCASE("unknown node kind") {
    std::string doc = kMinimalTree;
    doc.replace(doc.find("\"kind\": \"leaf\""), 14, "\"kind\": \"loop\"");
    CHECK(error_of(doc).find("unknown node kind 'loop'") != std::string::npos);
  }
  SUBCASE("duplicate node id") {
    std::string doc = kMinimalTree;
    auto at = doc.find("\"neg\":");
    doc.insert(at, R"("pos": {"kind": "leaf", "diagnosis": "dup", "recommendations": [], "medications": []},
    )");
    auto msg = error_of(doc);
    CHECK(msg.find("duplicate node-id 'pos'") != std::string::npos);
  }
  SUBCASE("unknown field") {
    std::string doc = kMinimalTree;
    doc.replace(doc.find("\"root\""), 6, "\"rooot\"");
    CHECK(error_of(doc).find("unknown field 'rooot'") != std::string::npos);
  }
  SUBCASE("wrong format version") {
    std::string doc = kMinimalTree;
    doc.replace(doc.find("\"format_version\": 1"), 19, "\"format_version\": 2");
    CHECK(error_of(doc).find("format_version") != std::string::npos);
  }
  SUBCASE("unknown predicate op and bad threshold type") {
    std::string doc = kMinimalTree;
    doc.replace(doc.find("greater_than"), 12, "at_least");
    CHECK(error_of(doc).find("unknown predicate op") != std::string::npos);
    std::string doc2 = kMinimalTree;
    doc2.replace(doc2.find("\"threshold\": 100"), 16, "\"threshold\": \"100\"");
    CHECK(error_of(doc2).find("/nodes/q/predicate/threshold") != std::string::npos);
  }
  SUBCASE("invalid utf-8") {
    std::string doc = kMinimalTree;
    doc.replace(doc.find("Q"), 1, "\xff");
    CHECK(error_of(doc).find("malformed syntax") != std::string::npos);
  }
}

TEST_CASE("validation rules") {
  auto registry = clinic_registry();
  auto tree = parse_tree(kDiabetesTree);
  REQUIRE(validate_tree(tree, registry).empty());

  SUBCASE("two parents is not a tree") {
    auto& sugar = std::get<DecisionNode>(tree.nodes.at("sugar"));
    sugar.no = "diabetic";
    tree.nodes.erase("normal");
    auto vs = validate_tree(tree, registry);
    CHECK(has_rule(vs, "not a tree"));
  }
  SUBCASE("test producing another observation") {
    std::get<DecisionNode>(tree.nodes.at("hba1c")).required_test = "sugar_test";
    auto vs = validate_tree(tree, registry);
    REQUIRE(vs.size() == 1);
    CHECK(vs[0].rule == "test/observation mismatch");
    CHECK(vs[0].node_id == "hba1c");
  }
  SUBCASE("unknown test") {
    std::get<DecisionNode>(tree.nodes.at("hba1c")).required_test = "nope";
    CHECK(has_rule(validate_tree(tree, registry), "unknown test"));
  }
  SUBCASE("categorical predicate on a numeric test") {
    std::get<DecisionNode>(tree.nodes.at("hba1c")).predicate = Equals{"high"};
    CHECK(has_rule(validate_tree(tree, registry), "predicate kind mismatch"));
  }
  SUBCASE("category outside the test's set") {
    auto pe = parse_tree(kPreeclampsiaTree);
    std::get<DecisionNode>(pe.nodes.at("protein")).predicate = InSet{{"trace", "lots"}};
    CHECK(has_rule(validate_tree(pe, registry), "unknown category"));
  }
  SUBCASE("unreachable node") {
    tree.nodes["orphan"] = LeafNode{"orphan", {}, {}};
    auto vs = validate_tree(tree, registry);
    REQUIRE(vs.size() == 1);
    CHECK(vs[0].rule == "unreachable");
  }
  SUBCASE("cycle through the root") {
    std::get<DecisionNode>(tree.nodes.at("hba1c")).no = "sugar";
    tree.nodes.erase("prediabetic");
    CHECK(has_rule(validate_tree(tree, registry), "not a tree"));
  }
  SUBCASE("missing root and dangling reference") {
    tree.root = "gone";
    std::get<DecisionNode>(tree.nodes.at("hba1c")).yes = "gone2";
    auto vs = validate_tree(tree, registry);
    CHECK(has_rule(vs, "missing root"));
    CHECK(has_rule(vs, "dangling reference"));
  }
}

TEST_CASE("strict predicates") {
  Predicate gt = GreaterThan{100};
  CHECK(evaluate(gt, NumericValue{140, "mg/dL"}) == true);
  CHECK(evaluate(gt, NumericValue{100, "mg/dL"}) == false);
  CHECK(evaluate(LessThan{5}, NumericValue{5, ""}) == false);
  CHECK(evaluate(Equals{"plus"}, CategoricalValue{"plus"}) == true);
  CHECK(evaluate(InSet{{"a", "b"}}, CategoricalValue{"c"}) == false);
  CHECK_FALSE(evaluate(gt, CategoricalValue{"high"}).has_value());
  CHECK_FALSE(evaluate(Equals{"x"}, NumericValue{1, ""}).has_value());
  CHECK_FALSE(evaluate(gt, Absent{}).has_value());
}

TEST_CASE("serialization round-trips random trees") {
  std::mt19937_64 rng(21);
  RandomPool pool;
  TestRegistry registry(pool.tests());
  for (int i = 0; i < 100; ++i) {
    auto tree = random_tree("d" + std::to_string(i), 1 + static_cast<int>(rng() % 6), pool, rng);
    REQUIRE(validate_tree(tree, registry).empty());
    auto back = parse_tree(serialize_tree(tree));
    CHECK(back.same_structure(tree));
    CHECK(serialize_tree(back) == serialize_tree(tree));
  }
}

TEST_CASE("valid trees terminate at a leaf within |nodes| steps under any assignment") {
  std::mt19937_64 rng(22);
  RandomPool pool;
  TestRegistry registry(pool.tests());
  for (int i = 0; i < 100; ++i) {
    auto tree = random_tree("d", 1 + static_cast<int>(rng() % 6), pool, rng);
    for (int assignment = 0; assignment < 10; ++assignment) {
      std::string cursor = tree.root;
      size_t steps = 0;
      while (const auto* d = std::get_if<DecisionNode>(&tree.nodes.at(cursor))) {
        auto branch = evaluate(d->predicate, pool.random_value(d->observation, rng));
        REQUIRE(branch.has_value());
        cursor = *branch ? d->yes : d->no;
        REQUIRE(++steps <= tree.nodes.size());
      }
      CHECK(steps <= static_cast<size_t>(tree_depth(tree)));
    }
  }
}

TEST_CASE("tree depth counts decision nodes") {
  CHECK(tree_depth(parse_tree(kMinimalTree)) == 1);
  auto diabetes = parse_tree(kDiabetesTree);
  CHECK(tree_depth(diabetes) == 2);
  CHECK(depth_below(diabetes, "hba1c") == 1);
  CHECK(depth_below(diabetes, "normal") == 0);
}

TEST_CASE("path diff") {
  auto base = parse_tree(kMinimalTree);

  SUBCASE("identical trees") { CHECK(diff_trees(base, base).empty()); }

  SUBCASE("one leaf's medications changed") {
    auto edited = base;
    std::get<LeafNode>(edited.nodes.at("pos")).medications = {"insulin"};
    auto d = diff_trees(base, edited);
    CHECK(d.added.empty());
    CHECK(d.removed.empty());
    CHECK(d.changed == std::set<std::string>{R"([["Q","yes"]])"});
  }

  SUBCASE("decision spliced above a leaf") {
    // Old paths: [], [Q,yes], [Q,no]. New paths add [Q,yes][Q2,yes] and
    // [Q,yes][Q2,no]; [Q,yes] turns from a leaf into a decision.
    auto edited = base;
    DecisionNode q2{"Q2", "hba1c", GreaterThan{6.5}, "hba1c_test", "pos", "mild"};
    edited.nodes["q2"] = q2;
    edited.nodes["mild"] = LeafNode{"mild", {}, {}};
    std::get<DecisionNode>(edited.nodes.at("q")).yes = "q2";
    REQUIRE(validate_tree(edited, clinic_registry()).empty());

    auto d = diff_trees(base, edited);
    CHECK(d.changed == std::set<std::string>{R"([["Q","yes"]])"});
    CHECK(d.added == std::set<std::string>{R"([["Q","yes"],["Q2","no"]])",
                                           R"([["Q","yes"],["Q2","yes"]])"});
    CHECK(d.removed.empty());

    auto reverse = diff_trees(edited, base);
    CHECK(reverse.removed == d.added);
    CHECK(reverse.changed == d.changed);
  }

  SUBCASE("renaming node ids is not a change") {
    auto renamed = parse_tree(kMinimalTree);
    auto leaf = renamed.nodes.at("pos");
    renamed.nodes.erase("pos");
    renamed.nodes["positive"] = leaf;
    std::get<DecisionNode>(renamed.nodes.at("q")).yes = "positive";
    CHECK(diff_trees(base, renamed).empty());
  }
}

}
