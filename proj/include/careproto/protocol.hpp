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

// Protocol trees: binary decision trees whose internal nodes ask about one
// observation and whose leaves carry a diagnosis with care recommendations.
//
// Document format (format_version 1):
//
//   {"format_version": 1, "disease_id": "...", "root": "<node-id>",
//    "nodes": {"<node-id>": {"kind": "decision", "question": "...",
//                            "observation": "...", "predicate": {"op": ...},
//                            "required_test": "...", "yes": "<id>", "no": "<id>"}
//              | {"kind": "leaf", "diagnosis": "...",
//                 "recommendations": [...], "medications": [...]}}}
//
// Predicates: {"op": "greater_than", "threshold": x}, {"op": "less_than",
// "threshold": x}, {"op": "equals", "category": s},
// {"op": "in_set", "categories": [s, ...]}. Comparisons are strict, so a value
// equal to the threshold takes the "no" branch.

#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "careproto/domain.hpp"

namespace careproto {

struct GreaterThan {
  double threshold = 0.0;
  bool operator==(const GreaterThan&) const = default;
};
struct LessThan {
  double threshold = 0.0;
  bool operator==(const LessThan&) const = default;
};
struct Equals {
  std::string category;
  bool operator==(const Equals&) const = default;
};
struct InSet {
  std::set<std::string> categories;
  bool operator==(const InSet&) const = default;
};

using Predicate = std::variant<GreaterThan, LessThan, Equals, InSet>;

ValueKind predicate_kind(const Predicate& p);

// nullopt when the value's kind does not fit the predicate (or is absent).
std::optional<bool> evaluate(const Predicate& p, const ObservationValue& value);

struct DecisionNode {
  std::string question;
  std::string observation;
  Predicate predicate;
  std::string required_test;
  std::string yes;
  std::string no;
  bool operator==(const DecisionNode&) const = default;
};

struct LeafNode {
  std::string diagnosis;
  std::vector<std::string> recommendations;
  std::vector<std::string> medications;
  bool operator==(const LeafNode&) const = default;
};

using TreeNode = std::variant<DecisionNode, LeafNode>;

struct TreeSource {
  enum class Kind { kSeed, kCorrection } kind = Kind::kSeed;
  std::string report_id;  // set for corrections
  bool operator==(const TreeSource&) const = default;
};

struct ProtocolTree {
  std::string disease_id;
  int version = 0;  // 0 until stored in a repository
  std::string root;
  std::map<std::string, TreeNode> nodes;
  TreeSource source;

  const TreeNode* find(const std::string& id) const;
  // Same disease, root and nodes; version and provenance are ignored.
  bool same_structure(const ProtocolTree& other) const;
  bool operator==(const ProtocolTree&) const = default;
};

inline constexpr int kTreeFormatVersion = 1;

// Position information for a failed parse. line/column are 1-based and set
// for syntax errors; path is a JSON pointer for structural errors.
struct TreeParseError {
  std::string message;
  std::string path;
  size_t line = 0;
  size_t column = 0;

  std::string to_string() const;
};

// Throws Error(kParse) whose message is TreeParseError::to_string(). Dangling
// references and duplicate node ids are parse errors; deeper integrity rules
// belong to validate_tree.
ProtocolTree parse_tree(std::string_view document);
ProtocolTree tree_from_json(const json& document);
json tree_to_json(const ProtocolTree& tree);
std::string serialize_tree(const ProtocolTree& tree);  // pretty, 2-space indent

struct Violation {
  std::string node_id;  // empty when the rule concerns the whole tree
  std::string rule;
  std::string message;

  std::string to_string() const;
  bool operator==(const Violation&) const = default;
};

// Rule names: "missing root", "dangling reference", "not a tree",
// "unreachable", "unknown test", "test/observation mismatch",
// "predicate kind mismatch", "unknown category", "invalid predicate",
// "empty field".
std::vector<Violation> validate_tree(const ProtocolTree& tree, const TestRegistry& tests);

// Longest root-to-leaf path measured in decision nodes. Requires a valid tree.
int tree_depth(const ProtocolTree& tree);
int depth_below(const ProtocolTree& tree, const std::string& node_id);

// Paths are canonical strings: a JSON array of [question, "yes"|"no"] pairs
// from the root. A node's content excludes its child ids.
struct TreeDiff {
  std::set<std::string> added;
  std::set<std::string> removed;
  std::set<std::string> changed;

  bool empty() const { return added.empty() && removed.empty() && changed.empty(); }
  bool operator==(const TreeDiff&) const = default;
};

std::map<std::string, std::string> enumerate_paths(const ProtocolTree& tree);
TreeDiff diff_trees(const ProtocolTree& a, const ProtocolTree& b);
json diff_to_json(const TreeDiff& diff);

void to_json(json& j, const Predicate& p);
void from_json(const json& j, Predicate& p);
void to_json(json& j, const TreeNode& n);
void to_json(json& j, const TreeSource& s);
void from_json(const json& j, TreeSource& s);
void to_json(json& j, const Violation& v);

}  // namespace careproto
