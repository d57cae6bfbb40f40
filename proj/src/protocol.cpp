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

#include "careproto/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>

#include "careproto/error.hpp"

namespace careproto {
namespace {

std::string pointer_escape(const std::string& token) {
  std::string out;
  for (char c : token) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

[[noreturn]] void structural_error(const std::string& path, const std::string& message) {
  TreeParseError err{message, path.empty() ? "/" : path, 0, 0};
  throw Error(ErrorCode::kParse, err.to_string());
}

// Field access with strict typing and path-qualified errors.
class Fields {
 public:
  Fields(const json& object, std::string path) : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) structural_error(path_, "expected an object");
  }

  void allow_only(std::initializer_list<const char*> keys) const {
    for (const auto& [key, _] : object_.items()) {
      bool known = std::any_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; });
      if (!known) structural_error(child(key), "unknown field '" + key + "'");
    }
  }

  const json& require(const char* key) const {
    auto it = object_.find(key);
    if (it == object_.end()) structural_error(child(key), std::string("missing field '") + key + "'");
    return *it;
  }

  std::string string(const char* key) const {
    const json& v = require(key);
    if (!v.is_string()) structural_error(child(key), "expected a string");
    return v.get<std::string>();
  }

  double number(const char* key) const {
    const json& v = require(key);
    if (!v.is_number()) structural_error(child(key), "expected a number");
    double x = v.get<double>();
    if (!std::isfinite(x)) structural_error(child(key), "expected a finite number");
    return x;
  }

  std::vector<std::string> strings(const char* key) const {
    const json& v = require(key);
    if (!v.is_array()) structural_error(child(key), "expected an array of strings");
    std::vector<std::string> out;
    for (size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_string())
        structural_error(child(key) + "/" + std::to_string(i), "expected a string");
      out.push_back(v[i].get<std::string>());
    }
    return out;
  }

  std::string child(const std::string& key) const { return path_ + "/" + pointer_escape(key); }

 private:
  const json& object_;
  std::string path_;
};

Predicate predicate_from(const json& j, const std::string& path) {
  Fields f(j, path);
  std::string op = f.string("op");
  if (op == "greater_than") {
    f.allow_only({"op", "threshold"});
    return GreaterThan{f.number("threshold")};
  }
  if (op == "less_than") {
    f.allow_only({"op", "threshold"});
    return LessThan{f.number("threshold")};
  }
  if (op == "equals") {
    f.allow_only({"op", "category"});
    return Equals{f.string("category")};
  }
  if (op == "in_set") {
    f.allow_only({"op", "categories"});
    auto cats = f.strings("categories");
    return InSet{std::set<std::string>(cats.begin(), cats.end())};
  }
  structural_error(f.child("op"), "unknown predicate op '" + op + "'");
}

TreeNode node_from(const json& j, const std::string& path) {
  Fields f(j, path);
  std::string kind = f.string("kind");
  if (kind == "decision") {
    f.allow_only({"kind", "question", "observation", "predicate", "required_test", "yes", "no"});
    DecisionNode d;
    d.question = f.string("question");
    d.observation = f.string("observation");
    d.predicate = predicate_from(f.require("predicate"), f.child("predicate"));
    d.required_test = f.string("required_test");
    d.yes = f.string("yes");
    d.no = f.string("no");
    return d;
  }
  if (kind == "leaf") {
    f.allow_only({"kind", "diagnosis", "recommendations", "medications"});
    LeafNode l;
    l.diagnosis = f.string("diagnosis");
    l.recommendations = f.strings("recommendations");
    l.medications = f.strings("medications");
    return l;
  }
  structural_error(f.child("kind"), "unknown node kind '" + kind + "'");
}

json node_content(const TreeNode& node) {
  if (const auto* d = std::get_if<DecisionNode>(&node))
    return json{{"kind", "decision"},
                {"question", d->question},
                {"observation", d->observation},
                {"predicate", d->predicate},
                {"required_test", d->required_test}};
  const auto& l = std::get<LeafNode>(node);
  return json{{"kind", "leaf"},
              {"diagnosis", l.diagnosis},
              {"recommendations", l.recommendations},
              {"medications", l.medications}};
}

// Tracks object keys during parsing so duplicates (which nlohmann would
// silently overwrite) become errors with a path.
struct DuplicateKeyDetector {
  struct Frame {
    bool is_object = false;
    std::set<std::string> keys;
    std::string current;
  };
  std::vector<Frame> frames;
  std::optional<std::string> error;

  std::string path() const {
    std::string out;
    for (const auto& f : frames)
      if (f.is_object && !f.current.empty()) out += "/" + pointer_escape(f.current);
    return out;
  }

  bool operator()(int, json::parse_event_t event, json& parsed) {
    using E = json::parse_event_t;
    switch (event) {
      case E::object_start: frames.push_back({true, {}, {}}); break;
      case E::array_start: frames.push_back({false, {}, {}}); break;
      case E::object_end:
      case E::array_end:
        if (!frames.empty()) frames.pop_back();
        break;
      case E::key: {
        if (frames.empty()) break;
        std::string key = parsed.get<std::string>();
        auto& top = frames.back();
        top.current = key;
        if (!top.keys.insert(key).second && !error) {
          bool in_nodes = frames.size() == 2 && frames[0].current == "nodes";
          error = TreeParseError{in_nodes ? "duplicate node-id '" + key + "'"
                                          : "duplicate key '" + key + "'",
                                 path(), 0, 0}
                      .to_string();
        }
        break;
      }
      case E::value: break;
    }
    return true;
  }
};

}  // namespace

ValueKind predicate_kind(const Predicate& p) {
  return std::holds_alternative<GreaterThan>(p) || std::holds_alternative<LessThan>(p)
             ? ValueKind::kNumeric
             : ValueKind::kCategorical;
}

std::optional<bool> evaluate(const Predicate& p, const ObservationValue& value) {
  const auto* num = std::get_if<NumericValue>(&value);
  const auto* cat = std::get_if<CategoricalValue>(&value);
  if (const auto* gt = std::get_if<GreaterThan>(&p)) {
    if (!num) return std::nullopt;
    return num->value > gt->threshold;
  }
  if (const auto* lt = std::get_if<LessThan>(&p)) {
    if (!num) return std::nullopt;
    return num->value < lt->threshold;
  }
  if (!cat) return std::nullopt;
  if (const auto* eq = std::get_if<Equals>(&p)) return cat->value == eq->category;
  return std::get<InSet>(p).categories.count(cat->value) > 0;
}

const TreeNode* ProtocolTree::find(const std::string& id) const {
  auto it = nodes.find(id);
  return it == nodes.end() ? nullptr : &it->second;
}

bool ProtocolTree::same_structure(const ProtocolTree& other) const {
  return disease_id == other.disease_id && root == other.root && nodes == other.nodes;
}

std::string TreeParseError::to_string() const {
  std::string out = message;
  if (line > 0) out += " at line " + std::to_string(line) + ", column " + std::to_string(column);
  if (!path.empty()) out += " (at " + path + ")";
  return out;
}

ProtocolTree parse_tree(std::string_view document) {
  DuplicateKeyDetector detector;
  json doc;
  try {
    doc = json::parse(document.begin(), document.end(), std::ref(detector));
  } catch (const json::parse_error& e) {
    size_t line = 1, column = 1;
    size_t limit = std::min<size_t>(e.byte > 0 ? e.byte - 1 : 0, document.size());
    for (size_t i = 0; i < limit; ++i) {
      if (document[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    TreeParseError err{"malformed syntax: " + std::string(e.what()), detector.path(), line,
                       column};
    throw Error(ErrorCode::kParse, err.to_string());
  }
  if (detector.error) throw Error(ErrorCode::kParse, *detector.error);
  return tree_from_json(doc);
}

ProtocolTree tree_from_json(const json& document) {
  Fields top(document, "");
  top.allow_only({"format_version", "disease_id", "root", "nodes"});
  const json& fv = top.require("format_version");
  if (!fv.is_number_integer() || fv.get<int>() != kTreeFormatVersion)
    structural_error("/format_version", "unsupported format_version (expected 1)");

  ProtocolTree tree;
  tree.disease_id = top.string("disease_id");
  if (tree.disease_id.empty()) structural_error("/disease_id", "disease_id is empty");
  tree.root = top.string("root");
  const json& nodes = top.require("nodes");
  if (!nodes.is_object()) structural_error("/nodes", "expected an object");
  for (const auto& [id, node] : nodes.items())
    tree.nodes.emplace(id, node_from(node, "/nodes/" + pointer_escape(id)));

  if (!tree.nodes.count(tree.root))
    structural_error("/root", "dangling reference '" + tree.root + "'");
  for (const auto& [id, node] : tree.nodes) {
    const auto* d = std::get_if<DecisionNode>(&node);
    if (!d) continue;
    std::string base = "/nodes/" + pointer_escape(id);
    if (!tree.nodes.count(d->yes)) structural_error(base + "/yes", "dangling reference '" + d->yes + "'");
    if (!tree.nodes.count(d->no)) structural_error(base + "/no", "dangling reference '" + d->no + "'");
  }
  return tree;
}

json tree_to_json(const ProtocolTree& tree) {
  json nodes = json::object();
  for (const auto& [id, node] : tree.nodes) nodes[id] = node;
  return json{{"format_version", kTreeFormatVersion},
              {"disease_id", tree.disease_id},
              {"root", tree.root},
              {"nodes", std::move(nodes)}};
}

std::string serialize_tree(const ProtocolTree& tree) { return tree_to_json(tree).dump(2); }

std::string Violation::to_string() const {
  return node_id.empty() ? rule + ": " + message : rule + " at node '" + node_id + "': " + message;
}

std::vector<Violation> validate_tree(const ProtocolTree& tree, const TestRegistry& tests) {
  std::vector<Violation> out;
  auto add = [&out](const std::string& node, const char* rule, std::string message) {
    out.push_back({node, rule, std::move(message)});
  };

  if (tree.disease_id.empty()) add("", "empty field", "disease_id is empty");
  bool has_root = tree.nodes.count(tree.root) > 0;
  if (!has_root) add("", "missing root", "root '" + tree.root + "' is not a node");

  std::map<std::string, std::set<std::string>> parents;
  for (const auto& [id, node] : tree.nodes) {
    if (const auto* leaf = std::get_if<LeafNode>(&node)) {
      if (leaf->diagnosis.empty()) add(id, "empty field", "leaf has no diagnosis");
      continue;
    }
    const auto& d = std::get<DecisionNode>(node);
    for (const std::string* child : {&d.yes, &d.no}) {
      if (!tree.nodes.count(*child))
        add(id, "dangling reference", "branch target '" + *child + "' does not exist");
      else
        parents[*child].insert(id);
    }
    if (d.question.empty()) add(id, "empty field", "decision has no question");
    if (d.observation.empty()) add(id, "empty field", "decision has no observation");

    std::visit(
        [&](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, GreaterThan> || std::is_same_v<P, LessThan>) {
            if (!std::isfinite(p.threshold)) add(id, "invalid predicate", "threshold is not finite");
          } else if constexpr (std::is_same_v<P, InSet>) {
            if (p.categories.empty()) add(id, "invalid predicate", "in_set has no categories");
          }
        },
        d.predicate);

    const TestDefinition* test = tests.find(d.required_test);
    if (!test) {
      add(id, "unknown test", "required_test '" + d.required_test + "' is not registered");
      continue;
    }
    if (test->produces != d.observation)
      add(id, "test/observation mismatch",
          "test '" + test->test_id + "' produces '" + test->produces + "', not '" +
              d.observation + "'");
    if (predicate_kind(d.predicate) != test->value_kind) {
      add(id, "predicate kind mismatch",
          to_string(predicate_kind(d.predicate)) + " predicate on " +
              to_string(test->value_kind) + " test '" + test->test_id + "'");
      continue;
    }
    std::vector<std::string> wanted;
    if (const auto* eq = std::get_if<Equals>(&d.predicate)) wanted.push_back(eq->category);
    if (const auto* in = std::get_if<InSet>(&d.predicate))
      wanted.assign(in->categories.begin(), in->categories.end());
    for (const auto& c : wanted)
      if (!std::binary_search(test->categories.begin(), test->categories.end(), c))
        add(id, "unknown category", "category '" + c + "' is not produced by '" + test->test_id + "'");
  }

  for (const auto& [child, from] : parents) {
    if (from.size() > 1)
      add(child, "not a tree", "node has " + std::to_string(from.size()) + " parents");
    if (child == tree.root) add(child, "not a tree", "root has a parent");
  }

  if (has_root) {
    std::set<std::string> seen{tree.root};
    std::queue<std::string> frontier;
    frontier.push(tree.root);
    while (!frontier.empty()) {
      std::string id = frontier.front();
      frontier.pop();
      if (const auto* d = std::get_if<DecisionNode>(&tree.nodes.at(id)))
        for (const std::string* child : {&d->yes, &d->no})
          if (tree.nodes.count(*child) && seen.insert(*child).second) frontier.push(*child);
    }
    for (const auto& [id, _] : tree.nodes)
      if (!seen.count(id)) add(id, "unreachable", "node is not reachable from the root");
  }
  return out;
}

int depth_below(const ProtocolTree& tree, const std::string& node_id) {
  std::function<int(const std::string&, size_t)> walk = [&](const std::string& id,
                                                             size_t budget) -> int {
    const TreeNode* node = tree.find(id);
    if (!node || budget == 0) return 0;
    const auto* d = std::get_if<DecisionNode>(node);
    if (!d) return 0;
    return 1 + std::max(walk(d->yes, budget - 1), walk(d->no, budget - 1));
  };
  return walk(node_id, tree.nodes.size());
}

int tree_depth(const ProtocolTree& tree) { return depth_below(tree, tree.root); }

std::map<std::string, std::string> enumerate_paths(const ProtocolTree& tree) {
  std::map<std::string, std::string> out;
  json path = json::array();
  std::function<void(const std::string&, size_t)> walk = [&](const std::string& id, size_t budget) {
    const TreeNode* node = tree.find(id);
    if (!node || budget == 0) return;
    out[path.dump()] = node_content(*node).dump();
    if (const auto* d = std::get_if<DecisionNode>(node)) {
      for (const auto& [branch, child] : {std::pair{"yes", &d->yes}, std::pair{"no", &d->no}}) {
        path.push_back(json::array({d->question, branch}));
        walk(*child, budget - 1);
        path.erase(path.size() - 1);
      }
    }
  };
  walk(tree.root, tree.nodes.size());
  return out;
}

TreeDiff diff_trees(const ProtocolTree& a, const ProtocolTree& b) {
  auto pa = enumerate_paths(a);
  auto pb = enumerate_paths(b);
  TreeDiff diff;
  for (const auto& [path, content] : pa) {
    auto it = pb.find(path);
    if (it == pb.end()) diff.removed.insert(path);
    else if (it->second != content) diff.changed.insert(path);
  }
  for (const auto& [path, _] : pb)
    if (!pa.count(path)) diff.added.insert(path);
  return diff;
}

json diff_to_json(const TreeDiff& diff) {
  auto decode = [](const std::set<std::string>& paths) {
    json out = json::array();
    for (const auto& p : paths) out.push_back(json::parse(p));
    return out;
  };
  return json{{"added", decode(diff.added)},
              {"removed", decode(diff.removed)},
              {"changed", decode(diff.changed)}};
}

void to_json(json& j, const Predicate& p) {
  std::visit(
      [&j](const auto& v) {
        using P = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<P, GreaterThan>) j = json{{"op", "greater_than"}, {"threshold", v.threshold}};
        else if constexpr (std::is_same_v<P, LessThan>) j = json{{"op", "less_than"}, {"threshold", v.threshold}};
        else if constexpr (std::is_same_v<P, Equals>) j = json{{"op", "equals"}, {"category", v.category}};
        else j = json{{"op", "in_set"}, {"categories", v.categories}};
      },
      p);
}

void from_json(const json& j, Predicate& p) { p = predicate_from(j, "/predicate"); }

void to_json(json& j, const TreeNode& n) {
  if (const auto* d = std::get_if<DecisionNode>(&n)) {
    j = node_content(n);
    j["yes"] = d->yes;
    j["no"] = d->no;
  } else {
    j = node_content(n);
  }
}

void to_json(json& j, const TreeSource& s) {
  if (s.kind == TreeSource::Kind::kSeed) j = json{{"kind", "seed"}};
  else j = json{{"kind", "correction"}, {"report_id", s.report_id}};
}

void from_json(const json& j, TreeSource& s) {
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "seed") {
    s = TreeSource{};
  } else if (kind == "correction") {
    s = TreeSource{TreeSource::Kind::kCorrection, j.at("report_id").get<std::string>()};
  } else {
    fail(ErrorCode::kParse, "unknown tree source '" + kind + "'");
  }
}

void to_json(json& j, const Violation& v) {
  j = json{{"node_id", v.node_id}, {"rule", v.rule}, {"message", v.message}};
}

}  // namespace careproto
