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

// Shared fixtures and random generators for the unit and acceptance suites.

#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "careproto/domain.hpp"
#include "careproto/mlp.hpp"
#include "careproto/protocol.hpp"

namespace careproto::testing {

inline std::vector<TestDefinition> clinic_tests() {
  return {
      {"sugar_test", "blood_sugar", ValueKind::kNumeric, {}, 2.0},
      {"hba1c_test", "hba1c", ValueKind::kNumeric, {}, 8.0},
      {"thermometer", "temp", ValueKind::kNumeric, {}, 0.5},
      {"bp_cuff", "bp_systolic", ValueKind::kNumeric, {}, 1.0},
      {"urine_dipstick", "proteinuria", ValueKind::kCategorical, {"none", "trace", "plus"}, 1.5},
      {"hb_test", "hemoglobin", ValueKind::kNumeric, {}, 3.0},
  };
}

inline TestRegistry clinic_registry() { return TestRegistry(clinic_tests()); }

// One decision and two leaves.
inline const char* kMinimalTree = R"({
  "format_version": 1,
  "disease_id": "diabetes",
  "root": "q",
  "nodes": {
    "q": {"kind": "decision", "question": "Q", "observation": "blood_sugar",
          "predicate": {"op": "greater_than", "threshold": 100},
          "required_test": "sugar_test", "yes": "pos", "no": "neg"},
    "pos": {"kind": "leaf", "diagnosis": "diabetes suspected",
            "recommendations": ["refer"], "medications": ["metformin"]},
    "neg": {"kind": "leaf", "diagnosis": "no diabetes",
            "recommendations": [], "medications": []}
  }
})";

inline const char* kDiabetesTree = R"({
  "format_version": 1,
  "disease_id": "diabetes",
  "root": "sugar",
  "nodes": {
    "sugar": {"kind": "decision", "question": "Is the blood sugar level more than 100?",
              "observation": "blood_sugar", "predicate": {"op": "greater_than", "threshold": 100},
              "required_test": "sugar_test", "yes": "hba1c", "no": "normal"},
    "hba1c": {"kind": "decision", "question": "Is HbA1c above 6.5?",
              "observation": "hba1c", "predicate": {"op": "greater_than", "threshold": 6.5},
              "required_test": "hba1c_test", "yes": "diabetic", "no": "prediabetic"},
    "diabetic": {"kind": "leaf", "diagnosis": "diabetes mellitus",
                 "recommendations": ["dietary counselling", "repeat HbA1c in 3 months"],
                 "medications": ["metformin"]},
    "prediabetic": {"kind": "leaf", "diagnosis": "impaired glucose tolerance",
                    "recommendations": ["lifestyle advice"], "medications": []},
    "normal": {"kind": "leaf", "diagnosis": "no diabetes",
               "recommendations": [], "medications": []}
  }
})";

inline const char* kFeverTree = R"({
  "format_version": 1,
  "disease_id": "infection",
  "root": "fever",
  "nodes": {
    "fever": {"kind": "decision", "question": "Is the temperature above 38?",
              "observation": "temp", "predicate": {"op": "greater_than", "threshold": 38},
              "required_test": "thermometer", "yes": "febrile", "no": "afebrile"},
    "febrile": {"kind": "leaf", "diagnosis": "infection suspected",
                "recommendations": ["blood culture"], "medications": ["paracetamol"]},
    "afebrile": {"kind": "leaf", "diagnosis": "no infection",
                 "recommendations": [], "medications": []}
  }
})";

inline const char* kPreeclampsiaTree = R"({
  "format_version": 1,
  "disease_id": "preeclampsia",
  "root": "bp",
  "nodes": {
    "bp": {"kind": "decision", "question": "Is systolic pressure above 140?",
           "observation": "bp_systolic", "predicate": {"op": "greater_than", "threshold": 140},
           "required_test": "bp_cuff", "yes": "protein", "no": "ok"},
    "protein": {"kind": "decision", "question": "Is protein present in urine?",
                "observation": "proteinuria", "predicate": {"op": "in_set", "categories": ["trace", "plus"]},
                "required_test": "urine_dipstick", "yes": "pe", "no": "gh"},
    "pe": {"kind": "leaf", "diagnosis": "preeclampsia", "recommendations": ["admit"],
           "medications": ["labetalol"]},
    "gh": {"kind": "leaf", "diagnosis": "gestational hypertension",
           "recommendations": ["monitor bp twice weekly"], "medications": []},
    "ok": {"kind": "leaf", "diagnosis": "normotensive", "recommendations": [], "medications": []}
  }
})";

// Observation pool for random trees: numeric o0..o{n-1} via t_o{i},
// categorical c0..c{k-1} via t_c{i} with categories {a, b, c}.
struct RandomPool {
  int numeric = 5;
  int categorical = 3;

  std::vector<TestDefinition> tests() const {
    std::vector<TestDefinition> out;
    for (int i = 0; i < numeric; ++i)
      out.push_back({"t_o" + std::to_string(i), "o" + std::to_string(i), ValueKind::kNumeric, {},
                     1.0 + i});
    for (int i = 0; i < categorical; ++i)
      out.push_back({"t_c" + std::to_string(i), "c" + std::to_string(i), ValueKind::kCategorical,
                     {"a", "b", "c"}, 0.5 + i});
    return out;
  }

  ObservationValue random_value(const std::string& observation, std::mt19937_64& rng) const {
    if (observation[0] == 'o')
      return NumericValue{std::uniform_real_distribution<double>(-3, 3)(rng), ""};
    static const char* cats[] = {"a", "b", "c"};
    return CategoricalValue{cats[rng() % 3]};
  }
};

// Random valid tree with decision depth <= max_depth; every decision node
// uses an observation from the pool.
inline ProtocolTree random_tree(const std::string& disease, int max_depth, const RandomPool& pool,
                                std::mt19937_64& rng) {
  ProtocolTree tree;
  tree.disease_id = disease;
  int counter = 0;
  std::function<std::string(int)> grow = [&](int depth) -> std::string {
    std::string id = "n" + std::to_string(counter++);
    bool decide = depth < max_depth && (depth == 0 || rng() % 100 < 70);
    if (!decide) {
      tree.nodes[id] = LeafNode{disease + " outcome " + id, {"follow up " + id}, {}};
      return id;
    }
    DecisionNode d;
    int total = pool.numeric + pool.categorical;
    int pick = static_cast<int>(rng() % static_cast<unsigned>(total));
    if (pick < pool.numeric) {
      d.observation = "o" + std::to_string(pick);
      double threshold = std::round(std::uniform_real_distribution<double>(-2, 2)(rng) * 4) / 4;
      if (rng() % 2) d.predicate = GreaterThan{threshold};
      else d.predicate = LessThan{threshold};
    } else {
      d.observation = "c" + std::to_string(pick - pool.numeric);
      if (rng() % 2) d.predicate = Equals{"b"};
      else d.predicate = InSet{{"a", "c"}};
    }
    d.required_test = "t_" + d.observation;
    d.question = "Check " + d.observation + " at " + id;
    tree.nodes[id] = d;
    std::string yes = grow(depth + 1);
    std::string no = grow(depth + 1);
    auto& stored = std::get<DecisionNode>(tree.nodes[id]);
    stored.yes = yes;
    stored.no = no;
    return id;
  };
  tree.root = grow(0);
  return tree;
}

// Model whose outputs ignore the input: each disease's probability is fixed
// through its output bias.
inline MlpModel<double> constant_model(const EncodingSchema& schema,
                                       const std::vector<std::pair<std::string, double>>& probs) {
  MlpConfig c;
  c.n_in = static_cast<Eigen::Index>(schema.width());
  c.n_hidden = 2;
  c.n_out = static_cast<Eigen::Index>(probs.size());
  std::vector<std::string> ids;
  for (const auto& [id, _] : probs) ids.push_back(id);
  auto m = init_model<double>(c, ids, schema.schema_id);
  m.w1.setZero();
  m.w2.setZero();
  for (size_t i = 0; i < probs.size(); ++i)
    m.b2[static_cast<Eigen::Index>(i)] = std::log(probs[i].second / (1.0 - probs[i].second));
  return m;
}

}  // namespace careproto::testing
