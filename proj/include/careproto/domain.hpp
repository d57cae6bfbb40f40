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

// Patient records, observations, tests, and the fixed-width numeric encoding
// that feeds the classifier.

#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "careproto/time.hpp"
#include "json.hpp"

namespace careproto {

using json = nlohmann::json;

enum class ValueKind { kNumeric, kCategorical };

std::string to_string(ValueKind kind);
ValueKind value_kind_from_string(const std::string& text);

struct NumericValue {
  double value = 0.0;
  std::string unit;  // opaque; compared for equality only
  bool operator==(const NumericValue&) const = default;
};

struct CategoricalValue {
  std::string value;
  bool operator==(const CategoricalValue&) const = default;
};

struct Absent {
  bool operator==(const Absent&) const = default;
};

using ObservationValue = std::variant<Absent, NumericValue, CategoricalValue>;

inline bool is_present(const ObservationValue& v) {
  return !std::holds_alternative<Absent>(v);
}
std::optional<ValueKind> kind_of(const ObservationValue& v);

struct TestDefinition {
  std::string test_id;
  std::string produces;  // observation name
  ValueKind value_kind = ValueKind::kNumeric;
  std::vector<std::string> categories;  // categorical tests only
  double cost = 0.0;

  bool operator==(const TestDefinition&) const = default;
};

// Throws Error(kInvalidArgument) when the definition breaks its invariants.
void validate_test(const TestDefinition& test);

// Tests keyed by id. When several tests produce the same observation the
// lowest test_id is reported as its producer.
class TestRegistry {
 public:
  TestRegistry() = default;
  explicit TestRegistry(std::span<const TestDefinition> tests);

  void add(TestDefinition test);
  const TestDefinition* find(const std::string& test_id) const;
  const TestDefinition* producer_of(const std::string& observation) const;
  std::vector<TestDefinition> all() const;
  bool empty() const { return by_id_.empty(); }
  size_t size() const { return by_id_.size(); }

 private:
  std::map<std::string, TestDefinition> by_id_;
  std::map<std::string, std::string> producer_;  // observation -> test_id
};

struct PatientRecord {
  std::string patient_id;
  Timestamp visited_at{};
  std::map<std::string, double> demographics;
  std::set<std::string> history;
  std::map<std::string, ObservationValue> observations;
  std::set<std::string> medications;

  bool operator==(const PatientRecord&) const = default;
};

void validate_record(const PatientRecord& record);

// Categorical values must belong to the producing test's category set.
void check_against_registry(const std::string& observation,
                            const ObservationValue& value,
                            const TestRegistry& tests);

enum class FeatureSource { kDemographic, kHistory, kObservation };
enum class FeatureKind { kNumeric, kOneHot, kFlag };

struct FeatureDescriptor {
  FeatureSource source = FeatureSource::kObservation;
  std::string name;
  FeatureKind kind = FeatureKind::kNumeric;
  double mean = 0.0;
  double stddev = 1.0;
  std::vector<std::string> categories;

  // "demographic:age", "history:smoker", "observation:bp"; features are
  // ordered by this key.
  std::string key() const;
  size_t width() const;

  bool operator==(const FeatureDescriptor&) const = default;
};

struct EncodingSchema {
  std::string schema_id;
  std::vector<FeatureDescriptor> features;

  size_t width() const;
  const FeatureDescriptor* find(FeatureSource source, const std::string& name) const;

  bool operator==(const EncodingSchema&) const = default;
};

struct FeatureVector {
  Eigen::VectorXd values;
  std::string schema_id;
};

// Throws Error(kInvalidArgument, "no training data") on an empty list.
EncodingSchema build_schema(std::span<const PatientRecord> records,
                            std::span<const TestDefinition> tests);

FeatureVector encode_record(const PatientRecord& record, const EncodingSchema& schema);

// Derived from the descriptor list; identical features give identical ids.
std::string compute_schema_id(const std::vector<FeatureDescriptor>& features);

void to_json(json& j, const ObservationValue& v);
void from_json(const json& j, ObservationValue& v);
void to_json(json& j, const TestDefinition& t);
void from_json(const json& j, TestDefinition& t);
void to_json(json& j, const PatientRecord& r);
void from_json(const json& j, PatientRecord& r);
void to_json(json& j, const FeatureDescriptor& f);
void from_json(const json& j, FeatureDescriptor& f);
void to_json(json& j, const EncodingSchema& s);
void from_json(const json& j, EncodingSchema& s);

}  // namespace careproto
