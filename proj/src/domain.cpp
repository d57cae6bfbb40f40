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

#include "careproto/domain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <tuple>

#include "careproto/error.hpp"

namespace careproto {
namespace {

const char* source_prefix(FeatureSource source) {
  switch (source) {
    case FeatureSource::kDemographic: return "demographic";
    case FeatureSource::kHistory: return "history";
    case FeatureSource::kObservation: return "observation";
  }
  return "observation";
}

FeatureSource source_from_string(const std::string& text) {
  if (text == "demographic") return FeatureSource::kDemographic;
  if (text == "history") return FeatureSource::kHistory;
  if (text == "observation") return FeatureSource::kObservation;
  fail(ErrorCode::kParse, "unknown feature source '" + text + "'");
}

const char* kind_name(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kNumeric: return "numeric";
    case FeatureKind::kOneHot: return "one-hot";
    case FeatureKind::kFlag: return "flag";
  }
  return "numeric";
}

FeatureKind feature_kind_from_string(const std::string& text) {
  if (text == "numeric") return FeatureKind::kNumeric;
  if (text == "one-hot") return FeatureKind::kOneHot;
  if (text == "flag") return FeatureKind::kFlag;
  fail(ErrorCode::kParse, "unknown feature kind '" + text + "'");
}

// Numeric accumulator for population statistics.
struct Moments {
  size_t n = 0;
  double sum = 0.0;
  std::vector<double> values;
  void add(double x) {
    ++n;
    sum += x;
    values.push_back(x);
  }
  std::pair<double, double> mean_stddev() const {
    if (n == 0) return {0.0, 1.0};
    double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (double x : values) ss += (x - mean) * (x - mean);
    double sd = std::sqrt(ss / static_cast<double>(n));
    if (!(sd > 0.0)) sd = 1.0;
    return {mean, sd};
  }
};

}  // namespace

std::string to_string(ValueKind kind) {
  return kind == ValueKind::kNumeric ? "numeric" : "categorical";
}

ValueKind value_kind_from_string(const std::string& text) {
  if (text == "numeric") return ValueKind::kNumeric;
  if (text == "categorical") return ValueKind::kCategorical;
  fail(ErrorCode::kParse, "unknown value kind '" + text + "'");
}

std::optional<ValueKind> kind_of(const ObservationValue& v) {
  if (std::holds_alternative<NumericValue>(v)) return ValueKind::kNumeric;
  if (std::holds_alternative<CategoricalValue>(v)) return ValueKind::kCategorical;
  return std::nullopt;
}

void validate_test(const TestDefinition& test) {
  if (test.test_id.empty()) fail(ErrorCode::kInvalidArgument, "test_id is empty");
  if (test.produces.empty())
    fail(ErrorCode::kInvalidArgument, "test '" + test.test_id + "' produces no observation");
  if (!(test.cost >= 0.0) || !std::isfinite(test.cost))
    fail(ErrorCode::kInvalidArgument, "test '" + test.test_id + "' has negative cost");
  if (test.value_kind == ValueKind::kCategorical && test.categories.empty())
    fail(ErrorCode::kInvalidArgument,
         "categorical test '" + test.test_id + "' declares no categories");
  if (test.value_kind == ValueKind::kNumeric && !test.categories.empty())
    fail(ErrorCode::kInvalidArgument,
         "numeric test '" + test.test_id + "' must not declare categories");
}

TestRegistry::TestRegistry(std::span<const TestDefinition> tests) {
  for (const auto& t : tests) add(t);
}

void TestRegistry::add(TestDefinition test) {
  validate_test(test);
  std::sort(test.categories.begin(), test.categories.end());
  test.categories.erase(std::unique(test.categories.begin(), test.categories.end()),
                        test.categories.end());
  auto [it, inserted] = producer_.try_emplace(test.produces, test.test_id);
  if (!inserted && test.test_id < it->second) it->second = test.test_id;
  by_id_[test.test_id] = std::move(test);
}

const TestDefinition* TestRegistry::find(const std::string& test_id) const {
  auto it = by_id_.find(test_id);
  return it == by_id_.end() ? nullptr : &it->second;
}

const TestDefinition* TestRegistry::producer_of(const std::string& observation) const {
  auto it = producer_.find(observation);
  return it == producer_.end() ? nullptr : find(it->second);
}

std::vector<TestDefinition> TestRegistry::all() const {
  std::vector<TestDefinition> out;
  out.reserve(by_id_.size());
  for (const auto& [_, t] : by_id_) out.push_back(t);
  return out;
}

void validate_record(const PatientRecord& record) {
  if (record.patient_id.empty()) fail(ErrorCode::kInvalidArgument, "patient_id is empty");
  for (const auto& [name, value] : record.demographics)
    if (!std::isfinite(value))
      fail(ErrorCode::kInvalidArgument, "demographic '" + name + "' is not finite");
  for (const auto& [name, value] : record.observations)
    if (const auto* num = std::get_if<NumericValue>(&value); num && !std::isfinite(num->value))
      fail(ErrorCode::kInvalidArgument, "observation '" + name + "' is not finite");
}

void check_against_registry(const std::string& observation, const ObservationValue& value,
                            const TestRegistry& tests) {
  const TestDefinition* producer = tests.producer_of(observation);
  if (!producer) return;
  const auto* cat = std::get_if<CategoricalValue>(&value);
  if (!cat || producer->value_kind != ValueKind::kCategorical) return;
  if (!std::binary_search(producer->categories.begin(), producer->categories.end(), cat->value))
    fail(ErrorCode::kInvalidArgument,
         "unknown category '" + cat->value + "' for observation '" + observation + "'");
}

std::string FeatureDescriptor::key() const {
  return std::string(source_prefix(source)) + ":" + name;
}

size_t FeatureDescriptor::width() const {
  switch (kind) {
    case FeatureKind::kNumeric: return 2;
    case FeatureKind::kOneHot: return categories.size() + 1;
    case FeatureKind::kFlag: return 1;
  }
  return 0;
}

size_t EncodingSchema::width() const {
  size_t total = 0;
  for (const auto& f : features) total += f.width();
  return total;
}

const FeatureDescriptor* EncodingSchema::find(FeatureSource source,
                                              const std::string& name) const {
  for (const auto& f : features)
    if (f.source == source && f.name == name) return &f;
  return nullptr;
}

std::string compute_schema_id(const std::vector<FeatureDescriptor>& features) {
  std::string canonical = json(features).dump();
  std::uint64_t hash = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : canonical) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "schema-%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

EncodingSchema build_schema(std::span<const PatientRecord> records,
                            std::span<const TestDefinition> tests) {
  if (records.empty()) fail(ErrorCode::kInvalidArgument, "no training data");

  std::map<std::string, Moments> demographics;
  std::set<std::string> history;
  std::map<std::string, Moments> numeric_obs;
  std::map<std::string, std::set<std::string>> categorical_obs;

  for (const auto& t : tests) {
    if (t.value_kind == ValueKind::kNumeric) {
      numeric_obs[t.produces];
    } else {
      categorical_obs[t.produces].insert(t.categories.begin(), t.categories.end());
    }
  }
  for (const auto& r : records) {
    for (const auto& [name, value] : r.demographics) demographics[name].add(value);
    history.insert(r.history.begin(), r.history.end());
    for (const auto& [name, value] : r.observations) {
      if (const auto* num = std::get_if<NumericValue>(&value)) {
        if (categorical_obs.count(name))
          fail(ErrorCode::kInvalidArgument, "observation '" + name + "' is categorical");
        numeric_obs[name].add(num->value);
      } else if (const auto* cat = std::get_if<CategoricalValue>(&value)) {
        if (numeric_obs.count(name))
          fail(ErrorCode::kInvalidArgument, "observation '" + name + "' is numeric");
        categorical_obs[name].insert(cat->value);
      }
    }
  }

  EncodingSchema schema;
  for (const auto& [name, moments] : demographics) {
    auto [mean, sd] = moments.mean_stddev();
    schema.features.push_back(
        {FeatureSource::kDemographic, name, FeatureKind::kNumeric, mean, sd, {}});
  }
  for (const auto& name : history)
    schema.features.push_back({FeatureSource::kHistory, name, FeatureKind::kFlag, 0.0, 1.0, {}});
  for (const auto& [name, moments] : numeric_obs) {
    auto [mean, sd] = moments.mean_stddev();
    schema.features.push_back(
        {FeatureSource::kObservation, name, FeatureKind::kNumeric, mean, sd, {}});
  }
  for (const auto& [name, cats] : categorical_obs) {
    schema.features.push_back({FeatureSource::kObservation, name, FeatureKind::kOneHot, 0.0,
                               1.0, std::vector<std::string>(cats.begin(), cats.end())});
  }
  std::sort(schema.features.begin(), schema.features.end(),
            [](const FeatureDescriptor& a, const FeatureDescriptor& b) { return a.key() < b.key(); });
  schema.schema_id = compute_schema_id(schema.features);
  return schema;
}

FeatureVector encode_record(const PatientRecord& record, const EncodingSchema& schema) {
  FeatureVector out;
  out.schema_id = schema.schema_id;
  out.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(schema.width()));
  Eigen::Index slot = 0;

  for (const auto& f : schema.features) {
    switch (f.kind) {
      case FeatureKind::kFlag:
        out.values[slot] = record.history.count(f.name) ? 1.0 : 0.0;
        break;
      case FeatureKind::kNumeric: {
        std::optional<double> x;
        if (f.source == FeatureSource::kDemographic) {
          if (auto it = record.demographics.find(f.name); it != record.demographics.end())
            x = it->second;
        } else if (auto it = record.observations.find(f.name); it != record.observations.end()) {
          if (const auto* num = std::get_if<NumericValue>(&it->second)) {
            x = num->value;
          } else if (std::holds_alternative<CategoricalValue>(it->second)) {
            fail(ErrorCode::kInvalidArgument,
                 "kind mismatch: observation '" + f.name + "' must be numeric");
          }
        }
        if (x) {
          out.values[slot] = (*x - f.mean) / f.stddev;
          out.values[slot + 1] = 0.0;
        } else {
          out.values[slot + 1] = 1.0;
        }
        break;
      }
      case FeatureKind::kOneHot: {
        const CategoricalValue* cat = nullptr;
        if (auto it = record.observations.find(f.name); it != record.observations.end()) {
          cat = std::get_if<CategoricalValue>(&it->second);
          if (std::holds_alternative<NumericValue>(it->second))
            fail(ErrorCode::kInvalidArgument,
                 "kind mismatch: observation '" + f.name + "' must be categorical");
        }
        Eigen::Index missing = slot + static_cast<Eigen::Index>(f.categories.size());
        if (cat) {
          auto pos = std::lower_bound(f.categories.begin(), f.categories.end(), cat->value);
          if (pos == f.categories.end() || *pos != cat->value)
            fail(ErrorCode::kInvalidArgument,
                 "unknown category '" + cat->value + "' for observation '" + f.name + "'");
          out.values[slot + (pos - f.categories.begin())] = 1.0;
        } else {
          out.values[missing] = 1.0;
        }
        break;
      }
    }
    slot += static_cast<Eigen::Index>(f.width());
  }
  return out;
}

void to_json(json& j, const ObservationValue& v) {
  if (const auto* num = std::get_if<NumericValue>(&v)) {
    j = json{{"kind", "numeric"}, {"value", num->value}, {"unit", num->unit}};
  } else if (const auto* cat = std::get_if<CategoricalValue>(&v)) {
    j = json{{"kind", "categorical"}, {"value", cat->value}};
  } else {
    j = json{{"kind", "absent"}};
  }
}

void from_json(const json& j, ObservationValue& v) {
  if (j.is_null()) {
    v = Absent{};
    return;
  }
  if (!j.is_object()) fail(ErrorCode::kParse, "observation value must be an object");
  std::string kind = j.value("kind", std::string{});
  if (kind == "numeric") {
    if (!j.contains("value") || !j.at("value").is_number())
      fail(ErrorCode::kParse, "numeric observation needs a numeric 'value'");
    v = NumericValue{j.at("value").get<double>(), j.value("unit", std::string{})};
  } else if (kind == "categorical") {
    if (!j.contains("value") || !j.at("value").is_string())
      fail(ErrorCode::kParse, "categorical observation needs a string 'value'");
    v = CategoricalValue{j.at("value").get<std::string>()};
  } else if (kind == "absent") {
    v = Absent{};
  } else {
    fail(ErrorCode::kParse, "unknown observation kind '" + kind + "'");
  }
}

void to_json(json& j, const TestDefinition& t) {
  j = json{{"test_id", t.test_id},
           {"produces", t.produces},
           {"value_kind", to_string(t.value_kind)},
           {"cost", t.cost}};
  if (t.value_kind == ValueKind::kCategorical) j["categories"] = t.categories;
}

void from_json(const json& j, TestDefinition& t) {
  t.test_id = j.at("test_id").get<std::string>();
  t.produces = j.at("produces").get<std::string>();
  t.value_kind = value_kind_from_string(j.at("value_kind").get<std::string>());
  t.categories = j.value("categories", std::vector<std::string>{});
  t.cost = j.value("cost", 0.0);
}

void to_json(json& j, const PatientRecord& r) {
  j = json{{"patient_id", r.patient_id},
           {"visited_at", format_rfc3339(r.visited_at)},
           {"demographics", r.demographics},
           {"history", r.history},
           {"observations", r.observations},
           {"medications", r.medications}};
}

void from_json(const json& j, PatientRecord& r) {
  r.patient_id = j.at("patient_id").get<std::string>();
  r.visited_at = j.contains("visited_at") ? parse_rfc3339(j.at("visited_at").get<std::string>())
                                          : Timestamp{};
  r.demographics = j.value("demographics", std::map<std::string, double>{});
  r.history = j.value("history", std::set<std::string>{});
  r.observations.clear();
  if (j.contains("observations")) {
    for (const auto& [name, value] : j.at("observations").items())
      r.observations[name] = value.get<ObservationValue>();
  }
  r.medications = j.value("medications", std::set<std::string>{});
}

void to_json(json& j, const FeatureDescriptor& f) {
  j = json{{"source", source_prefix(f.source)}, {"name", f.name}, {"kind", kind_name(f.kind)}};
  if (f.kind == FeatureKind::kNumeric) {
    j["mean"] = f.mean;
    j["stddev"] = f.stddev;
  }
  if (f.kind == FeatureKind::kOneHot) j["categories"] = f.categories;
}

void from_json(const json& j, FeatureDescriptor& f) {
  f.source = source_from_string(j.at("source").get<std::string>());
  f.name = j.at("name").get<std::string>();
  f.kind = feature_kind_from_string(j.at("kind").get<std::string>());
  f.mean = j.value("mean", 0.0);
  f.stddev = j.value("stddev", 1.0);
  f.categories = j.value("categories", std::vector<std::string>{});
  if (f.kind == FeatureKind::kNumeric && !(f.stddev > 0.0))
    fail(ErrorCode::kParse, "feature '" + f.key() + "' has non-positive stddev");
}

void to_json(json& j, const EncodingSchema& s) {
  j = json{{"schema_id", s.schema_id}, {"features", s.features}};
}

void from_json(const json& j, EncodingSchema& s) {
  s.schema_id = j.at("schema_id").get<std::string>();
  s.features = j.at("features").get<std::vector<FeatureDescriptor>>();
}

}  // namespace careproto
