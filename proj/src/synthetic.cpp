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

#include "careproto/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "careproto/error.hpp"
#include "careproto/repository.hpp"

namespace careproto {

namespace {

// Portable sampling: std::normal_distribution differs between standard
// libraries, so uniforms and normals are derived from the raw engine output.
class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 rng_;
};

std::string patient_id(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "p%06d", i + 1);
  return buf;
}

std::string format_threshold(double v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

}  // namespace

void validate_config(const GeneratorConfig& config) {
  if (config.n_records < 1) fail(ErrorCode::kInvalidArgument, "n_records must be at least 1");
  if (!(config.noise_sigma >= 0.0) || !std::isfinite(config.noise_sigma))
    fail(ErrorCode::kInvalidArgument, "noise_sigma must be non-negative");
  if (!(config.missing_rate >= 0.0 && config.missing_rate < 1.0))
    fail(ErrorCode::kInvalidArgument, "missing_rate must lie in [0, 1)");
  if (config.profiles.empty()) fail(ErrorCode::kInvalidArgument, "no disease profiles");
  std::set<std::string> seen;
  for (const auto& p : config.profiles) {
    if (p.disease_id.empty()) fail(ErrorCode::kInvalidArgument, "profile without disease_id");
    if (!seen.insert(p.disease_id).second)
      fail(ErrorCode::kInvalidArgument, "duplicate profile '" + p.disease_id + "'");
    if (!(p.base_rate >= 0.0 && p.base_rate <= 1.0))
      fail(ErrorCode::kInvalidArgument, "base_rate of '" + p.disease_id + "' outside [0, 1]");
    bool any = false;
    for (const auto& [name, e] : p.feature_effects) {
      if (name.empty()) fail(ErrorCode::kInvalidArgument, "empty feature name");
      if (!(e.presence_probability >= 0.0 && e.presence_probability <= 1.0))
        fail(ErrorCode::kInvalidArgument,
             "presence_probability of '" + p.disease_id + "/" + name + "' outside [0, 1]");
      if (!std::isfinite(e.mean_shift))
        fail(ErrorCode::kInvalidArgument, "non-finite shift for '" + p.disease_id + "/" + name + "'");
      any = any || e.mean_shift != 0.0;
    }
    if (!any) fail(ErrorCode::kInvalidArgument, "profile '" + p.disease_id + "' has no nonzero effect");
  }
  for (const auto& [name, v] : config.baselines)
    if (!std::isfinite(v)) fail(ErrorCode::kInvalidArgument, "non-finite baseline for '" + name + "'");
}

std::vector<std::string> generator_features(const GeneratorConfig& config) {
  std::set<std::string> names;
  for (const auto& [name, _] : config.baselines) names.insert(name);
  for (const auto& p : config.profiles)
    for (const auto& [name, _] : p.feature_effects) names.insert(name);
  return {names.begin(), names.end()};
}

Dataset generate_dataset(const GeneratorConfig& config) {
  validate_config(config);
  const auto features = generator_features(config);
  const Timestamp epoch = parse_rfc3339("2026-01-01T00:00:00Z");

  Dataset data;
  for (const auto& p : config.profiles) data.diseases.push_back(p.disease_id);
  data.records.reserve(static_cast<size_t>(config.n_records));
  data.labels.reserve(static_cast<size_t>(config.n_records));

  Sampler sampler(config.seed);
  for (int i = 0; i < config.n_records; ++i) {
    std::vector<int> labels;
    for (const auto& p : config.profiles) labels.push_back(sampler.bernoulli(p.base_rate) ? 1 : 0);

    std::map<std::string, double> values;
    for (const auto& name : features) {
      auto it = config.baselines.find(name);
      values[name] = it == config.baselines.end() ? 0.0 : it->second;
    }
    for (size_t k = 0; k < config.profiles.size(); ++k) {
      if (!labels[k]) continue;
      for (const auto& [name, e] : config.profiles[k].feature_effects)
        if (sampler.bernoulli(e.presence_probability)) values[name] += e.mean_shift;
    }

    PatientRecord r;
    r.patient_id = patient_id(i);
    r.visited_at = epoch + std::chrono::minutes(i);
    for (const auto& name : features) {
      // Drawn even when sigma is 0 so the stream does not depend on it.
      double noise = sampler.normal();
      if (config.missing_rate > 0.0 && sampler.bernoulli(config.missing_rate)) continue;
      r.observations[name] = NumericValue{values[name] + config.noise_sigma * noise, ""};
    }
    data.records.push_back(std::move(r));
    data.labels.push_back(std::move(labels));
  }
  return data;
}

double best_threshold_accuracy(const Dataset& data, size_t disease) {
  if (data.records.empty()) fail(ErrorCode::kInvalidArgument, "empty dataset");
  if (disease >= data.diseases.size()) fail(ErrorCode::kInvalidArgument, "disease index out of range");
  const size_t n = data.records.size();

  std::set<std::string> names;
  for (const auto& r : data.records)
    for (const auto& [name, v] : r.observations)
      if (std::holds_alternative<NumericValue>(v)) names.insert(name);

  size_t total_pos = 0;
  for (const auto& l : data.labels) total_pos += static_cast<size_t>(l[disease]);
  size_t best = std::max(total_pos, n - total_pos);  // constant rules

  for (const auto& name : names) {
    std::vector<std::pair<double, int>> points;
    size_t missing_neg = 0;  // records without the feature are predicted negative
    for (size_t i = 0; i < n; ++i) {
      auto it = data.records[i].observations.find(name);
      const NumericValue* v = it == data.records[i].observations.end()
                                  ? nullptr
                                  : std::get_if<NumericValue>(&it->second);
      if (v) points.emplace_back(v->value, data.labels[i][disease]);
      else missing_neg += data.labels[i][disease] == 0;
    }
    std::sort(points.begin(), points.end());
    size_t pos_all = 0;
    for (const auto& p : points) pos_all += static_cast<size_t>(p.second);
    const size_t neg_all = points.size() - pos_all;

    // Cut between points[k-1] and points[k]; below-cut points are "low".
    size_t pos_low = 0, neg_low = 0;
    for (size_t k = 0; k <= points.size(); ++k) {
      if (k == 0 || k == points.size() || points[k - 1].first != points[k].first) {
        size_t greater_rule = neg_low + (pos_all - pos_low);
        size_t less_rule = pos_low + (neg_all - neg_low);
        best = std::max(best, std::max(greater_rule, less_rule) + missing_neg);
      }
      if (k < points.size()) {
        if (points[k].second) ++pos_low;
        else ++neg_low;
      }
    }
  }
  return static_cast<double>(best) / static_cast<double>(n);
}

std::vector<TestDefinition> generator_tests(const GeneratorConfig& config) {
  std::vector<TestDefinition> out;
  for (const auto& name : generator_features(config))
    out.push_back({"test_" + name, name, ValueKind::kNumeric, {}, 1.0});
  return out;
}

std::vector<ProtocolTree> generator_protocols(const GeneratorConfig& config, int max_depth) {
  validate_config(config);
  if (max_depth < 1) fail(ErrorCode::kInvalidArgument, "max_depth must be at least 1");
  std::vector<ProtocolTree> out;
  for (const auto& p : config.profiles) {
    std::vector<std::pair<std::string, double>> effects;
    for (const auto& [name, e] : p.feature_effects)
      if (e.mean_shift != 0.0) effects.emplace_back(name, e.mean_shift);
    std::stable_sort(effects.begin(), effects.end(), [](const auto& a, const auto& b) {
      return std::abs(a.second) > std::abs(b.second);
    });
    if (effects.size() > static_cast<size_t>(max_depth)) effects.resize(static_cast<size_t>(max_depth));

    ProtocolTree t;
    t.disease_id = p.disease_id;
    t.root = "n0";
    for (size_t i = 0; i < effects.size(); ++i) {
      const auto& [name, shift] = effects[i];
      auto base = config.baselines.find(name);
      double cut = (base == config.baselines.end() ? 0.0 : base->second) + shift / 2.0;
      DecisionNode d;
      d.observation = name;
      d.required_test = "test_" + name;
      if (shift > 0) {
        d.question = "Is " + name + " above " + format_threshold(cut) + "?";
        d.predicate = GreaterThan{cut};
      } else {
        d.question = "Is " + name + " below " + format_threshold(cut) + "?";
        d.predicate = LessThan{cut};
      }
      d.yes = i + 1 < effects.size() ? "n" + std::to_string(i + 1) : "positive";
      // Trees forbid shared children, so each split gets its own negative leaf.
      d.no = "negative" + std::to_string(i);
      t.nodes["n" + std::to_string(i)] = d;
      t.nodes[d.no] = LeafNode{p.disease_id + " unlikely", {}, {}};
    }
    t.nodes["positive"] = LeafNode{p.disease_id + " likely", {"confirm with a specialist"}, {}};
    out.push_back(std::move(t));
  }
  return out;
}

GeneratorConfig demo_generator_config(int n_records, double noise_sigma, std::uint64_t seed) {
  GeneratorConfig c;
  c.n_records = n_records;
  c.noise_sigma = noise_sigma;
  c.seed = seed;
  c.baselines = {{"glucose", 90},    {"hba1c", 5},      {"temp", 37},       {"wbc", 7},
                 {"bp_systolic", 115}, {"protein_ratio", 10}, {"hemoglobin", 14}, {"ferritin", 60},
                 {"tsh", 2},         {"t4", 12},        {"heart_rate", 72}, {"resp_rate", 14}};
  c.profiles = {
      {"diabetes", {{"glucose", {6, 1}}, {"hba1c", {5, 1}}}, 0.3},
      {"infection", {{"temp", {5, 1}}, {"wbc", {6, 1}}}, 0.25},
      {"preeclampsia", {{"bp_systolic", {6, 1}}, {"protein_ratio", {5, 1}}}, 0.2},
      {"anemia", {{"hemoglobin", {-6, 1}}, {"ferritin", {-5, 1}}}, 0.3},
      {"hypothyroidism", {{"tsh", {6, 1}}, {"t4", {-5, 1}}}, 0.15},
  };
  return c;
}

std::filesystem::path records_path(const std::filesystem::path& stem) {
  return stem.string() + ".records.ndjson";
}

std::filesystem::path labels_path(const std::filesystem::path& stem) {
  return stem.string() + ".labels.ndjson";
}

void write_dataset(const Dataset& data, const std::filesystem::path& stem) {
  if (data.records.size() != data.labels.size())
    fail(ErrorCode::kInvalidArgument, "records and labels differ in length");
  std::string records, labels;
  for (size_t i = 0; i < data.records.size(); ++i) {
    records += json(data.records[i]).dump() + "\n";
    json l = json::object();
    for (size_t k = 0; k < data.diseases.size(); ++k) l[data.diseases[k]] = data.labels[i].at(k);
    labels += json{{"patient_id", data.records[i].patient_id}, {"labels", l}}.dump() + "\n";
  }
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  write_file_atomic(records_path(stem), records);
  write_file_atomic(labels_path(stem), labels);
}

Dataset read_dataset(const std::filesystem::path& stem) {
  auto lines = [](const std::filesystem::path& path) {
    std::vector<json> out;
    std::istringstream in(read_file(path));
    std::string line;
    size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        out.push_back(json::parse(line));
      } catch (const json::parse_error& e) {
        fail(ErrorCode::kParse, path.string() + ":" + std::to_string(n) + ": " + e.what());
      }
    }
    return out;
  };
  auto record_lines = lines(records_path(stem));
  auto label_lines = lines(labels_path(stem));
  if (record_lines.size() != label_lines.size())
    fail(ErrorCode::kInvalidArgument, "records and labels differ in length");

  Dataset data;
  std::set<std::string> diseases;
  for (const auto& l : label_lines)
    for (const auto& [d, _] : l.at("labels").items()) diseases.insert(d);
  data.diseases.assign(diseases.begin(), diseases.end());

  for (size_t i = 0; i < record_lines.size(); ++i) {
    auto r = record_lines[i].get<PatientRecord>();
    const json& l = label_lines[i];
    if (l.at("patient_id").get<std::string>() != r.patient_id)
      fail(ErrorCode::kInvalidArgument, "label line " + std::to_string(i + 1) + " is for '" +
                                            l.at("patient_id").get<std::string>() + "', expected '" +
                                            r.patient_id + "'");
    std::vector<int> row;
    for (const auto& d : data.diseases) {
      int v = l.at("labels").value(d, 0);
      if (v != 0 && v != 1) fail(ErrorCode::kInvalidArgument, "labels must be 0 or 1");
      row.push_back(v);
    }
    data.records.push_back(std::move(r));
    data.labels.push_back(std::move(row));
  }
  return data;
}

void to_json(json& j, const GeneratorConfig& c) {
  json profiles = json::array();
  for (const auto& p : c.profiles) {
    json effects = json::object();
    for (const auto& [name, e] : p.feature_effects)
      effects[name] = {{"mean_shift", e.mean_shift}, {"presence_probability", e.presence_probability}};
    profiles.push_back({{"disease_id", p.disease_id}, {"base_rate", p.base_rate}, {"feature_effects", effects}});
  }
  j = json{{"profiles", profiles},
           {"n_records", c.n_records},
           {"noise_sigma", c.noise_sigma},
           {"seed", c.seed},
           {"baselines", c.baselines},
           {"missing_rate", c.missing_rate}};
}

void from_json(const json& j, GeneratorConfig& c) {
  c = {};
  for (const auto& p : j.at("profiles")) {
    DiseaseProfile profile;
    profile.disease_id = p.at("disease_id").get<std::string>();
    profile.base_rate = p.at("base_rate").get<double>();
    for (const auto& [name, e] : p.at("feature_effects").items())
      profile.feature_effects[name] = {e.at("mean_shift").get<double>(),
                                       e.value("presence_probability", 1.0)};
    c.profiles.push_back(std::move(profile));
  }
  c.n_records = j.at("n_records").get<int>();
  c.noise_sigma = j.value("noise_sigma", 0.0);
  c.seed = j.value("seed", std::uint64_t{0});
  c.missing_rate = j.value("missing_rate", 0.0);
  if (j.contains("baselines")) c.baselines = j.at("baselines").get<std::map<std::string, double>>();
}

}  // namespace careproto
