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

// Labeled synthetic patient data.
//
// Each disease is drawn independently per record with its base rate. Feature
// values start at a healthy baseline; every present disease adds its mean
// shift to the features it affects (each effect fires with its own
// probability), then Gaussian noise is added. Output is a pure function of
// the config.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "careproto/domain.hpp"
#include "careproto/protocol.hpp"

namespace careproto {

struct FeatureEffect {
  double mean_shift = 0.0;
  double presence_probability = 1.0;
  bool operator==(const FeatureEffect&) const = default;
};

struct DiseaseProfile {
  std::string disease_id;
  std::map<std::string, FeatureEffect> feature_effects;
  double base_rate = 0.0;
  bool operator==(const DiseaseProfile&) const = default;
};

struct GeneratorConfig {
  std::vector<DiseaseProfile> profiles;
  int n_records = 1;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  // Healthy value per feature; features without an entry start at 0.
  std::map<std::string, double> baselines;
  // Chance that a feature is left unrecorded in a record; labels are unaffected.
  double missing_rate = 0.0;
  bool operator==(const GeneratorConfig&) const = default;
};

void validate_config(const GeneratorConfig& config);

// Every observation name mentioned by a profile or a baseline, sorted.
std::vector<std::string> generator_features(const GeneratorConfig& config);

struct Dataset {
  std::vector<std::string> diseases;     // profile order; columns of labels
  std::vector<PatientRecord> records;
  std::vector<std::vector<int>> labels;  // labels[i][k] for records[i], diseases[k]
};

Dataset generate_dataset(const GeneratorConfig& config);

// Best accuracy over every single-feature rule "value > t" or "value < t"
// predicting column `disease` of the labels.
double best_threshold_accuracy(const Dataset& data, size_t disease);

// One numeric test per generated feature ("test_<feature>", cost 1).
std::vector<TestDefinition> generator_tests(const GeneratorConfig& config);

// A seed protocol per profile: a chain over the disease's strongest effects
// (at most max_depth), each split halfway between baseline and shifted mean.
std::vector<ProtocolTree> generator_protocols(const GeneratorConfig& config, int max_depth = 3);

// Five diseases over twelve features, two disjoint features each, plus two
// features no disease moves. Intended for demos and the learnability check.
GeneratorConfig demo_generator_config(int n_records = 2000, double noise_sigma = 1.0,
                                      std::uint64_t seed = 2026);

// <stem>.records.ndjson holds one record per line; <stem>.labels.ndjson holds
// {"patient_id", "labels": {disease: 0|1}} in the same order. Reading orders
// the disease columns by id.
void write_dataset(const Dataset& data, const std::filesystem::path& stem);
Dataset read_dataset(const std::filesystem::path& stem);
std::filesystem::path records_path(const std::filesystem::path& stem);
std::filesystem::path labels_path(const std::filesystem::path& stem);

void to_json(json& j, const GeneratorConfig& c);
void from_json(const json& j, GeneratorConfig& c);

}  // namespace careproto
