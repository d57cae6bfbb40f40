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

#include "careproto/mlp.hpp"

namespace careproto {
namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols,
                                 const char* field) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
    fail(ErrorCode::kParse, std::string("checkpoint field ") + field + " has wrong row count");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      fail(ErrorCode::kParse, std::string("checkpoint field ") + field + " has wrong column count");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<size_t>(c)].get<double>();
  }
  if (!m.allFinite()) fail(ErrorCode::kParse, std::string("checkpoint field ") + field + " is not finite");
  return m;
}

Eigen::VectorXd vector_from_json(const json& j, Eigen::Index n, const char* field) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n)
    fail(ErrorCode::kParse, std::string("checkpoint field ") + field + " has wrong length");
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = j[static_cast<size_t>(i)].get<double>();
  if (!v.allFinite()) fail(ErrorCode::kParse, std::string("checkpoint field ") + field + " is not finite");
  return v;
}

}  // namespace

void validate_config(const MlpConfig& config) {
  if (config.n_in < 1 || config.n_hidden < 1 || config.n_out < 1)
    fail(ErrorCode::kInvalidArgument, "layer widths must be at least 1");
  if (!(config.learning_rate > 0.0))
    fail(ErrorCode::kInvalidArgument, "learning_rate must be positive");
  if (config.epochs < 0) fail(ErrorCode::kInvalidArgument, "epochs must be non-negative");
  if (!(config.l2 >= 0.0)) fail(ErrorCode::kInvalidArgument, "l2 must be non-negative");
}

TrainingBatch<double> make_batch(const std::vector<FeatureVector>& inputs,
                                 const std::vector<std::vector<int>>& targets) {
  if (inputs.size() != targets.size())
    fail(ErrorCode::kInvalidArgument, "inputs and targets differ in length");
  if (inputs.empty()) fail(ErrorCode::kInvalidArgument, "empty training batch");
  const auto n_in = inputs.front().values.size();
  const auto n_out = static_cast<Eigen::Index>(targets.front().size());
  TrainingBatch<double> batch;
  batch.inputs.resize(n_in, static_cast<Eigen::Index>(inputs.size()));
  batch.targets.resize(n_out, static_cast<Eigen::Index>(inputs.size()));
  for (size_t i = 0; i < inputs.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    if (inputs[i].values.size() != n_in || static_cast<Eigen::Index>(targets[i].size()) != n_out)
      fail(ErrorCode::kInvalidArgument, "ragged training batch at example " + std::to_string(i));
    batch.inputs.col(col) = inputs[i].values;
    for (Eigen::Index k = 0; k < n_out; ++k) {
      int t = targets[i][static_cast<size_t>(k)];
      if (t != 0 && t != 1) fail(ErrorCode::kInvalidArgument, "training targets must be 0 or 1");
      batch.targets(k, col) = t;
    }
  }
  return batch;
}

DiseaseProbabilities predict(const MlpModel<double>& model, const PatientRecord& record,
                             const EncodingSchema& schema) {
  if (schema.schema_id != model.schema_id)
    fail(ErrorCode::kInvalidArgument, "schema '" + schema.schema_id +
                                          "' does not match model schema '" + model.schema_id + "'");
  return forward(model, encode_record(record, schema));
}

double label_accuracy(const MlpModel<double>& model, const TrainingBatch<double>& batch) {
  auto pass = forward_batch(model, batch.inputs);
  Eigen::ArrayXXd predicted = (pass.output.array() >= 0.5).cast<double>();
  return (predicted == batch.targets.array()).cast<double>().mean();
}

void to_json(json& j, const MlpConfig& c) {
  j = json{{"n_in", c.n_in},   {"n_hidden", c.n_hidden},
           {"n_out", c.n_out}, {"learning_rate", c.learning_rate},
           {"epochs", c.epochs}, {"seed", c.seed},
           {"l2", c.l2}};
}

void from_json(const json& j, MlpConfig& c) {
  c.n_in = j.at("n_in").get<Eigen::Index>();
  c.n_hidden = j.at("n_hidden").get<Eigen::Index>();
  c.n_out = j.at("n_out").get<Eigen::Index>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.l2 = j.value("l2", 0.0);
}

json checkpoint_to_json(const MlpModel<double>& model) {
  return json{{"config", model.config},
              {"disease_index", model.disease_index},
              {"W1", matrix_to_json(model.w1)},
              {"b1", json(std::vector<double>(model.b1.data(), model.b1.data() + model.b1.size()))},
              {"W2", matrix_to_json(model.w2)},
              {"b2", json(std::vector<double>(model.b2.data(), model.b2.data() + model.b2.size()))},
              {"schema_id", model.schema_id}};
}

MlpModel<double> checkpoint_from_json(const json& doc) {
  MlpModel<double> model;
  try {
    model.config = doc.at("config").get<MlpConfig>();
    validate_config(model.config);
    model.disease_index = doc.at("disease_index").get<std::vector<std::string>>();
    model.schema_id = doc.at("schema_id").get<std::string>();
    const auto& c = model.config;
    model.w1 = matrix_from_json(doc.at("W1"), c.n_hidden, c.n_in, "W1");
    model.b1 = vector_from_json(doc.at("b1"), c.n_hidden, "b1");
    model.w2 = matrix_from_json(doc.at("W2"), c.n_out, c.n_hidden, "W2");
    model.b2 = vector_from_json(doc.at("b2"), c.n_out, "b2");
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, std::string("bad checkpoint: ") + e.what());
  }
  if (static_cast<Eigen::Index>(model.disease_index.size()) != model.config.n_out)
    fail(ErrorCode::kParse, "checkpoint disease_index length differs from n_out");
  return model;
}

}  // namespace careproto
