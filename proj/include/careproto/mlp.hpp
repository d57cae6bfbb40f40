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

// One-hidden-layer perceptron with a logistic unit per disease.
//
//   hidden = tanh(W1 x + b1)
//   p      = logistic(W2 hidden + b2)
//
// Trained by full-batch gradient descent on the mean per-output binary
// cross-entropy plus l2/2 * (|W1|^2 + |W2|^2). Outputs are independent, so
// several diseases can be probable at once.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "careproto/domain.hpp"
#include "careproto/error.hpp"

namespace careproto {

struct MlpConfig {
  Eigen::Index n_in = 1;
  Eigen::Index n_hidden = 1;
  Eigen::Index n_out = 1;
  double learning_rate = 0.5;
  int epochs = 200;
  std::uint64_t seed = 0;
  double l2 = 0.0;

  bool operator==(const MlpConfig&) const = default;
};

void validate_config(const MlpConfig& config);

// Midpoint of the input and output widths, rounded half up. Always lies
// between the two.
constexpr Eigen::Index suggest_hidden_size(Eigen::Index n_in, Eigen::Index n_out) {
  return (n_in + n_out + 1) / 2;
}

// Learning rate for incremental retraining on a new day's batch.
inline MlpConfig incremental_config(MlpConfig config, double factor = 0.1) {
  config.learning_rate *= factor;
  return config;
}

using DiseaseProbabilities = std::map<std::string, double>;

template <typename Scalar>
struct MlpModel {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  MlpConfig config;
  Matrix w1;  // n_hidden x n_in
  Vector b1;
  Matrix w2;  // n_out x n_hidden
  Vector b2;
  std::string schema_id;
  std::vector<std::string> disease_index;

  Eigen::Index n_in() const { return w1.cols(); }
  Eigen::Index n_hidden() const { return w1.rows(); }
  Eigen::Index n_out() const { return w2.rows(); }

  bool operator==(const MlpModel& o) const {
    return config == o.config && schema_id == o.schema_id && disease_index == o.disease_index &&
           w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() && w2.rows() == o.w2.rows() &&
           w2.cols() == o.w2.cols() && w1 == o.w1 && b1 == o.b1 && w2 == o.w2 && b2 == o.b2;
  }
};

// Same shapes as the model parameters.
template <typename Scalar>
struct MlpGradients {
  typename MlpModel<Scalar>::Matrix w1;
  typename MlpModel<Scalar>::Vector b1;
  typename MlpModel<Scalar>::Matrix w2;
  typename MlpModel<Scalar>::Vector b2;
};

// One example per column.
template <typename Scalar>
struct TrainingBatch {
  typename MlpModel<Scalar>::Matrix inputs;   // n_in x m
  typename MlpModel<Scalar>::Matrix targets;  // n_out x m, entries in {0, 1}

  Eigen::Index size() const { return inputs.cols(); }
};

template <typename Scalar>
struct TrainResult {
  MlpModel<Scalar> model;
  Scalar loss;
};

template <typename Scalar>
Scalar logistic(Scalar z) {
  using std::exp;
  return z >= Scalar(0) ? Scalar(1) / (Scalar(1) + exp(-z)) : exp(z) / (Scalar(1) + exp(z));
}

// Glorot-uniform weights from a seeded mt19937_64; biases start at zero.
template <typename Scalar>
MlpModel<Scalar> init_model(const MlpConfig& config, const std::vector<std::string>& diseases,
                            std::string schema_id = {}) {
  validate_config(config);
  if (static_cast<Eigen::Index>(diseases.size()) != config.n_out)
    fail(ErrorCode::kInvalidArgument, "disease list length must equal n_out");

  std::mt19937_64 rng(config.seed);
  auto fill = [&rng](auto& m, Eigen::Index fan_in, Eigen::Index fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        double unit = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
        m(r, c) = static_cast<Scalar>(limit * (2.0 * unit - 1.0));
      }
  };

  MlpModel<Scalar> model;
  model.config = config;
  model.w1.resize(config.n_hidden, config.n_in);
  model.w2.resize(config.n_out, config.n_hidden);
  fill(model.w1, config.n_in, config.n_hidden);
  fill(model.w2, config.n_hidden, config.n_out);
  model.b1 = MlpModel<Scalar>::Vector::Zero(config.n_hidden);
  model.b2 = MlpModel<Scalar>::Vector::Zero(config.n_out);
  model.schema_id = std::move(schema_id);
  model.disease_index = diseases;
  return model;
}

template <typename Scalar>
struct ForwardPass {
  typename MlpModel<Scalar>::Matrix hidden;  // n_hidden x m
  typename MlpModel<Scalar>::Matrix logits;  // n_out x m
  typename MlpModel<Scalar>::Matrix output;  // logistic(logits)
};

template <typename Scalar, typename Derived>
ForwardPass<Scalar> forward_batch(const MlpModel<Scalar>& model,
                                  const Eigen::MatrixBase<Derived>& inputs) {
  if (inputs.rows() != model.n_in())
    fail(ErrorCode::kInvalidArgument, "input width " + std::to_string(inputs.rows()) +
                                          " does not match model n_in " +
                                          std::to_string(model.n_in()));
  ForwardPass<Scalar> pass;
  pass.hidden = ((model.w1 * inputs).colwise() + model.b1).array().tanh().matrix();
  pass.logits = (model.w2 * pass.hidden).colwise() + model.b2;
  pass.output = pass.logits.unaryExpr([](Scalar z) { return logistic(z); });
  return pass;
}

template <typename Scalar, typename Derived>
typename MlpModel<Scalar>::Vector forward(const MlpModel<Scalar>& model,
                                          const Eigen::MatrixBase<Derived>& x) {
  if (x.cols() != 1) fail(ErrorCode::kInvalidArgument, "forward expects a column vector");
  return forward_batch(model, x).output.col(0);
}

template <typename Scalar>
DiseaseProbabilities forward(const MlpModel<Scalar>& model, const FeatureVector& x) {
  if (!model.schema_id.empty() && !x.schema_id.empty() && x.schema_id != model.schema_id)
    fail(ErrorCode::kInvalidArgument, "feature vector schema does not match model");
  auto y = forward(model, x.values.cast<Scalar>());
  DiseaseProbabilities out;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    out[model.disease_index[static_cast<size_t>(i)]] = static_cast<double>(y[i]);
  return out;
}

template <typename Scalar>
void check_batch(const MlpModel<Scalar>& model, const TrainingBatch<Scalar>& batch) {
  if (batch.size() == 0) fail(ErrorCode::kInvalidArgument, "empty training batch");
  if (batch.inputs.rows() != model.n_in() || batch.targets.rows() != model.n_out() ||
      batch.targets.cols() != batch.inputs.cols())
    fail(ErrorCode::kInvalidArgument, "training batch shape does not match model");
  for (Eigen::Index i = 0; i < batch.targets.size(); ++i) {
    Scalar t = batch.targets.data()[i];
    if (t != Scalar(0) && t != Scalar(1))
      fail(ErrorCode::kInvalidArgument, "training targets must be 0 or 1");
  }
}

// Mean binary cross-entropy over every (example, output) pair plus the L2
// penalty. Evaluated from logits for stability.
template <typename Scalar>
Scalar batch_loss(const MlpModel<Scalar>& model, const TrainingBatch<Scalar>& batch,
                  double l2 = 0.0) {
  using std::abs;
  using std::exp;
  using std::log1p;
  auto pass = forward_batch(model, batch.inputs);
  const auto& z = pass.logits.array();
  const auto& t = batch.targets.array();
  Scalar bce = (z.max(Scalar(0)) - z * t + (-z.abs()).exp().log1p()).sum() /
               static_cast<Scalar>(batch.targets.size());
  Scalar penalty = Scalar(l2 / 2.0) * (model.w1.squaredNorm() + model.w2.squaredNorm());
  return bce + penalty;
}

template <typename Scalar>
MlpGradients<Scalar> backprop(const MlpModel<Scalar>& model, const TrainingBatch<Scalar>& batch,
                              double l2 = 0.0) {
  auto pass = forward_batch(model, batch.inputs);
  const Scalar scale = Scalar(1) / static_cast<Scalar>(batch.targets.size());
  typename MlpModel<Scalar>::Matrix d_logits = (pass.output - batch.targets) * scale;
  typename MlpModel<Scalar>::Matrix d_hidden =
      ((model.w2.transpose() * d_logits).array() * (Scalar(1) - pass.hidden.array().square()))
          .matrix();

  MlpGradients<Scalar> g;
  g.w2 = d_logits * pass.hidden.transpose() + Scalar(l2) * model.w2;
  g.b2 = d_logits.rowwise().sum();
  g.w1 = d_hidden * batch.inputs.transpose() + Scalar(l2) * model.w1;
  g.b1 = d_hidden.rowwise().sum();
  return g;
}

// config.epochs gradient steps; the returned loss is evaluated after the last
// step (or on the unchanged model when epochs == 0).
template <typename Scalar>
TrainResult<Scalar> train_on_batch(MlpModel<Scalar> model, const TrainingBatch<Scalar>& batch,
                                   const MlpConfig& config) {
  using std::isfinite;
  check_batch(model, batch);
  if (!(config.learning_rate > 0.0))
    fail(ErrorCode::kInvalidArgument, "learning_rate must be positive");
  if (config.epochs < 0) fail(ErrorCode::kInvalidArgument, "epochs must be non-negative");

  const Scalar lr = static_cast<Scalar>(config.learning_rate);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto g = backprop(model, batch, config.l2);
    model.w1 -= lr * g.w1;
    model.b1 -= lr * g.b1;
    model.w2 -= lr * g.w2;
    model.b2 -= lr * g.b2;
    if (!model.w1.allFinite() || !model.w2.allFinite() || !model.b1.allFinite() ||
        !model.b2.allFinite())
      fail(ErrorCode::kDiverged, "diverged at epoch " + std::to_string(epoch));
  }
  Scalar loss = batch_loss(model, batch, config.l2);
  if (!isfinite(loss)) fail(ErrorCode::kDiverged, "diverged");
  return {std::move(model), loss};
}

namespace detail {

template <typename Scalar, typename Fn>
void for_each_parameter(MlpModel<Scalar>& model, const MlpGradients<Scalar>& grads, Fn&& fn) {
  auto visit = [&fn](Scalar* params, const Scalar* g, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) fn(params[i], g[i]);
  };
  visit(model.w1.data(), grads.w1.data(), model.w1.size());
  visit(model.b1.data(), grads.b1.data(), model.b1.size());
  visit(model.w2.data(), grads.w2.data(), model.w2.size());
  visit(model.b2.data(), grads.b2.data(), model.b2.size());
}

}  // namespace detail

// Max over parameters of |analytic - numeric| / max(1e-8, |analytic| + |numeric|),
// numeric being the central difference with step eps.
template <typename Scalar>
Scalar compare_gradients(MlpModel<Scalar> model, const TrainingBatch<Scalar>& batch,
                         const MlpGradients<Scalar>& analytic, Scalar eps = Scalar(1e-5),
                         double l2 = 0.0) {
  using std::abs;
  using std::max;
  Scalar worst = 0;
  const MlpModel<Scalar>* self = &model;
  detail::for_each_parameter(model, analytic, [&](Scalar& param, Scalar g) {
    const Scalar saved = param;
    param = saved + eps;
    Scalar plus = batch_loss(*self, batch, l2);
    param = saved - eps;
    Scalar minus = batch_loss(*self, batch, l2);
    param = saved;
    Scalar numeric = (plus - minus) / (Scalar(2) * eps);
    Scalar denom = max(Scalar(1e-8), abs(g) + abs(numeric));
    worst = max(worst, abs(g - numeric) / denom);
  });
  return worst;
}

template <typename Scalar>
Scalar gradient_check(const MlpModel<Scalar>& model, const TrainingBatch<Scalar>& batch,
                      Scalar eps = Scalar(1e-5), double l2 = 0.0) {
  check_batch(model, batch);
  return compare_gradients(model, batch, backprop(model, batch, l2), eps, l2);
}

// Columns of the returned batch follow the order of `inputs`.
TrainingBatch<double> make_batch(const std::vector<FeatureVector>& inputs,
                                 const std::vector<std::vector<int>>& targets);

DiseaseProbabilities predict(const MlpModel<double>& model, const PatientRecord& record,
                             const EncodingSchema& schema);

// Per-label accuracy at the 0.5 cut, averaged over all labels.
double label_accuracy(const MlpModel<double>& model, const TrainingBatch<double>& batch);

// Checkpoint document: {config, disease_index, W1, b1, W2, b2, schema_id}.
json checkpoint_to_json(const MlpModel<double>& model);
MlpModel<double> checkpoint_from_json(const json& doc);

void to_json(json& j, const MlpConfig& c);
void from_json(const json& j, MlpConfig& c);

}  // namespace careproto
