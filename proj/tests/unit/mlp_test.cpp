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

#include <cmath>
#include <random>
#include <vector>

#include "careproto/error.hpp"
#include "careproto/mlp.hpp"

using namespace careproto;

namespace {

// Straight-line scalar reference, written without Eigen so it checks the
// matrix code independently.
struct ScalarNet {
  std::vector<std::vector<double>> w1, w2;
  std::vector<double> b1, b2;

  static ScalarNet from(const MlpModel<double>& m) {
    ScalarNet n;
    n.w1.assign(m.n_hidden(), std::vector<double>(m.n_in()));
    n.w2.assign(m.n_out(), std::vector<double>(m.n_hidden()));
    for (int h = 0; h < m.n_hidden(); ++h)
      for (int i = 0; i < m.n_in(); ++i) n.w1[h][i] = m.w1(h, i);
    for (int o = 0; o < m.n_out(); ++o)
      for (int h = 0; h < m.n_hidden(); ++h) n.w2[o][h] = m.w2(o, h);
    n.b1.assign(m.b1.data(), m.b1.data() + m.b1.size());
    n.b2.assign(m.b2.data(), m.b2.data() + m.b2.size());
    return n;
  }

  std::pair<std::vector<double>, std::vector<double>> run(const std::vector<double>& x) const {
    std::vector<double> hidden(w1.size());
    for (size_t h = 0; h < w1.size(); ++h) {
      double s = b1[h];
      for (size_t i = 0; i < x.size(); ++i) s += w1[h][i] * x[i];
      hidden[h] = std::tanh(s);
    }
    std::vector<double> out(w2.size());
    for (size_t o = 0; o < w2.size(); ++o) {
      double s = b2[o];
      for (size_t h = 0; h < hidden.size(); ++h) s += w2[o][h] * hidden[h];
      out[o] = 1.0 / (1.0 + std::exp(-s));
    }
    return {hidden, out};
  }

  double loss(const std::vector<std::vector<double>>& xs,
              const std::vector<std::vector<double>>& ts) const {
    double total = 0;
    size_t count = 0;
    for (size_t e = 0; e < xs.size(); ++e) {
      auto [_, y] = run(xs[e]);
      for (size_t o = 0; o < y.size(); ++o, ++count)
        total += -(ts[e][o] * std::log(y[o]) + (1 - ts[e][o]) * std::log(1 - y[o]));
    }
    return total / static_cast<double>(count);
  }

  void step(const std::vector<std::vector<double>>& xs,
            const std::vector<std::vector<double>>& ts, double lr) {
    auto gw1 = w1, gw2 = w2;
    for (auto& row : gw1) std::fill(row.begin(), row.end(), 0.0);
    for (auto& row : gw2) std::fill(row.begin(), row.end(), 0.0);
    std::vector<double> gb1(b1.size(), 0.0), gb2(b2.size(), 0.0);
    const double scale = 1.0 / static_cast<double>(xs.size() * b2.size());
    for (size_t e = 0; e < xs.size(); ++e) {
      auto [hidden, y] = run(xs[e]);
      for (size_t o = 0; o < y.size(); ++o) {
        double d = (y[o] - ts[e][o]) * scale;
        gb2[o] += d;
        for (size_t h = 0; h < hidden.size(); ++h) gw2[o][h] += d * hidden[h];
      }
      for (size_t h = 0; h < hidden.size(); ++h) {
        double back = 0;
        for (size_t o = 0; o < y.size(); ++o) back += w2[o][h] * (y[o] - ts[e][o]) * scale;
        double d = back * (1 - hidden[h] * hidden[h]);
        gb1[h] += d;
        for (size_t i = 0; i < xs[e].size(); ++i) gw1[h][i] += d * xs[e][i];
      }
    }
    for (size_t h = 0; h < w1.size(); ++h) {
      b1[h] -= lr * gb1[h];
      for (size_t i = 0; i < w1[h].size(); ++i) w1[h][i] -= lr * gw1[h][i];
    }
    for (size_t o = 0; o < w2.size(); ++o) {
      b2[o] -= lr * gb2[o];
      for (size_t h = 0; h < w2[o].size(); ++h) w2[o][h] -= lr * gw2[o][h];
    }
  }
};

MlpConfig config_for(int n_in, int n_hidden, int n_out, std::uint64_t seed) {
  MlpConfig c;
  c.n_in = n_in;
  c.n_hidden = n_hidden;
  c.n_out = n_out;
  c.seed = seed;
  return c;
}

std::vector<std::string> disease_names(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("d" + std::to_string(i));
  return out;
}

TrainingBatch<double> random_batch(int n_in, int n_out, int m, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  TrainingBatch<double> batch;
  batch.inputs = Eigen::MatrixXd::NullaryExpr(n_in, m, [&] { return normal(rng); });
  batch.targets = Eigen::MatrixXd::NullaryExpr(n_out, m, [&] { return double(rng() % 2); });
  return batch;
}

}  // namespace

TEST_SUITE("classifier") {

TEST_CASE("hidden size sits at the midpoint, rounding half up") {
  static_assert(suggest_hidden_size(15, 25) == 20);
  static_assert(suggest_hidden_size(25, 5) == 15);
  CHECK(suggest_hidden_size(10, 10) == 10);
  CHECK(suggest_hidden_size(2, 3) == 3);
  for (int a = 1; a <= 40; ++a)
    for (int b = 1; b <= 40; ++b) {
      auto h = suggest_hidden_size(a, b);
      CHECK(h >= std::min(a, b));
      CHECK(h <= std::max(a, b));
    }
}

TEST_CASE("initialization is seeded and bounded") {
  auto c = config_for(10, 5, 2, 42);
  auto a = init_model<double>(c, disease_names(2));
  auto b = init_model<double>(c, disease_names(2));
  CHECK(a == b);
  CHECK(a.b1.isZero());
  CHECK(a.b2.isZero());

  auto c2 = c;
  c2.seed = 43;
  CHECK_FALSE(init_model<double>(c2, disease_names(2)) == a);

  // 1-1-1 net: limit sqrt(6 / 2) = sqrt(3).
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto tiny = init_model<double>(config_for(1, 1, 1, seed), disease_names(1));
    CHECK(std::abs(tiny.w1(0, 0)) <= std::sqrt(3.0));
  }
  CHECK(a.w1.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 15.0));
  CHECK(a.w2.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 7.0));

  CHECK_THROWS_AS(init_model<double>(c, disease_names(3)), Error);
}

TEST_CASE("forward on zero weights yields one half everywhere") {
  auto m = init_model<double>(config_for(4, 3, 5, 1), disease_names(5));
  m.w1.setZero();
  m.w2.setZero();
  auto y = forward(m, Eigen::VectorXd::Random(4));
  CHECK((y.array() == 0.5).all());

  auto unit = init_model<double>(config_for(1, 1, 1, 0), disease_names(1));
  unit.w1(0, 0) = 1;
  unit.w2(0, 0) = 1;
  CHECK(forward(unit, Eigen::VectorXd::Zero(1))[0] == 0.5);
}

TEST_CASE("forward matches the scalar trace") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto m = init_model<double>(config_for(6, 4, 3, trial), disease_names(3));
    m.b1 = Eigen::VectorXd::Random(4);
    m.b2 = Eigen::VectorXd::Random(3);
    Eigen::VectorXd x = Eigen::VectorXd::Random(6);
    auto y = forward(m, x);
    auto [_, expected] = ScalarNet::from(m).run(std::vector<double>(x.data(), x.data() + 6));
    for (int o = 0; o < 3; ++o) CHECK(std::abs(y[o] - expected[o]) <= 1e-12);
    CHECK((y.array() > 0.0).all());
    CHECK((y.array() < 1.0).all());
  }
}

TEST_CASE("forward rejects shape mismatches") {
  auto m = init_model<double>(config_for(3, 2, 1, 0), disease_names(1));
  CHECK_THROWS_AS(forward(m, Eigen::VectorXd::Zero(4)), Error);
  FeatureVector x{Eigen::VectorXd::Zero(3), "other"};
  m.schema_id = "mine";
  CHECK_THROWS_AS(forward(m, x), Error);
}

TEST_CASE("backprop agrees with finite differences") {
  std::mt19937_64 rng(9);
  auto m = init_model<double>(config_for(3, 4, 2, 17), disease_names(2));
  m.b1 = Eigen::VectorXd::Random(4) * 0.1;
  auto batch = random_batch(3, 2, 5, rng);
  CHECK(gradient_check(m, batch) < 1e-4);
  CHECK(gradient_check(m, batch, 1e-5, 0.01) < 1e-4);

  SUBCASE("a sign-flipped gradient is caught") {
    auto g = backprop(m, batch);
    g.w1 = -g.w1;
    g.b1 = -g.b1;
    g.w2 = -g.w2;
    g.b2 = -g.b2;
    CHECK(compare_gradients(m, batch, g) == doctest::Approx(1.0).epsilon(1e-3));
  }
  SUBCASE("zero input, zero weights") {
    auto z = init_model<double>(config_for(3, 4, 2, 0), disease_names(2));
    z.w1.setZero();
    z.w2.setZero();
    TrainingBatch<double> zb{Eigen::MatrixXd::Zero(3, 5), batch.targets};
    auto g = backprop(z, zb);
    CHECK(g.w1.isZero());
    CHECK(gradient_check(z, zb) < 1e-6);
  }
}

TEST_CASE("training a 2-2-1 net matches the scalar reference") {
  auto c = config_for(2, 2, 1, 7);
  c.learning_rate = 0.5;
  c.epochs = 200;
  auto m = init_model<double>(c, disease_names(1));

  TrainingBatch<double> batch;
  batch.inputs.resize(2, 2);
  batch.inputs << 1, 0,
                  0, 1;
  batch.targets.resize(1, 2);
  batch.targets << 1, 0;

  auto ref = ScalarNet::from(m);
  std::vector<std::vector<double>> xs{{1, 0}, {0, 1}}, ts{{1}, {0}};
  for (int e = 0; e < 200; ++e) ref.step(xs, ts, 0.5);

  auto result = train_on_batch(m, batch, c);
  CHECK(std::abs(result.loss - ref.loss(xs, ts)) < 1e-12);
  CHECK(result.loss < 0.1);
}

TEST_CASE("zero epochs leaves the model untouched") {
  std::mt19937_64 rng(1);
  auto c = config_for(3, 3, 2, 3);
  c.epochs = 0;
  auto m = init_model<double>(c, disease_names(2));
  auto batch = random_batch(3, 2, 4, rng);
  auto result = train_on_batch(m, batch, c);
  CHECK(result.model == m);
  CHECK(result.loss == batch_loss(m, batch));
}

TEST_CASE("duplicating every example leaves the trajectory unchanged") {
  std::mt19937_64 rng(2);
  auto c = config_for(4, 3, 2, 5);
  c.epochs = 50;
  auto m = init_model<double>(c, disease_names(2));
  auto batch = random_batch(4, 2, 6, rng);
  TrainingBatch<double> doubled;
  doubled.inputs.resize(4, 12);
  doubled.inputs << batch.inputs, batch.inputs;
  doubled.targets.resize(2, 12);
  doubled.targets << batch.targets, batch.targets;

  auto a = train_on_batch(m, batch, c);
  auto b = train_on_batch(m, doubled, c);
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-12));
  CHECK((a.model.w1 - b.model.w1).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a.model.w2 - b.model.w2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("training is deterministic") {
  std::mt19937_64 rng(4);
  auto c = config_for(5, 4, 3, 8);
  c.epochs = 30;
  auto batch = random_batch(5, 3, 10, rng);
  auto a = train_on_batch(init_model<double>(c, disease_names(3)), batch, c);
  auto b = train_on_batch(init_model<double>(c, disease_names(3)), batch, c);
  CHECK(a.model == b.model);
  CHECK(a.loss == b.loss);
}

TEST_CASE("runaway learning rates report divergence") {
  std::mt19937_64 rng(6);
  auto c = config_for(3, 3, 1, 1);
  c.learning_rate = 1e300;
  c.epochs = 20;
  auto batch = random_batch(3, 1, 4, rng);
  try {
    train_on_batch(init_model<double>(c, disease_names(1)), batch, c);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDiverged);
  }
}

TEST_CASE("batches are checked") {
  auto m = init_model<double>(config_for(2, 2, 1, 0), disease_names(1));
  TrainingBatch<double> empty{Eigen::MatrixXd(2, 0), Eigen::MatrixXd(1, 0)};
  CHECK_THROWS_AS(train_on_batch(m, empty, m.config), Error);
  TrainingBatch<double> bad{Eigen::MatrixXd::Zero(2, 1), Eigen::MatrixXd::Constant(1, 1, 0.5)};
  CHECK_THROWS_AS(train_on_batch(m, bad, m.config), Error);
  CHECK_THROWS_AS(make_batch({FeatureVector{Eigen::VectorXd::Zero(2), ""}}, {{2}}), Error);
}

TEST_CASE("the float instantiation trains too") {
  auto c = config_for(2, 2, 1, 7);
  c.epochs = 100;
  auto m = init_model<float>(c, disease_names(1));
  TrainingBatch<float> batch;
  batch.inputs = Eigen::MatrixXf::Identity(2, 2);
  batch.targets.resize(1, 2);
  batch.targets << 1, 0;
  auto before = batch_loss(m, batch);
  CHECK(train_on_batch(m, batch, c).loss < before);
}

TEST_CASE("predict composes encoding and forward") {
  PatientRecord r;
  r.patient_id = "p";
  r.observations["bp"] = NumericValue{110, "mmHg"};
  std::vector<PatientRecord> records{r};
  auto schema = build_schema(records, {});
  auto c = config_for(static_cast<int>(schema.width()), 2, 2, 0);
  auto m = init_model<double>(c, {"anemia", "preeclampsia"}, schema.schema_id);
  m.w1.setZero();
  m.w2.setZero();
  auto p = predict(m, r, schema);
  CHECK(p.size() == 2);
  CHECK(p.at("anemia") == 0.5);
  CHECK(p.at("preeclampsia") == 0.5);

  auto other = schema;
  other.schema_id = "different";
  CHECK_THROWS_AS(predict(m, r, other), Error);
}

TEST_CASE("checkpoints round-trip exactly") {
  auto c = config_for(4, 3, 2, 99);
  c.l2 = 1e-3;
  auto m = init_model<double>(c, {"a", "b"}, "schema-x");
  m.b1 = Eigen::VectorXd::Random(3);
  json doc = checkpoint_to_json(m);
  for (const char* key : {"config", "disease_index", "W1", "b1", "W2", "b2", "schema_id"})
    CHECK(doc.contains(key));
  CHECK(doc["W1"].size() == 3);
  CHECK(doc["W1"][0].size() == 4);
  auto back = checkpoint_from_json(json::parse(doc.dump()));
  CHECK(back == m);

  doc["W2"][0].erase(0);
  CHECK_THROWS_AS(checkpoint_from_json(doc), Error);
}

}
