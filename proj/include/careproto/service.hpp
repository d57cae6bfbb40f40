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

// HTTP service over the core engine.
//
// Service::handle is transport independent; serve() binds it to an HTTP
// listener. State lives under ServiceConfig::data_dir:
//
//   tests.json                 test catalog (array of test definitions)
//   seed_trees/*.json          tree documents loaded into an empty repository
//   repository/                versioned trees and the activation index
//   models/<id>.json           classifier checkpoint
//   models/<id>.schema.json    encoding schema used to train it
//   models/<id>.meta.json      training metadata
//   models/current             id of the serving model
//   datasets/<ref>.*.ndjson    training data referenced by /admin/train
//   sessions.jsonl             session snapshot per mutation, last one wins
//   reports.jsonl              report snapshot per mutation
//   clusters.jsonl             cluster snapshot per mutation
//   integrity.jsonl            issues raised while walking trees
//
// The .jsonl files are append-only between restarts and compacted to one
// line per entity on load.

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "careproto/correction.hpp"
#include "careproto/mlp.hpp"
#include "careproto/repository.hpp"
#include "careproto/session.hpp"
#include "careproto/time.hpp"

namespace careproto {

struct ServiceConfig {
  std::filesystem::path data_dir = "data";
  std::string listen_address = "127.0.0.1:8080";
  double theta = kDefaultThreshold;
  double cluster_delta = kDefaultClusterThreshold;
  DistanceWeights weights;
  // Classifier training; hidden_size 0 picks suggest_hidden_size.
  Eigen::Index hidden_size = 0;
  double learning_rate = 0.5;
  int epochs = 500;
  std::uint64_t seed = 1;
  double l2 = 0.0;
  double incremental_factor = 0.1;
  std::string expert_token;
};

// Flat JSON object; absent keys keep their defaults, unknown keys are errors.
ServiceConfig service_config_from_json(const json& j);
json service_config_to_json(const ServiceConfig& c);
ServiceConfig load_service_config(const std::filesystem::path& path);
// CAREPROTO_LISTEN and CAREPROTO_DATA_DIR override the file.
void apply_env_overrides(ServiceConfig& c);
void validate_service_config(const ServiceConfig& c);

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::map<std::string, std::string> headers;  // lowercase names
  std::string body;
};

struct Response {
  int status = 200;
  json body;
};

int http_status(ErrorCode code);

// One line of a .jsonl log.
struct LogEntry {
  size_t seq = 0;
  Timestamp at{};
  std::string kind;
  json entity;
};

void to_json(json& j, const LogEntry& e);
void from_json(const json& j, LogEntry& e);

class JsonlLog {
 public:
  explicit JsonlLog(std::filesystem::path path);
  // Appends and flushes one entry; returns it with its sequence number.
  LogEntry append(std::string kind, json entity, Timestamp at);
  std::vector<LogEntry> read() const;
  // Rewrites the file with the given entries, renumbered from 1.
  void rewrite(std::vector<LogEntry> entries);

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  size_t next_seq_ = 1;
};

class Service {
 public:
  explicit Service(ServiceConfig config, Clock clock = system_clock());
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  Response handle(const Request& request);

  const ServiceConfig& config() const { return config_; }
  const ProtocolRepository& repository() const { return *repo_; }

 private:
  struct LoadedModel {
    std::string model_id;
    MlpModel<double> model;
    EncodingSchema schema;
    json meta;
  };
  struct SessionSlot {
    std::mutex mu;
    DiagnosisSession session;
  };

  Response route(const Request& request);

  Response create_session(const json& body);
  Response get_session(const std::string& id);
  Response post_observation(const std::string& id, const json& body);
  Response get_summary(const std::string& id);
  Response post_report(const Request& request, const json& body);
  Response list_reports(const Request& request);
  Response run_clusters(const json& body);
  Response list_clusters(const Request& request);
  Response decide_cluster(const Request& request, const std::string& id, const json& body);
  Response get_active_tree(const std::string& disease);
  Response get_versions(const std::string& disease);
  Response get_diff(const Request& request, const std::string& disease);
  Response train(const json& body);
  Response get_model();

  void load_tests();
  void load_seed_trees();
  void load_sessions();
  void load_corrections();
  void load_current_model();

  std::shared_ptr<const LoadedModel> current_model() const;
  std::shared_ptr<const LoadedModel> model(const std::string& model_id);
  std::shared_ptr<const LoadedModel> read_model(const std::string& model_id) const;
  std::shared_ptr<SessionSlot> session_slot(const std::string& id);
  json persist_session(const DiagnosisSession& s);
  json persist_integrity(const DiagnosisSession& s, size_t from);
  json cluster_view(const CorrectionCluster& c) const;

  std::filesystem::path models_dir() const { return config_.data_dir / "models"; }

  ServiceConfig config_;
  Clock clock_;
  std::unique_ptr<ProtocolRepository> repo_;
  std::unique_ptr<CorrectionDesk> desk_;
  JsonlLog session_log_, report_log_, cluster_log_, integrity_log_;

  mutable std::mutex state_mu_;  // guards the containers below, not their elements
  std::map<std::string, std::shared_ptr<SessionSlot>> sessions_;
  std::map<std::string, std::shared_ptr<const LoadedModel>> models_;
  std::shared_ptr<const LoadedModel> current_;
  size_t next_session_ = 1;
  size_t next_model_ = 1;

  std::mutex train_mu_;
  std::mutex review_mu_;  // serializes clustering and decisions with their log writes
};

struct GeneratorConfig;

// Generates datasets/<dataset_ref>.* under data_dir. With fixtures, also the
// matching tests.json and seed_trees/<disease>.json.
void write_generated_data(const std::filesystem::path& data_dir, const GeneratorConfig& config,
                          const std::string& dataset_ref, bool with_fixtures);

// Splits "host:port"; throws on a malformed address.
std::pair<std::string, int> parse_listen_address(const std::string& address);

// Blocks serving HTTP until stop() is called from another thread or a
// signal handler calls it.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  // Returns false when the address cannot be bound.
  bool listen(const std::string& host, int port);
  // Binds an ephemeral port on host; returns it or -1.
  int bind_any(const std::string& host);
  bool listen_after_bind();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace careproto
