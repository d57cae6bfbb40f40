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

#include "careproto/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "careproto/error.hpp"
#include "careproto/synthetic.hpp"

namespace careproto {

namespace fs = std::filesystem;

// ---- configuration ---------------------------------------------------------

ServiceConfig service_config_from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::kInvalidArgument, "service config must be a JSON object");
  static const std::set<std::string> known = {
      "data_dir",     "listen_address", "theta",         "cluster_delta",
      "weight_text",  "weight_paths",   "weight_specialization", "hidden_size",
      "learning_rate", "epochs",        "seed",          "l2",
      "incremental_factor", "expert_token"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) fail(ErrorCode::kInvalidArgument, "unknown config key '" + key + "'");

  ServiceConfig c;
  try {
    c.data_dir = j.value("data_dir", c.data_dir.string());
    c.listen_address = j.value("listen_address", c.listen_address);
    c.theta = j.value("theta", c.theta);
    c.cluster_delta = j.value("cluster_delta", c.cluster_delta);
    c.weights.text = j.value("weight_text", c.weights.text);
    c.weights.paths = j.value("weight_paths", c.weights.paths);
    c.weights.specialization = j.value("weight_specialization", c.weights.specialization);
    c.hidden_size = j.value("hidden_size", c.hidden_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.l2 = j.value("l2", c.l2);
    c.incremental_factor = j.value("incremental_factor", c.incremental_factor);
    c.expert_token = j.value("expert_token", c.expert_token);
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("service config: ") + e.what());
  }
  return c;
}

json service_config_to_json(const ServiceConfig& c) {
  return json{{"data_dir", c.data_dir.string()},
              {"listen_address", c.listen_address},
              {"theta", c.theta},
              {"cluster_delta", c.cluster_delta},
              {"weight_text", c.weights.text},
              {"weight_paths", c.weights.paths},
              {"weight_specialization", c.weights.specialization},
              {"hidden_size", c.hidden_size},
              {"learning_rate", c.learning_rate},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"l2", c.l2},
              {"incremental_factor", c.incremental_factor},
              {"expert_token", c.expert_token}};
}

ServiceConfig load_service_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  auto c = service_config_from_json(j);
  // A relative data_dir is relative to the config file.
  if (c.data_dir.is_relative()) c.data_dir = path.parent_path() / c.data_dir;
  return c;
}

void apply_env_overrides(ServiceConfig& c) {
  if (const char* v = std::getenv("CAREPROTO_LISTEN"); v && *v) c.listen_address = v;
  if (const char* v = std::getenv("CAREPROTO_DATA_DIR"); v && *v) c.data_dir = v;
}

void validate_service_config(const ServiceConfig& c) {
  if (!(c.theta > 0.0 && c.theta < 1.0)) fail(ErrorCode::kInvalidArgument, "theta must lie in (0, 1)");
  if (!(c.cluster_delta > 0.0 && c.cluster_delta < 1.0))
    fail(ErrorCode::kInvalidArgument, "cluster_delta must lie in (0, 1)");
  if (c.hidden_size < 0) fail(ErrorCode::kInvalidArgument, "hidden_size must be non-negative");
  if (c.epochs < 1) fail(ErrorCode::kInvalidArgument, "epochs must be positive");
  if (!(c.learning_rate > 0.0)) fail(ErrorCode::kInvalidArgument, "learning_rate must be positive");
  if (!(c.incremental_factor > 0.0)) fail(ErrorCode::kInvalidArgument, "incremental_factor must be positive");
  parse_listen_address(c.listen_address);
  std::error_code ec;
  fs::create_directories(c.data_dir, ec);
  if (!fs::is_directory(c.data_dir))
    fail(ErrorCode::kInvalidArgument, "data_dir " + c.data_dir.string() + " is not a directory");
  fs::path probe = c.data_dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out) fail(ErrorCode::kInvalidArgument, "data_dir " + c.data_dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

std::pair<std::string, int> parse_listen_address(const std::string& address) {
  auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == address.size())
    fail(ErrorCode::kInvalidArgument, "listen address must be host:port, got '" + address + "'");
  int port = 0;
  for (size_t i = colon + 1; i < address.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(address[i])) || port > 65535)
      fail(ErrorCode::kInvalidArgument, "bad port in '" + address + "'");
    port = port * 10 + (address[i] - '0');
  }
  if (port > 65535) fail(ErrorCode::kInvalidArgument, "bad port in '" + address + "'");
  return {address.substr(0, colon), port};
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kParse:
    case ErrorCode::kDiverged: return 400;
    case ErrorCode::kUnauthorized: return 401;
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kConflict: return 409;
  }
  return 500;
}

// ---- logs ------------------------------------------------------------------

void to_json(json& j, const LogEntry& e) {
  j = json{{"seq", e.seq}, {"at", format_rfc3339(e.at)}, {"kind", e.kind}, {"entity", e.entity}};
}

void from_json(const json& j, LogEntry& e) {
  e.seq = j.at("seq").get<size_t>();
  e.at = parse_rfc3339(j.at("at").get<std::string>());
  e.kind = j.at("kind").get<std::string>();
  e.entity = j.at("entity");
}

JsonlLog::JsonlLog(fs::path path) : path_(std::move(path)) {
  auto entries = read();
  if (!entries.empty()) next_seq_ = entries.back().seq + 1;
}

LogEntry JsonlLog::append(std::string kind, json entity, Timestamp at) {
  std::lock_guard lock(mu_);
  LogEntry e{next_seq_, at, std::move(kind), std::move(entity)};
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) fail(ErrorCode::kInvalidArgument, "cannot append to " + path_.string());
  out << json(e).dump() << '\n';
  out.flush();
  if (!out) fail(ErrorCode::kInvalidArgument, "write failed on " + path_.string());
  ++next_seq_;
  return e;
}

std::vector<LogEntry> JsonlLog::read() const {
  std::lock_guard lock(mu_);
  std::vector<LogEntry> out;
  std::ifstream in(path_, std::ios::binary);
  if (!in) return out;
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);)
    if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
  for (size_t i = 0; i < lines.size(); ++i) {
    try {
      out.push_back(json::parse(lines[i]).get<LogEntry>());
    } catch (const json::exception& e) {
      // A process killed mid-append leaves at most one torn final line.
      if (i + 1 == lines.size()) break;
      fail(ErrorCode::kParse, path_.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

void JsonlLog::rewrite(std::vector<LogEntry> entries) {
  std::lock_guard lock(mu_);
  std::string content;
  size_t seq = 1;
  for (auto& e : entries) {
    e.seq = seq++;
    content += json(e).dump() + "\n";
  }
  write_file_atomic(path_, content);
  next_seq_ = seq;
}

// ---- service ---------------------------------------------------------------

namespace {

json parse_body(const std::string& body) {
  if (body.find_first_not_of(" \t\r\n") == std::string::npos) return json::object();
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kInvalidArgument, std::string("request body is not JSON: ") + e.what());
  }
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> out;
  std::string part;
  std::istringstream in(path);
  while (std::getline(in, part, '/'))
    if (!part.empty()) out.push_back(part);
  return out;
}

bool truthy(const std::string& v) { return v == "1" || v == "true" || v == "yes"; }

ObservationValue observation_from_body(const json& body) {
  const json& v = body.at("value");
  if (v.is_number()) return NumericValue{v.get<double>(), body.value("unit", "")};
  if (v.is_string()) return CategoricalValue{v.get<std::string>()};
  return v.get<ObservationValue>();
}

std::string query(const Request& r, const std::string& key, const std::string& fallback = "") {
  auto it = r.query.find(key);
  return it == r.query.end() ? fallback : it->second;
}

int int_query(const Request& r, const std::string& key) {
  auto text = query(r, key);
  if (text.empty()) fail(ErrorCode::kInvalidArgument, "query parameter '" + key + "' is required");
  try {
    size_t used = 0;
    int v = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::kInvalidArgument, "query parameter '" + key + "' must be an integer");
  }
}

void check_dataset_ref(const std::string& ref) {
  bool ok = !ref.empty() && ref.find("..") == std::string::npos &&
            std::all_of(ref.begin(), ref.end(), [](unsigned char c) {
              return std::isalnum(c) || c == '_' || c == '-' || c == '.';
            });
  if (!ok) fail(ErrorCode::kInvalidArgument, "invalid dataset_ref '" + ref + "'");
}

json events_since(const DiagnosisSession& s, size_t from) {
  json out = json::array();
  for (size_t i = from; i < s.event_log.size(); ++i) out.push_back(s.event_log[i]);
  return out;
}

json source_json(const TreeSource& s) {
  json j{{"kind", s.kind == TreeSource::Kind::kSeed ? "seed" : "correction"}};
  if (s.kind == TreeSource::Kind::kCorrection) j["report_id"] = s.report_id;
  return j;
}

// Keeps the last entry per entity id, ordered by id.
std::vector<LogEntry> last_per_id(const std::vector<LogEntry>& entries, const char* id_key) {
  std::map<std::string, LogEntry> latest;
  for (const auto& e : entries) latest[e.entity.at(id_key).get<std::string>()] = e;
  std::vector<LogEntry> out;
  for (auto& [_, e] : latest) out.push_back(std::move(e));
  return out;
}

}  // namespace

Service::Service(ServiceConfig config, Clock clock)
    : config_(std::move(config)),
      clock_(std::move(clock)),
      session_log_((validate_service_config(config_), config_.data_dir / "sessions.jsonl")),
      report_log_(config_.data_dir / "reports.jsonl"),
      cluster_log_(config_.data_dir / "clusters.jsonl"),
      integrity_log_(config_.data_dir / "integrity.jsonl") {
  fs::create_directories(models_dir());
  fs::create_directories(config_.data_dir / "datasets");
  load_tests();
  load_seed_trees();
  desk_ = std::make_unique<CorrectionDesk>(*repo_, config_.weights);
  load_corrections();
  load_current_model();
  load_sessions();
}

Service::~Service() = default;

void Service::load_tests() {
  std::vector<TestDefinition> tests;
  fs::path path = config_.data_dir / "tests.json";
  if (fs::exists(path)) {
    try {
      tests = json::parse(read_file(path)).get<std::vector<TestDefinition>>();
    } catch (const json::exception& e) {
      fail(ErrorCode::kParse, path.string() + ": " + e.what());
    }
  }
  repo_ = std::make_unique<ProtocolRepository>(TestRegistry(std::move(tests)),
                                               config_.data_dir / "repository");
}

void Service::load_seed_trees() {
  fs::path dir = config_.data_dir / "seed_trees";
  if (!fs::is_directory(dir)) return;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  auto known = repo_->diseases();
  for (const auto& file : files) {
    ProtocolTree tree;
    try {
      tree = parse_tree(read_file(file));
    } catch (const Error& e) {
      throw Error(e.code(), file.string() + ": " + e.what(), e.details());
    }
    if (std::find(known.begin(), known.end(), tree.disease_id) != known.end()) continue;
    known.push_back(tree.disease_id);
    repo_->put_version(std::move(tree));
  }
}

void Service::load_sessions() {
  auto latest = last_per_id(session_log_.read(), "session_id");
  for (const auto& e : latest) {
    auto slot = std::make_shared<SessionSlot>();
    slot->session = e.entity.get<DiagnosisSession>();
    next_session_ = std::max(next_session_, parse_sequential_id(slot->session.session_id) + 1);
    sessions_[slot->session.session_id] = std::move(slot);
  }
  session_log_.rewrite(latest);
}

void Service::load_corrections() {
  auto reports = last_per_id(report_log_.read(), "report_id");
  auto clusters = last_per_id(cluster_log_.read(), "cluster_id");
  std::vector<ErrorReport> r;
  std::vector<CorrectionCluster> c;
  for (const auto& e : reports) r.push_back(e.entity.get<ErrorReport>());
  for (const auto& e : clusters) c.push_back(e.entity.get<CorrectionCluster>());
  desk_->restore(std::move(r), std::move(c));
  report_log_.rewrite(reports);
  cluster_log_.rewrite(clusters);
}

void Service::load_current_model() {
  for (const auto& entry : fs::directory_iterator(models_dir())) {
    auto name = entry.path().filename().string();
    const std::string suffix = ".meta.json";
    if (name.size() > suffix.size() && name.ends_with(suffix))
      next_model_ = std::max(next_model_, parse_sequential_id(name.substr(0, name.size() - suffix.size())) + 1);
  }
  fs::path current = models_dir() / "current";
  if (!fs::exists(current)) return;
  std::string id = read_file(current);
  while (!id.empty() && std::isspace(static_cast<unsigned char>(id.back()))) id.pop_back();
  current_ = read_model(id);
  models_[id] = current_;
}

std::shared_ptr<const Service::LoadedModel> Service::read_model(const std::string& model_id) const {
  auto loaded = std::make_shared<LoadedModel>();
  loaded->model_id = model_id;
  try {
    loaded->model = checkpoint_from_json(json::parse(read_file(models_dir() / (model_id + ".json"))));
    loaded->schema = json::parse(read_file(models_dir() / (model_id + ".schema.json"))).get<EncodingSchema>();
    loaded->meta = json::parse(read_file(models_dir() / (model_id + ".meta.json")));
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, "model '" + model_id + "': " + e.what());
  }
  return loaded;
}

std::shared_ptr<const Service::LoadedModel> Service::current_model() const {
  std::lock_guard lock(state_mu_);
  return current_;
}

std::shared_ptr<const Service::LoadedModel> Service::model(const std::string& model_id) {
  std::lock_guard lock(state_mu_);
  auto it = models_.find(model_id);
  if (it != models_.end()) return it->second;
  auto loaded = read_model(model_id);
  models_[model_id] = loaded;
  return loaded;
}

std::shared_ptr<Service::SessionSlot> Service::session_slot(const std::string& id) {
  std::lock_guard lock(state_mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) fail(ErrorCode::kNotFound, "unknown session '" + id + "'");
  return it->second;
}

json Service::persist_session(const DiagnosisSession& s) {
  return session_log_.append("session", json(s), clock_());
}

json Service::persist_integrity(const DiagnosisSession& s, size_t from) {
  json out = json::array();
  for (size_t i = from; i < s.integrity_issues.size(); ++i)
    out.push_back(integrity_log_.append("integrity_issue", json(s.integrity_issues[i]), clock_()));
  return out;
}

Response Service::handle(const Request& request) {
  try {
    return route(request);
  } catch (const Error& e) {
    json body{{"error", e.what()}};
    if (!e.details().empty()) body["details"] = e.details();
    return {http_status(e.code()), body};
  } catch (const json::exception& e) {
    return {400, json{{"error", std::string("malformed request: ") + e.what()}}};
  } catch (const std::exception& e) {
    return {500, json{{"error", e.what()}}};
  }
}

Response Service::route(const Request& r) {
  auto seg = split_path(r.path);
  const std::string& m = r.method;
  auto body = [&] { return parse_body(r.body); };
  auto is = [&](std::initializer_list<const char*> parts) {
    if (seg.size() != parts.size()) return false;
    size_t i = 0;
    for (const char* p : parts) {
      if (*p != '*' && seg[i] != p) return false;
      ++i;
    }
    return true;
  };

  if (m == "POST" && is({"sessions"})) return create_session(body());
  if (m == "GET" && is({"sessions", "*"})) return get_session(seg[1]);
  if (m == "POST" && is({"sessions", "*", "observations"})) return post_observation(seg[1], body());
  if (m == "GET" && is({"sessions", "*", "summary"})) return get_summary(seg[1]);
  if (m == "POST" && is({"reports"})) return post_report(r, body());
  if (m == "GET" && is({"reports"})) return list_reports(r);
  if (m == "POST" && is({"clusters", "run"})) return run_clusters(body());
  if (m == "GET" && is({"clusters"})) return list_clusters(r);
  if (m == "POST" && is({"clusters", "*", "decision"})) return decide_cluster(r, seg[1], body());
  if (m == "GET" && is({"trees", "*", "active"})) return get_active_tree(seg[1]);
  if (m == "GET" && is({"trees", "*", "versions"})) return get_versions(seg[1]);
  if (m == "GET" && is({"trees", "*", "diff"})) return get_diff(r, seg[1]);
  if (m == "POST" && is({"admin", "train"})) return train(body());
  if (m == "GET" && is({"model"})) return get_model();
  fail(ErrorCode::kNotFound, "no route for " + m + " " + r.path);
}

Response Service::create_session(const json& body) {
  auto m = current_model();
  if (!m) fail(ErrorCode::kConflict, "no trained model; call POST /admin/train first");
  auto record = body.at("record").get<PatientRecord>();
  double theta = body.value("theta", config_.theta);

  std::string id;
  {
    std::lock_guard lock(state_mu_);
    id = sequential_id('s', next_session_++);
  }
  SessionContext ctx{m->model, m->schema, *repo_, clock_, m->model_id};
  auto slot = std::make_shared<SessionSlot>();
  std::lock_guard slot_lock(slot->mu);
  slot->session = start_session(id, std::move(record), ctx, theta);
  auto result = step(slot->session, ctx);
  json logged = persist_session(slot->session);
  json integrity = persist_integrity(slot->session, 0);
  {
    std::lock_guard lock(state_mu_);
    sessions_[id] = slot;
  }
  json out = result;
  out["session_id"] = id;
  out["session"] = slot->session;
  out["events"] = events_since(slot->session, 0);
  out["logged"] = logged;
  out["integrity_issues"] = integrity;
  return {201, out};
}

Response Service::get_session(const std::string& id) {
  auto slot = session_slot(id);
  std::lock_guard lock(slot->mu);
  json out = slot->session;
  out["outcomes"] = outcomes(slot->session);
  out["concluded"] = slot->session.concluded();
  out["needs_manual_selection"] = slot->session.needs_manual_selection();
  return {200, out};
}

Response Service::post_observation(const std::string& id, const json& body) {
  auto slot = session_slot(id);
  std::lock_guard lock(slot->mu);
  auto m = model(slot->session.model_ref);
  SessionContext ctx{m->model, m->schema, *repo_, clock_, m->model_id};

  auto name = body.at("name").get<std::string>();
  auto value = observation_from_body(body);
  DiagnosisSession work = slot->session;
  const size_t events_before = work.event_log.size();
  const size_t issues_before = work.integrity_issues.size();
  submit_observation(work, name, std::move(value), ctx);
  auto result = step(work, ctx);
  slot->session = std::move(work);

  json logged = persist_session(slot->session);
  json integrity = persist_integrity(slot->session, issues_before);
  json out = result;
  out["session_id"] = id;
  out["session"] = slot->session;
  out["events"] = events_since(slot->session, events_before);
  out["logged"] = logged;
  out["integrity_issues"] = integrity;
  return {200, out};
}

Response Service::get_summary(const std::string& id) {
  auto slot = session_slot(id);
  std::lock_guard lock(slot->mu);
  return {200, json(session_summary(slot->session))};
}

Response Service::post_report(const Request& request, const json& body) {
  const bool dry_run = truthy(query(request, "dry_run"));
  ErrorReport r;
  r.disease_id = body.at("disease_id").get<std::string>();
  r.session_id = body.value("session_id", "");
  r.description = body.value("description", "");
  r.node_context = body.value("node_context", "");
  if (body.contains("reporter")) {
    const json& rep = body.at("reporter");
    r.reporter = {rep.value("doctor_id", ""), rep.value("specialization", "")};
  }
  if (body.contains("base_version")) {
    r.base_version = body.at("base_version").get<int>();
  } else if (!r.session_id.empty()) {
    auto slot = session_slot(r.session_id);
    std::lock_guard lock(slot->mu);
    const ActiveTree* t = slot->session.find_tree(r.disease_id);
    if (!t) fail(ErrorCode::kInvalidArgument, "session '" + r.session_id + "' has no tree for '" + r.disease_id + "'");
    r.base_version = t->tree.version;
  } else {
    fail(ErrorCode::kInvalidArgument, "base_version is required without a session_id");
  }
  if (!r.session_id.empty()) session_slot(r.session_id);

  std::vector<std::string> parse_problems;
  try {
    const json& doc = body.at("corrected_tree");
    r.corrected_tree = doc.is_string() ? parse_tree(doc.get<std::string>()) : tree_from_json(doc);
  } catch (const Error& e) {
    if (!dry_run) throw Error(ErrorCode::kInvalidArgument, e.what(), {e.what()});
    parse_problems.push_back(e.what());
  }

  if (dry_run) {
    auto violations = parse_problems.empty() ? desk_->check(r) : parse_problems;
    return {200, json{{"valid", violations.empty()}, {"violations", violations}}};
  }
  auto stored = desk_->submit(std::move(r), clock_());
  json logged = report_log_.append("report_submitted", json(stored), clock_());
  return {201, json{{"report", stored}, {"logged", logged}}};
}

Response Service::list_reports(const Request& request) {
  std::optional<ReportStatus> status;
  if (auto s = query(request, "status"); !s.empty()) status = report_status_from_string(s);
  auto disease = query(request, "disease_id");
  json out = json::array();
  for (const auto& r : desk_->reports(status))
    if (disease.empty() || r.disease_id == disease) out.push_back(r);
  return {200, json{{"reports", out}}};
}

json Service::cluster_view(const CorrectionCluster& c) const {
  json view = c;
  view["member_count"] = c.members.size();
  auto rep = desk_->report(c.representative);
  view["representative_report"] = {{"description", rep.description},
                                   {"reporter", {{"doctor_id", rep.reporter.doctor_id},
                                                 {"specialization", rep.reporter.specialization}}},
                                   {"base_version", rep.base_version},
                                   {"submitted_at", format_rfc3339(rep.submitted_at)}};
  view["diff"] = diff_to_json(diff_trees(repo_->get_version(rep.disease_id, rep.base_version), rep.corrected_tree));
  return view;
}

Response Service::run_clusters(const json& body) {
  auto disease = body.at("disease_id").get<std::string>();
  double delta = body.value("delta", config_.cluster_delta);
  std::lock_guard lock(review_mu_);
  auto created = desk_->run_clustering(disease, delta);
  json clusters = json::array(), logged = json::array();
  const Timestamp now = clock_();
  for (const auto& c : created) {
    logged.push_back(cluster_log_.append("cluster_created", json(c), now));
    for (const auto& id : c.members)
      logged.push_back(report_log_.append("report_clustered", json(desk_->report(id)), now));
    clusters.push_back(cluster_view(c));
  }
  return {200, json{{"clusters", clusters}, {"logged", logged}}};
}

Response Service::list_clusters(const Request& request) {
  auto status = query(request, "status");
  auto disease = query(request, "disease_id");
  if (!status.empty() && status != "open" && status != "approved" && status != "rejected")
    fail(ErrorCode::kInvalidArgument, "unknown cluster status '" + status + "'");
  json out = json::array();
  for (const auto& c : desk_->clusters()) {
    if (!status.empty() && to_string(c.status) != status) continue;
    if (!disease.empty() && c.disease_id != disease) continue;
    out.push_back(cluster_view(c));
  }
  return {200, json{{"clusters", out}}};
}

Response Service::decide_cluster(const Request& request, const std::string& id, const json& body) {
  auto auth = request.headers.find("authorization");
  if (config_.expert_token.empty() || auth == request.headers.end() ||
      auth->second != "Bearer " + config_.expert_token)
    fail(ErrorCode::kUnauthorized, "expert authorization required");

  auto kind = body.at("decision").get<std::string>();
  ReviewDecision decision;
  if (kind == "approve") {
    decision.kind = ReviewDecision::Kind::kApprove;
    decision.report_id = body.value("report_id", desk_->cluster(id).representative);
  } else if (kind == "reject") {
    decision.kind = ReviewDecision::Kind::kReject;
    decision.reason = body.value("reason", "");
  } else {
    fail(ErrorCode::kInvalidArgument, "decision must be 'approve' or 'reject'");
  }

  std::lock_guard lock(review_mu_);
  auto outcome = desk_->review(id, decision, body.value("reviewer", "expert"), clock_());
  const Timestamp now = clock_();
  json logged = json::array();
  logged.push_back(cluster_log_.append("cluster_decided", json(outcome.cluster), now));
  for (const auto& r : outcome.reports) logged.push_back(report_log_.append("report_decided", json(r), now));
  json out{{"cluster", cluster_view(outcome.cluster)}, {"reports", outcome.reports}, {"logged", logged}};
  out["new_version"] = outcome.new_version ? json(*outcome.new_version) : json(nullptr);
  return {200, out};
}

Response Service::get_active_tree(const std::string& disease) {
  auto tree = repo_->get_active(disease);
  return {200, json{{"disease_id", disease},
                    {"version", tree.version},
                    {"source", source_json(tree.source)},
                    {"tree", tree_to_json(tree)}}};
}

Response Service::get_versions(const std::string& disease) {
  json versions = json::array();
  for (const auto& v : repo_->versions(disease))
    versions.push_back({{"version", v.version}, {"source", source_json(v.source)}, {"active", v.active}});
  return {200, json{{"disease_id", disease},
                    {"active_version", repo_->active_version(disease)},
                    {"versions", versions}}};
}

Response Service::get_diff(const Request& request, const std::string& disease) {
  int from = int_query(request, "from");
  int to = int_query(request, "to");
  auto diff = diff_trees(repo_->get_version(disease, from), repo_->get_version(disease, to));
  json out = diff_to_json(diff);
  out["disease_id"] = disease;
  out["from"] = from;
  out["to"] = to;
  return {200, out};
}

Response Service::train(const json& body) {
  auto ref = body.at("dataset_ref").get<std::string>();
  check_dataset_ref(ref);
  const bool incremental = body.value("incremental", false);
  std::lock_guard lock(train_mu_);

  auto data = read_dataset(config_.data_dir / "datasets" / ref);
  auto parent = current_model();
  EncodingSchema schema;
  MlpModel<double> start;
  MlpConfig mc;
  if (incremental) {
    if (!parent) fail(ErrorCode::kConflict, "no model to update incrementally");
    if (data.diseases != parent->model.disease_index)
      fail(ErrorCode::kInvalidArgument, "dataset diseases differ from the serving model");
    schema = parent->schema;
    start = parent->model;
    mc = incremental_config(parent->model.config, config_.incremental_factor);
    mc.epochs = config_.epochs;
  } else {
    auto tests = repo_->tests().all();
    schema = build_schema(data.records, tests);
    mc.n_in = static_cast<Eigen::Index>(schema.width());
    mc.n_out = static_cast<Eigen::Index>(data.diseases.size());
    mc.n_hidden = config_.hidden_size > 0 ? config_.hidden_size : suggest_hidden_size(mc.n_in, mc.n_out);
    mc.learning_rate = config_.learning_rate;
    mc.epochs = config_.epochs;
    mc.seed = config_.seed;
    mc.l2 = config_.l2;
    start = init_model<double>(mc, data.diseases, schema.schema_id);
  }

  std::vector<FeatureVector> inputs;
  inputs.reserve(data.records.size());
  for (const auto& r : data.records) inputs.push_back(encode_record(r, schema));
  auto batch = make_batch(inputs, data.labels);
  auto result = train_on_batch(std::move(start), batch, mc);
  double accuracy = label_accuracy(result.model, batch);

  std::string id;
  {
    std::lock_guard state_lock(state_mu_);
    id = sequential_id('m', next_model_++);
  }
  auto loaded = std::make_shared<LoadedModel>();
  loaded->model_id = id;
  loaded->model = std::move(result.model);
  loaded->schema = schema;
  loaded->meta = json{{"model_id", id},
                      {"dataset_ref", ref},
                      {"incremental", incremental},
                      {"parent", parent && incremental ? json(parent->model_id) : json(nullptr)},
                      {"loss", result.loss},
                      {"accuracy", accuracy},
                      {"n_records", data.records.size()},
                      {"learning_rate", mc.learning_rate},
                      {"epochs", mc.epochs},
                      {"trained_at", format_rfc3339(clock_())}};
  write_file_atomic(models_dir() / (id + ".json"), checkpoint_to_json(loaded->model).dump());
  write_file_atomic(models_dir() / (id + ".schema.json"), json(schema).dump());
  write_file_atomic(models_dir() / (id + ".meta.json"), loaded->meta.dump(2));
  write_file_atomic(models_dir() / "current", id + "\n");
  {
    std::lock_guard state_lock(state_mu_);
    models_[id] = loaded;
    current_ = loaded;
  }
  return {201, json{{"model", loaded->meta}}};
}

Response Service::get_model() {
  auto m = current_model();
  if (!m) fail(ErrorCode::kNotFound, "no trained model");
  json out = m->meta;
  out["schema_id"] = m->model.schema_id;
  out["disease_index"] = m->model.disease_index;
  out["config"] = checkpoint_to_json(m->model).at("config");
  out["features"] = json(m->schema).at("features");
  out["input_width"] = m->schema.width();
  return {200, out};
}

void write_generated_data(const fs::path& data_dir, const GeneratorConfig& config,
                          const std::string& dataset_ref, bool with_fixtures) {
  check_dataset_ref(dataset_ref);
  auto data = generate_dataset(config);
  write_dataset(data, data_dir / "datasets" / dataset_ref);
  if (!with_fixtures) return;
  write_file_atomic(data_dir / "tests.json", json(generator_tests(config)).dump(2) + "\n");
  fs::create_directories(data_dir / "seed_trees");
  for (const auto& tree : generator_protocols(config))
    write_file_atomic(data_dir / "seed_trees" / (path_component(tree.disease_id) + ".json"),
                      serialize_tree(tree) + "\n");
}

// ---- HTTP binding ----------------------------------------------------------

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;

  explicit Impl(Service& s) : service(s) {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      Request r;
      r.method = req.method;
      r.path = req.path;
      for (const auto& [k, v] : req.params) r.query.emplace(k, v);
      for (const auto& [k, v] : req.headers) {
        std::string lower = k;
        std::transform(lower.begin(), lower.end(), lower.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        r.headers.emplace(lower, v);
      }
      r.body = req.body;
      auto out = service.handle(r);
      res.status = out.status;
      res.set_content(out.body.dump(), "application/json");
    };
    server.Get(".*", handler);
    server.Post(".*", handler);
    server.Put(".*", handler);
    server.Delete(".*", handler);
    // The console may be served from another origin.
    server.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type, Authorization"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  }
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {}
HttpServer::~HttpServer() = default;

bool HttpServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }
int HttpServer::bind_any(const std::string& host) { return impl_->server.bind_to_any_port(host); }
bool HttpServer::listen_after_bind() { return impl_->server.listen_after_bind(); }
void HttpServer::stop() { impl_->server.stop(); }

}  // namespace careproto
