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

#include "careproto/correction.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>

#include "careproto/error.hpp"

namespace careproto {

std::string to_string(ReportStatus s) {
  switch (s) {
    case ReportStatus::kPending: return "pending";
    case ReportStatus::kClustered: return "clustered";
    case ReportStatus::kApproved: return "approved";
    case ReportStatus::kRejected: return "rejected";
  }
  return "pending";
}

ReportStatus report_status_from_string(const std::string& text) {
  for (auto s : {ReportStatus::kPending, ReportStatus::kClustered, ReportStatus::kApproved,
                 ReportStatus::kRejected})
    if (to_string(s) == text) return s;
  fail(ErrorCode::kInvalidArgument, "unknown report status '" + text + "'");
}

std::string to_string(ClusterStatus s) {
  switch (s) {
    case ClusterStatus::kOpen: return "open";
    case ClusterStatus::kApproved: return "approved";
    case ClusterStatus::kRejected: return "rejected";
  }
  return "open";
}

namespace {
ClusterStatus cluster_status_from_string(const std::string& text) {
  for (auto s : {ClusterStatus::kOpen, ClusterStatus::kApproved, ClusterStatus::kRejected})
    if (to_string(s) == text) return s;
  fail(ErrorCode::kParse, "unknown cluster status '" + text + "'");
}
}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (current.size() >= 2) out.push_back(current);
    current.clear();
  };
  for (unsigned char c : text) {
    if (c < 0x80 && std::isalnum(c)) current += static_cast<char>(std::tolower(c));
    else flush();
  }
  flush();
  return out;
}

std::map<std::string, int> token_bag(std::string_view text) {
  std::map<std::string, int> bag;
  for (auto& t : tokenize(text)) ++bag[t];
  return bag;
}

double cosine_similarity(const std::map<std::string, int>& a, const std::map<std::string, int>& b) {
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  double dot = 0, na = 0, nb = 0;
  for (const auto& [t, n] : a) {
    na += double(n) * n;
    if (auto it = b.find(t); it != b.end()) dot += double(n) * it->second;
  }
  for (const auto& [_, n] : b) nb += double(n) * n;
  return std::clamp(dot / std::sqrt(na * nb), 0.0, 1.0);
}

double jaccard_similarity(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  size_t common = 0;
  for (const auto& x : a) common += b.count(x);
  return static_cast<double>(common) / static_cast<double>(a.size() + b.size() - common);
}

ReportFeatures featurize(const ErrorReport& report, const ProtocolTree& base) {
  ReportFeatures f;
  f.token_bag = token_bag(report.description);
  auto diff = diff_trees(base, report.corrected_tree);
  for (const auto& p : diff.added) f.diff_paths.insert("+" + p);
  for (const auto& p : diff.removed) f.diff_paths.insert("-" + p);
  for (const auto& p : diff.changed) f.diff_paths.insert("~" + p);
  f.specialization = report.reporter.specialization;
  return f;
}

double report_distance(const ReportFeatures& a, const ReportFeatures& b, const DistanceWeights& w) {
  double d = w.text * (1.0 - cosine_similarity(a.token_bag, b.token_bag)) +
             w.paths * (1.0 - jaccard_similarity(a.diff_paths, b.diff_paths)) +
             w.specialization * (a.specialization != b.specialization ? 1.0 : 0.0);
  return std::clamp(d, 0.0, 1.0);
}

Linkage single_linkage(const std::vector<std::vector<double>>& distances, double delta) {
  const size_t n = distances.size();
  Linkage out;
  // Cluster c is alive while members[c] is non-empty; its earliest member is
  // members[c].front() == c because merges keep the lower index.
  std::vector<std::vector<size_t>> members(n);
  for (size_t i = 0; i < n; ++i) members[i] = {i};
  std::vector<std::vector<double>> link = distances;

  for (;;) {
    size_t best_i = n, best_j = n;
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < n; ++i) {
      if (members[i].empty()) continue;
      for (size_t j = i + 1; j < n; ++j) {
        if (members[j].empty()) continue;
        // Scanning i then j ascending and keeping only strict improvements
        // realizes the (distance, earliest, next earliest) tie-break.
        if (link[i][j] < best) {
          best = link[i][j];
          best_i = i;
          best_j = j;
        }
      }
    }
    if (best_i == n || !(best < delta)) break;
    out.merges.push_back({best_i, best_j, best});
    members[best_i].insert(members[best_i].end(), members[best_j].begin(), members[best_j].end());
    std::sort(members[best_i].begin(), members[best_i].end());
    members[best_j].clear();
    for (size_t k = 0; k < n; ++k) {
      double merged = std::min(link[best_i][k], link[best_j][k]);
      link[best_i][k] = link[k][best_i] = merged;
    }
  }
  for (auto& m : members)
    if (!m.empty()) out.clusters.push_back(std::move(m));
  return out;
}

std::vector<std::vector<size_t>> cluster_reports(const std::vector<ReportFeatures>& features,
                                                 double delta, const DistanceWeights& weights) {
  if (!(delta > 0.0 && delta < 1.0))
    fail(ErrorCode::kInvalidArgument, "cluster threshold must lie in (0, 1)");
  const size_t n = features.size();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) d[i][j] = d[j][i] = report_distance(features[i], features[j], weights);
  return single_linkage(d, delta).clusters;
}

std::string sequential_id(char prefix, size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%06zu", prefix, n);
  return buf;
}

size_t parse_sequential_id(const std::string& id) {
  if (id.size() < 2) return 0;
  size_t n = 0;
  for (size_t i = 1; i < id.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(id[i]))) return 0;
    n = n * 10 + static_cast<size_t>(id[i] - '0');
  }
  return n;
}

CorrectionDesk::CorrectionDesk(ProtocolRepository& repo, DistanceWeights weights)
    : repo_(repo), weights_(weights) {
  double total = weights_.text + weights_.paths + weights_.specialization;
  if (weights_.text < 0 || weights_.paths < 0 || weights_.specialization < 0 ||
      std::abs(total - 1.0) > 1e-9)
    fail(ErrorCode::kInvalidArgument, "distance weights must be non-negative and sum to 1");
}

std::vector<std::string> CorrectionDesk::check(const ErrorReport& draft) const {
  std::lock_guard lock(mu_);
  return check_locked(draft);
}

std::vector<std::string> CorrectionDesk::check_locked(const ErrorReport& draft) const {
  std::vector<std::string> out;
  bool blank = std::all_of(draft.description.begin(), draft.description.end(),
                           [](unsigned char c) { return std::isspace(c); });
  if (blank) out.push_back("description is empty");
  if (draft.disease_id.empty()) out.push_back("disease_id is empty");
  if (draft.corrected_tree.disease_id != draft.disease_id)
    out.push_back("corrected tree is for '" + draft.corrected_tree.disease_id + "', not '" +
                  draft.disease_id + "'");
  if (!repo_.has_version(draft.disease_id, draft.base_version))
    out.push_back("unknown base version " + std::to_string(draft.base_version) + " of '" +
                  draft.disease_id + "'");
  for (const auto& v : validate_tree(draft.corrected_tree, repo_.tests())) out.push_back(v.to_string());
  return out;
}

ErrorReport CorrectionDesk::submit(ErrorReport draft, Timestamp now) {
  std::lock_guard lock(mu_);
  auto violations = check_locked(draft);
  if (!violations.empty()) {
    std::string message = violations.front();
    for (size_t i = 1; i < violations.size(); ++i) message += "; " + violations[i];
    throw Error(ErrorCode::kInvalidArgument, message, violations);
  }
  draft.report_id = sequential_id('r', next_report_++);
  draft.submitted_at = now;
  draft.status = ReportStatus::kPending;
  draft.cluster_id.clear();
  draft.rejection_reason.clear();
  draft.corrected_tree.version = 0;
  draft.corrected_tree.source = {};
  reports_[draft.report_id] = draft;
  return draft;
}

std::vector<CorrectionCluster> CorrectionDesk::run_clustering(const std::string& disease_id,
                                                              double delta) {
  std::lock_guard lock(mu_);
  std::vector<ErrorReport*> pending;
  for (auto& [_, r] : reports_)
    if (r.disease_id == disease_id && r.status == ReportStatus::kPending) pending.push_back(&r);
  std::sort(pending.begin(), pending.end(), [](const ErrorReport* a, const ErrorReport* b) {
    if (a->submitted_at != b->submitted_at) return a->submitted_at < b->submitted_at;
    return a->report_id < b->report_id;
  });

  std::vector<ReportFeatures> features;
  for (const ErrorReport* r : pending)
    features.push_back(featurize(*r, repo_.get_version(r->disease_id, r->base_version)));
  auto groups = cluster_reports(features, delta, weights_);

  std::vector<CorrectionCluster> created;
  for (const auto& group : groups) {
    CorrectionCluster c;
    c.cluster_id = sequential_id('c', next_cluster_++);
    c.disease_id = disease_id;
    for (size_t idx : group) {
      c.members.push_back(pending[idx]->report_id);
      pending[idx]->status = ReportStatus::kClustered;
      pending[idx]->cluster_id = c.cluster_id;
    }
    c.representative = c.members.front();
    clusters_[c.cluster_id] = c;
    created.push_back(std::move(c));
  }
  return created;
}

ReviewOutcome CorrectionDesk::review(const std::string& cluster_id, const ReviewDecision& decision,
                                     const std::string& reviewer, Timestamp now) {
  std::lock_guard lock(mu_);
  auto it = clusters_.find(cluster_id);
  if (it == clusters_.end()) fail(ErrorCode::kNotFound, "unknown cluster '" + cluster_id + "'");
  CorrectionCluster& c = it->second;
  if (c.status != ClusterStatus::kOpen)
    fail(ErrorCode::kConflict, "cluster already decided: '" + cluster_id + "'");
  if (reviewer.empty()) fail(ErrorCode::kInvalidArgument, "reviewer is required");

  ReviewOutcome outcome;
  if (decision.kind == ReviewDecision::Kind::kApprove) {
    if (std::find(c.members.begin(), c.members.end(), decision.report_id) == c.members.end())
      fail(ErrorCode::kInvalidArgument,
           "report '" + decision.report_id + "' is not a member of '" + cluster_id + "'");
    ProtocolTree tree = reports_.at(decision.report_id).corrected_tree;
    tree.source = {TreeSource::Kind::kCorrection, decision.report_id};
    int version = repo_.put_version(std::move(tree));
    repo_.activate(c.disease_id, version);
    c.status = ClusterStatus::kApproved;
    c.new_version = version;
    c.approved_report = decision.report_id;
    outcome.new_version = version;
  } else {
    c.status = ClusterStatus::kRejected;
    c.reason = decision.reason;
  }
  c.reviewer = reviewer;
  c.decided_at = now;
  for (const auto& id : c.members) {
    ErrorReport& r = reports_.at(id);
    if (c.status == ClusterStatus::kApproved) {
      r.status = ReportStatus::kApproved;
    } else {
      r.status = ReportStatus::kRejected;
      r.rejection_reason = decision.reason;
    }
    outcome.reports.push_back(r);
  }
  outcome.cluster = c;
  return outcome;
}

std::vector<ErrorReport> CorrectionDesk::reports(std::optional<ReportStatus> status) const {
  std::lock_guard lock(mu_);
  std::vector<ErrorReport> out;
  for (const auto& [_, r] : reports_)
    if (!status || r.status == *status) out.push_back(r);
  return out;
}

std::vector<CorrectionCluster> CorrectionDesk::clusters() const {
  std::lock_guard lock(mu_);
  std::vector<CorrectionCluster> out;
  for (const auto& [_, c] : clusters_) out.push_back(c);
  return out;
}

ErrorReport CorrectionDesk::report(const std::string& report_id) const {
  std::lock_guard lock(mu_);
  auto it = reports_.find(report_id);
  if (it == reports_.end()) fail(ErrorCode::kNotFound, "unknown report '" + report_id + "'");
  return it->second;
}

CorrectionCluster CorrectionDesk::cluster(const std::string& cluster_id) const {
  std::lock_guard lock(mu_);
  auto it = clusters_.find(cluster_id);
  if (it == clusters_.end()) fail(ErrorCode::kNotFound, "unknown cluster '" + cluster_id + "'");
  return it->second;
}

void CorrectionDesk::restore(std::vector<ErrorReport> reports, std::vector<CorrectionCluster> clusters) {
  std::lock_guard lock(mu_);
  reports_.clear();
  clusters_.clear();
  next_report_ = next_cluster_ = 1;
  for (auto& r : reports) {
    next_report_ = std::max(next_report_, parse_sequential_id(r.report_id) + 1);
    reports_[r.report_id] = std::move(r);
  }
  for (auto& c : clusters) {
    next_cluster_ = std::max(next_cluster_, parse_sequential_id(c.cluster_id) + 1);
    clusters_[c.cluster_id] = std::move(c);
  }
}

void to_json(json& j, const ErrorReport& r) {
  j = json{{"report_id", r.report_id},
           {"session_id", r.session_id},
           {"disease_id", r.disease_id},
           {"base_version", r.base_version},
           {"corrected_tree", tree_to_json(r.corrected_tree)},
           {"description", r.description},
           {"reporter", {{"doctor_id", r.reporter.doctor_id}, {"specialization", r.reporter.specialization}}},
           {"node_context", r.node_context},
           {"submitted_at", format_rfc3339(r.submitted_at)},
           {"status", to_string(r.status)}};
  if (!r.cluster_id.empty()) j["cluster_id"] = r.cluster_id;
  if (r.status == ReportStatus::kRejected) j["rejection_reason"] = r.rejection_reason;
}

void from_json(const json& j, ErrorReport& r) {
  if (!j.is_object()) fail(ErrorCode::kInvalidArgument, "report must be an object");
  r.report_id = j.value("report_id", "");
  r.session_id = j.value("session_id", "");
  r.disease_id = j.at("disease_id").get<std::string>();
  r.base_version = j.at("base_version").get<int>();
  r.corrected_tree = tree_from_json(j.at("corrected_tree"));
  r.description = j.value("description", "");
  if (j.contains("reporter")) {
    const json& rep = j.at("reporter");
    r.reporter = {rep.value("doctor_id", ""), rep.value("specialization", "")};
  }
  r.node_context = j.value("node_context", "");
  r.submitted_at = j.contains("submitted_at")
                       ? parse_rfc3339(j.at("submitted_at").get<std::string>())
                       : Timestamp{};
  r.status = report_status_from_string(j.value("status", "pending"));
  r.cluster_id = j.value("cluster_id", "");
  r.rejection_reason = j.value("rejection_reason", "");
}

void to_json(json& j, const CorrectionCluster& c) {
  j = json{{"cluster_id", c.cluster_id},
           {"disease_id", c.disease_id},
           {"members", c.members},
           {"representative", c.representative},
           {"status", to_string(c.status)}};
  if (c.status == ClusterStatus::kApproved) {
    j["new_version"] = c.new_version;
    j["approved_report"] = c.approved_report;
  }
  if (c.status == ClusterStatus::kRejected) j["reason"] = c.reason;
  if (c.status != ClusterStatus::kOpen) j["reviewer"] = c.reviewer;
  if (c.decided_at) j["decided_at"] = format_rfc3339(*c.decided_at);
}

void from_json(const json& j, CorrectionCluster& c) {
  c.cluster_id = j.at("cluster_id").get<std::string>();
  c.disease_id = j.at("disease_id").get<std::string>();
  c.members = j.at("members").get<std::vector<std::string>>();
  c.representative = j.at("representative").get<std::string>();
  c.status = cluster_status_from_string(j.at("status").get<std::string>());
  c.new_version = j.value("new_version", 0);
  c.approved_report = j.value("approved_report", "");
  c.reason = j.value("reason", "");
  c.reviewer = j.value("reviewer", "");
  c.decided_at.reset();
  if (j.contains("decided_at")) c.decided_at = parse_rfc3339(j.at("decided_at").get<std::string>());
}

void to_json(json& j, const ReportFeatures& f) {
  j = json{{"token_bag", f.token_bag}, {"diff_paths", f.diff_paths}, {"specialization", f.specialization}};
}

}  // namespace careproto
