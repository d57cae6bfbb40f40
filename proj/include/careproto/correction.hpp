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

// Clinician error reports and the expert review workflow.
//
// A report carries a corrected tree, a free-text description and who filed
// it. Pending reports for one disease are grouped by single-linkage
// clustering over a mixed distance (description tokens, changed tree paths,
// reporter specialization) so that repeated reports of the same problem cost
// the reviewer one decision. Approving a cluster stores the chosen correction
// as a new repository version and activates it.

#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "careproto/protocol.hpp"
#include "careproto/repository.hpp"
#include "careproto/time.hpp"

namespace careproto {

enum class ReportStatus { kPending, kClustered, kApproved, kRejected };
enum class ClusterStatus { kOpen, kApproved, kRejected };

std::string to_string(ReportStatus s);
ReportStatus report_status_from_string(const std::string& text);
std::string to_string(ClusterStatus s);

struct Reporter {
  std::string doctor_id;
  std::string specialization;
  bool operator==(const Reporter&) const = default;
};

struct ErrorReport {
  std::string report_id;
  std::string session_id;
  std::string disease_id;
  int base_version = 0;
  ProtocolTree corrected_tree;
  std::string description;
  Reporter reporter;
  std::string node_context;  // shown to reviewers, not featurized
  Timestamp submitted_at{};
  ReportStatus status = ReportStatus::kPending;
  std::string cluster_id;
  std::string rejection_reason;

  bool operator==(const ErrorReport&) const = default;
};

struct ReportFeatures {
  std::map<std::string, int> token_bag;
  std::set<std::string> diff_paths;  // "+", "-" or "~" followed by the canonical path
  std::string specialization;
};

struct DistanceWeights {
  double text = 0.4;
  double paths = 0.5;
  double specialization = 0.1;
};

inline constexpr double kDefaultClusterThreshold = 0.35;

// Lowercase ASCII alphanumeric runs of length >= 2.
std::vector<std::string> tokenize(std::string_view text);
std::map<std::string, int> token_bag(std::string_view text);

// Two empty inputs count as identical (similarity 1).
double cosine_similarity(const std::map<std::string, int>& a, const std::map<std::string, int>& b);
double jaccard_similarity(const std::set<std::string>& a, const std::set<std::string>& b);

ReportFeatures featurize(const ErrorReport& report, const ProtocolTree& base);

double report_distance(const ReportFeatures& a, const ReportFeatures& b,
                       const DistanceWeights& weights = {});

struct Merge {
  size_t first;   // earliest member index of each merged cluster
  size_t second;
  double distance;
};

struct Linkage {
  std::vector<std::vector<size_t>> clusters;  // members ascending, clusters by first member
  std::vector<Merge> merges;
};

// Single-linkage agglomeration over a symmetric distance matrix whose rows are
// ordered earliest report first. Merges the closest pair while its distance
// is below delta; ties go to the pair whose earliest members come first.
Linkage single_linkage(const std::vector<std::vector<double>>& distances, double delta);

std::vector<std::vector<size_t>> cluster_reports(const std::vector<ReportFeatures>& features,
                                                 double delta, const DistanceWeights& weights = {});

struct CorrectionCluster {
  std::string cluster_id;
  std::string disease_id;
  std::vector<std::string> members;  // earliest first
  std::string representative;
  ClusterStatus status = ClusterStatus::kOpen;
  int new_version = 0;          // approved clusters
  std::string approved_report;  // approved clusters
  std::string reason;           // rejected clusters
  std::string reviewer;
  std::optional<Timestamp> decided_at;

  bool operator==(const CorrectionCluster&) const = default;
};

struct ReviewDecision {
  enum class Kind { kApprove, kReject } kind = Kind::kApprove;
  std::string report_id;  // approve
  std::string reason;     // reject
};

struct ReviewOutcome {
  CorrectionCluster cluster;
  std::vector<ErrorReport> reports;
  std::optional<int> new_version;
};

// Report and cluster bookkeeping. Submission may come from many threads;
// clustering and review are serialized. The repository is mutated only when
// a cluster is approved.
class CorrectionDesk {
 public:
  explicit CorrectionDesk(ProtocolRepository& repo, DistanceWeights weights = {});

  // Violations that would reject the report, without storing anything.
  std::vector<std::string> check(const ErrorReport& draft) const;

  // Assigns report_id and pending status. Throws Error(kInvalidArgument)
  // with the violations as details.
  ErrorReport submit(ErrorReport draft, Timestamp now);

  // Clusters every pending report of the disease. Returns the new clusters;
  // their members move to the clustered status.
  std::vector<CorrectionCluster> run_clustering(const std::string& disease_id,
                                                double delta = kDefaultClusterThreshold);

  ReviewOutcome review(const std::string& cluster_id, const ReviewDecision& decision,
                       const std::string& reviewer, Timestamp now);

  std::vector<ErrorReport> reports(std::optional<ReportStatus> status = std::nullopt) const;
  std::vector<CorrectionCluster> clusters() const;
  ErrorReport report(const std::string& report_id) const;
  CorrectionCluster cluster(const std::string& cluster_id) const;

  // Rebuilds state from persisted entities; id counters continue after the
  // largest restored id.
  void restore(std::vector<ErrorReport> reports, std::vector<CorrectionCluster> clusters);

  const DistanceWeights& weights() const { return weights_; }

 private:
  std::vector<std::string> check_locked(const ErrorReport& draft) const;

  ProtocolRepository& repo_;
  DistanceWeights weights_;
  mutable std::mutex mu_;
  std::map<std::string, ErrorReport> reports_;
  std::map<std::string, CorrectionCluster> clusters_;
  size_t next_report_ = 1;
  size_t next_cluster_ = 1;
};

// Zero-padded sequential ids keep lexicographic and creation order aligned.
std::string sequential_id(char prefix, size_t n);
size_t parse_sequential_id(const std::string& id);

void to_json(json& j, const ErrorReport& r);
void from_json(const json& j, ErrorReport& r);
void to_json(json& j, const CorrectionCluster& c);
void from_json(const json& j, CorrectionCluster& c);
void to_json(json& j, const ReportFeatures& f);

}  // namespace careproto
