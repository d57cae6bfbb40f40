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

// Live diagnosis sessions.
//
// A session selects every disease whose classifier probability reaches the
// threshold, binds each to the repository's active tree (by value), and then
// walks the trees one decision at a time. Decisions whose observation is
// already known resolve immediately; the rest block on their required test,
// and blocked tests are recommended greedily: tests unblocking more trees
// first, then cheaper tests, then by id.
//
// Observations are write-once. Every submission re-scores the patient; new
// diseases that reach the threshold join the session, but no tree ever leaves
// because its probability fell.

#pragma once

#include <map>
#include <string>
#include <vector>

#include "careproto/domain.hpp"
#include "careproto/mlp.hpp"
#include "careproto/protocol.hpp"
#include "careproto/repository.hpp"
#include "careproto/time.hpp"

namespace careproto {

inline constexpr double kDefaultThreshold = 0.3;

enum class TreeStatus { kRunning, kConcluded, kDropped };

struct ActiveTree {
  std::string disease_id;
  double probability = 0.0;
  std::string cursor;
  TreeStatus status = TreeStatus::kRunning;
  std::string diagnosis;    // concluded trees
  std::string drop_reason;  // dropped trees
  std::vector<std::string> trajectory;  // node ids visited, root first
  ProtocolTree tree;

  bool operator==(const ActiveTree&) const = default;
};

enum class EventKind {
  kStarted,
  kTreesSelected,
  kTestRecommended,
  kObservationRecorded,
  kNodeResolved,
  kTreeConcluded,
  kTreeAdded,
  kTreeDropped,
  kRescored,
};

std::string to_string(EventKind kind);
EventKind event_kind_from_string(const std::string& text);

struct SessionEvent {
  size_t seq = 0;
  Timestamp at{};
  EventKind kind = EventKind::kStarted;
  json payload;

  bool operator==(const SessionEvent&) const = default;
};

// Filed when a tree meets an observation it cannot evaluate.
struct IntegrityIssue {
  std::string session_id;
  std::string disease_id;
  int version = 0;
  std::string node_id;
  std::string message;

  bool operator==(const IntegrityIssue&) const = default;
};

struct DiagnosisSession {
  std::string session_id;
  std::string model_ref;
  double threshold = kDefaultThreshold;
  PatientRecord record;  // working copy; grows with each observation
  DiseaseProbabilities probabilities;
  std::vector<ActiveTree> active_trees;  // probability desc, disease id asc
  std::map<std::string, ObservationValue> observation_cache;
  std::vector<SessionEvent> event_log;
  std::vector<IntegrityIssue> integrity_issues;

  bool needs_manual_selection() const { return active_trees.empty(); }
  bool concluded() const;
  const ActiveTree* find_tree(const std::string& disease_id) const;

  bool operator==(const DiagnosisSession&) const = default;
};

struct Recommendation {
  struct Target {
    std::string disease_id;
    std::string node_id;
    std::string question;
    bool operator==(const Target&) const = default;
  };

  TestDefinition test;
  std::vector<Target> resolves;
  std::string rationale;

  bool operator==(const Recommendation&) const = default;
};

struct TreeOutcome {
  std::string disease_id;
  int version = 0;
  double probability = 0.0;
  TreeStatus status = TreeStatus::kRunning;
  std::string diagnosis;
  std::vector<std::string> recommendations;
  std::vector<std::string> medications;
  std::string cursor;
  std::string pending_question;  // running trees
  std::string drop_reason;
};

struct StepResult {
  std::vector<Recommendation> recommendations;
  bool concluded = false;  // no running trees remain
  std::vector<TreeOutcome> outcomes;
};

// Everything a session reads besides its own state.
struct SessionContext {
  const MlpModel<double>& model;
  const EncodingSchema& schema;
  const ProtocolRepository& repo;
  Clock clock = system_clock();
  std::string model_ref;
};

// {d : p_d >= threshold}, ordered by probability descending then id.
std::vector<std::pair<std::string, double>> select_trees(const DiseaseProbabilities& probabilities,
                                                         double threshold);

DiagnosisSession start_session(std::string session_id, PatientRecord record,
                               const SessionContext& ctx, double threshold = kDefaultThreshold);

StepResult step(DiagnosisSession& session, const SessionContext& ctx);

// Throws Error(kConflict, "already recorded ...") for a repeated name. The
// session is unchanged when the value is rejected.
void submit_observation(DiagnosisSession& session, const std::string& name,
                        ObservationValue value, const SessionContext& ctx);

void rescore(DiagnosisSession& session, const SessionContext& ctx);

// For sessions where no disease cleared the threshold.
void select_tree_manually(DiagnosisSession& session, const std::string& disease_id,
                          const SessionContext& ctx);

// Re-issues the calls recorded in the original's event log (start, steps,
// observations, standalone rescores, manual selections) against a fresh
// session.
DiagnosisSession replay_session(const DiagnosisSession& original, const SessionContext& ctx);

std::vector<TreeOutcome> outcomes(const DiagnosisSession& session);

struct PerformedTest {
  std::string observation;
  std::string test_id;  // empty when no registered test produces it
  double cost = 0.0;
};

struct SessionSummary {
  std::string session_id;
  std::string patient_id;
  bool concluded = false;
  std::vector<TreeOutcome> outcomes;
  std::vector<PerformedTest> tests_performed;
  double total_cost = 0.0;
  std::vector<SessionEvent> events;
};

SessionSummary session_summary(const DiagnosisSession& session);

std::string to_string(TreeStatus status);

void to_json(json& j, const SessionEvent& e);
void from_json(const json& j, SessionEvent& e);
void to_json(json& j, const IntegrityIssue& i);
void from_json(const json& j, IntegrityIssue& i);
void to_json(json& j, const ActiveTree& t);
void from_json(const json& j, ActiveTree& t);
void to_json(json& j, const DiagnosisSession& s);
void from_json(const json& j, DiagnosisSession& s);
void to_json(json& j, const Recommendation& r);
void to_json(json& j, const TreeOutcome& o);
void to_json(json& j, const StepResult& r);
void to_json(json& j, const SessionSummary& s);

}  // namespace careproto
