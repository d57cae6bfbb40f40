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

#include "careproto/session.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "careproto/error.hpp"

namespace careproto {
namespace {

void sort_trees(std::vector<ActiveTree>& trees) {
  std::stable_sort(trees.begin(), trees.end(), [](const ActiveTree& a, const ActiveTree& b) {
    if (a.probability != b.probability) return a.probability > b.probability;
    return a.disease_id < b.disease_id;
  });
}

void log_event(DiagnosisSession& s, const SessionContext& ctx, EventKind kind, json payload) {
  s.event_log.push_back({s.event_log.size(), ctx.clock(), kind, std::move(payload)});
}

ActiveTree bind_tree(const std::string& disease_id, double probability, ProtocolTree tree) {
  ActiveTree t;
  t.disease_id = disease_id;
  t.probability = probability;
  t.cursor = tree.root;
  t.trajectory = {tree.root};
  t.tree = std::move(tree);
  return t;
}

json tree_ref(const ActiveTree& t) {
  return json{{"disease_id", t.disease_id}, {"version", t.tree.version}, {"probability", t.probability}};
}

void drop_tree(DiagnosisSession& s, ActiveTree& t, const SessionContext& ctx, std::string reason) {
  t.status = TreeStatus::kDropped;
  t.drop_reason = reason;
  s.integrity_issues.push_back({s.session_id, t.disease_id, t.tree.version, t.cursor, reason});
  log_event(s, ctx, EventKind::kTreeDropped,
            {{"disease_id", t.disease_id}, {"version", t.tree.version}, {"node_id", t.cursor},
             {"reason", reason}});
}

// Moves the cursor through every decision whose observation is cached.
void advance(DiagnosisSession& s, ActiveTree& t, const SessionContext& ctx) {
  for (size_t budget = t.tree.nodes.size() + 1; budget > 0; --budget) {
    const TreeNode* node = t.tree.find(t.cursor);
    if (!node) {
      drop_tree(s, t, ctx, "cursor '" + t.cursor + "' is not a node of the tree");
      return;
    }
    if (const auto* leaf = std::get_if<LeafNode>(node)) {
      t.status = TreeStatus::kConcluded;
      t.diagnosis = leaf->diagnosis;
      log_event(s, ctx, EventKind::kTreeConcluded,
                {{"disease_id", t.disease_id}, {"node_id", t.cursor}, {"diagnosis", leaf->diagnosis}});
      return;
    }
    const auto& d = std::get<DecisionNode>(*node);
    auto cached = s.observation_cache.find(d.observation);
    if (cached == s.observation_cache.end()) return;
    auto branch = evaluate(d.predicate, cached->second);
    if (!branch) {
      drop_tree(s, t, ctx,
                "observation '" + d.observation + "' has the wrong kind for the " +
                    to_string(predicate_kind(d.predicate)) + " predicate at node '" + t.cursor + "'");
      return;
    }
    const std::string& next = *branch ? d.yes : d.no;
    log_event(s, ctx, EventKind::kNodeResolved,
              {{"disease_id", t.disease_id},
               {"node_id", t.cursor},
               {"question", d.question},
               {"branch", *branch ? "yes" : "no"},
               {"next", next}});
    t.cursor = next;
    t.trajectory.push_back(next);
  }
  drop_tree(s, t, ctx, "traversal exceeded the node count");
}

void apply_scores(DiagnosisSession& s, DiseaseProbabilities probabilities, const SessionContext& ctx) {
  for (auto& t : s.active_trees)
    if (auto it = probabilities.find(t.disease_id); it != probabilities.end())
      t.probability = it->second;
  s.probabilities = std::move(probabilities);
  log_event(s, ctx, EventKind::kRescored, {{"probabilities", s.probabilities}});

  for (const auto& [disease, p] : select_trees(s.probabilities, s.threshold)) {
    if (s.find_tree(disease)) continue;
    auto tree = ctx.repo.find_active(disease);
    if (!tree) continue;
    s.active_trees.push_back(bind_tree(disease, p, std::move(*tree)));
    log_event(s, ctx, EventKind::kTreeAdded,
              {{"disease_id", disease}, {"version", s.active_trees.back().tree.version},
               {"probability", p}, {"reason", "rescore"}});
  }
  sort_trees(s.active_trees);
}

}  // namespace

std::string to_string(EventKind kind) {
  switch (kind) {
    case EventKind::kStarted: return "started";
    case EventKind::kTreesSelected: return "trees_selected";
    case EventKind::kTestRecommended: return "test_recommended";
    case EventKind::kObservationRecorded: return "observation_recorded";
    case EventKind::kNodeResolved: return "node_resolved";
    case EventKind::kTreeConcluded: return "tree_concluded";
    case EventKind::kTreeAdded: return "tree_added";
    case EventKind::kTreeDropped: return "tree_dropped";
    case EventKind::kRescored: return "rescored";
  }
  return "started";
}

EventKind event_kind_from_string(const std::string& text) {
  for (auto k : {EventKind::kStarted, EventKind::kTreesSelected, EventKind::kTestRecommended,
                 EventKind::kObservationRecorded, EventKind::kNodeResolved,
                 EventKind::kTreeConcluded, EventKind::kTreeAdded, EventKind::kTreeDropped,
                 EventKind::kRescored})
    if (to_string(k) == text) return k;
  fail(ErrorCode::kParse, "unknown event kind '" + text + "'");
}

std::string to_string(TreeStatus status) {
  switch (status) {
    case TreeStatus::kRunning: return "running";
    case TreeStatus::kConcluded: return "concluded";
    case TreeStatus::kDropped: return "dropped";
  }
  return "running";
}

namespace {
TreeStatus tree_status_from_string(const std::string& text) {
  if (text == "running") return TreeStatus::kRunning;
  if (text == "concluded") return TreeStatus::kConcluded;
  if (text == "dropped") return TreeStatus::kDropped;
  fail(ErrorCode::kParse, "unknown tree status '" + text + "'");
}
}  // namespace

bool DiagnosisSession::concluded() const {
  return std::none_of(active_trees.begin(), active_trees.end(),
                      [](const ActiveTree& t) { return t.status == TreeStatus::kRunning; });
}

const ActiveTree* DiagnosisSession::find_tree(const std::string& disease_id) const {
  for (const auto& t : active_trees)
    if (t.disease_id == disease_id) return &t;
  return nullptr;
}

std::vector<std::pair<std::string, double>> select_trees(const DiseaseProbabilities& probabilities,
                                                         double threshold) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [disease, p] : probabilities)
    if (p >= threshold) out.emplace_back(disease, p);
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

DiagnosisSession start_session(std::string session_id, PatientRecord record,
                               const SessionContext& ctx, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    fail(ErrorCode::kInvalidArgument, "threshold must lie in (0, 1)");
  if (ctx.repo.empty()) fail(ErrorCode::kInvalidArgument, "protocol repository is empty");
  validate_record(record);
  for (const auto& [name, value] : record.observations)
    check_against_registry(name, value, ctx.repo.tests());

  DiagnosisSession s;
  s.session_id = std::move(session_id);
  s.model_ref = ctx.model_ref;
  s.threshold = threshold;
  s.probabilities = predict(ctx.model, record, ctx.schema);
  for (const auto& [name, value] : record.observations)
    if (is_present(value)) s.observation_cache.emplace(name, value);
  s.record = std::move(record);

  log_event(s, ctx, EventKind::kStarted,
            {{"record", s.record}, {"threshold", s.threshold}, {"model_ref", s.model_ref}});

  json selected = json::array();
  json missing = json::array();
  for (const auto& [disease, p] : select_trees(s.probabilities, threshold)) {
    auto tree = ctx.repo.find_active(disease);
    if (!tree) {
      missing.push_back(disease);
      continue;
    }
    s.active_trees.push_back(bind_tree(disease, p, std::move(*tree)));
    selected.push_back(tree_ref(s.active_trees.back()));
  }
  log_event(s, ctx, EventKind::kTreesSelected,
            {{"selected", selected}, {"missing_protocols", missing},
             {"probabilities", s.probabilities}, {"manual_selection_required", s.active_trees.empty()}});
  return s;
}

StepResult step(DiagnosisSession& s, const SessionContext& ctx) {
  for (auto& t : s.active_trees)
    if (t.status == TreeStatus::kRunning) advance(s, t, ctx);

  std::map<std::string, Recommendation> by_test;
  for (auto& t : s.active_trees) {
    if (t.status != TreeStatus::kRunning) continue;
    const auto& d = std::get<DecisionNode>(*t.tree.find(t.cursor));
    const TestDefinition* test = ctx.repo.tests().find(d.required_test);
    if (!test) {
      drop_tree(s, t, ctx, "required test '" + d.required_test + "' is not registered");
      continue;
    }
    auto& rec = by_test[test->test_id];
    rec.test = *test;
    rec.resolves.push_back({t.disease_id, t.cursor, d.question});
  }

  StepResult result;
  for (auto& [_, rec] : by_test) result.recommendations.push_back(std::move(rec));
  std::sort(result.recommendations.begin(), result.recommendations.end(),
            [](const Recommendation& a, const Recommendation& b) {
              if (a.resolves.size() != b.resolves.size()) return a.resolves.size() > b.resolves.size();
              if (a.test.cost != b.test.cost) return a.test.cost < b.test.cost;
              return a.test.test_id < b.test.test_id;
            });
  for (auto& rec : result.recommendations) {
    rec.rationale = "unblocks " + std::to_string(rec.resolves.size()) + " pending decision" +
                    (rec.resolves.size() == 1 ? "" : "s") + " (";
    for (size_t i = 0; i < rec.resolves.size(); ++i)
      rec.rationale += (i ? "; " : "") + rec.resolves[i].disease_id + ": " + rec.resolves[i].question;
    rec.rationale += ") at cost " + json(rec.test.cost).dump();
    log_event(s, ctx, EventKind::kTestRecommended, rec);
  }
  result.concluded = s.concluded();
  result.outcomes = outcomes(s);
  return result;
}

void submit_observation(DiagnosisSession& s, const std::string& name, ObservationValue value,
                        const SessionContext& ctx) {
  if (s.observation_cache.count(name))
    fail(ErrorCode::kConflict, "already recorded: observation '" + name + "'");
  if (name.empty()) fail(ErrorCode::kInvalidArgument, "observation name is empty");
  if (!is_present(value)) fail(ErrorCode::kInvalidArgument, "observation '" + name + "' is absent");
  if (const auto* num = std::get_if<NumericValue>(&value); num && !std::isfinite(num->value))
    fail(ErrorCode::kInvalidArgument, "observation '" + name + "' is not finite");
  check_against_registry(name, value, ctx.repo.tests());

  PatientRecord updated = s.record;
  updated.observations[name] = value;
  DiseaseProbabilities probabilities = predict(ctx.model, updated, ctx.schema);

  s.record = std::move(updated);
  s.observation_cache.emplace(name, value);
  json payload{{"name", name}, {"value", value}};
  if (const TestDefinition* test = ctx.repo.tests().producer_of(name)) {
    payload["test_id"] = test->test_id;
    payload["cost"] = test->cost;
  }
  log_event(s, ctx, EventKind::kObservationRecorded, std::move(payload));
  apply_scores(s, std::move(probabilities), ctx);
}

void rescore(DiagnosisSession& s, const SessionContext& ctx) {
  apply_scores(s, predict(ctx.model, s.record, ctx.schema), ctx);
}

void select_tree_manually(DiagnosisSession& s, const std::string& disease_id,
                          const SessionContext& ctx) {
  if (s.find_tree(disease_id))
    fail(ErrorCode::kConflict, "disease '" + disease_id + "' is already in the session");
  ProtocolTree tree = ctx.repo.get_active(disease_id);
  double p = s.probabilities.count(disease_id) ? s.probabilities.at(disease_id) : 0.0;
  s.active_trees.push_back(bind_tree(disease_id, p, std::move(tree)));
  log_event(s, ctx, EventKind::kTreeAdded,
            {{"disease_id", disease_id}, {"version", s.active_trees.back().tree.version},
             {"probability", p}, {"reason", "manual"}});
  sort_trees(s.active_trees);
}

namespace {

bool is_step_event(EventKind k) {
  return k == EventKind::kTestRecommended || k == EventKind::kNodeResolved ||
         k == EventKind::kTreeConcluded || k == EventKind::kTreeDropped;
}

// Recommendations within one step are logged in strictly increasing
// (coverage desc, cost, test id) order.
bool recommended_after(const json& prev, const json& cur) {
  auto key = [](const json& r) {
    return std::make_tuple(-static_cast<long>(r.at("resolves").size()), r.at("test").at("cost").get<double>(),
                           r.at("test").at("test_id").get<std::string>());
  };
  return key(prev) < key(cur);
}

}  // namespace

DiagnosisSession replay_session(const DiagnosisSession& original, const SessionContext& ctx) {
  const auto& log = original.event_log;
  if (log.empty() || log.front().kind != EventKind::kStarted)
    fail(ErrorCode::kInvalidArgument, "session log does not begin with a start event");
  const json& start = log.front().payload;
  DiagnosisSession replay = start_session(original.session_id, start.at("record").get<PatientRecord>(),
                                          ctx, start.at("threshold").get<double>());

  // The log is cut back into the calls that produced it. A step that logged
  // nothing changed nothing, so it need not be repeated.
  for (size_t i = 1; i < log.size(); ++i) {
    const SessionEvent& e = log[i];
    const SessionEvent* prev = &log[i - 1];
    switch (e.kind) {
      case EventKind::kObservationRecorded:
        submit_observation(replay, e.payload.at("name").get<std::string>(),
                           e.payload.at("value").get<ObservationValue>(), ctx);
        break;
      case EventKind::kRescored:
        if (prev->kind != EventKind::kObservationRecorded) rescore(replay, ctx);
        break;
      case EventKind::kTreeAdded:
        if (e.payload.value("reason", "") == "manual")
          select_tree_manually(replay, e.payload.at("disease_id").get<std::string>(), ctx);
        break;
      default:
        if (!is_step_event(e.kind)) break;
        bool continues = is_step_event(prev->kind) &&
                         (prev->kind != EventKind::kTestRecommended ||
                          (e.kind == EventKind::kTestRecommended && recommended_after(prev->payload, e.payload)));
        if (!continues) step(replay, ctx);
        break;
    }
  }
  return replay;
}

std::vector<TreeOutcome> outcomes(const DiagnosisSession& s) {
  std::vector<TreeOutcome> out;
  for (const auto& t : s.active_trees) {
    TreeOutcome o;
    o.disease_id = t.disease_id;
    o.version = t.tree.version;
    o.probability = t.probability;
    o.status = t.status;
    o.cursor = t.cursor;
    o.drop_reason = t.drop_reason;
    if (const TreeNode* node = t.tree.find(t.cursor)) {
      if (const auto* leaf = std::get_if<LeafNode>(node); leaf && t.status == TreeStatus::kConcluded) {
        o.diagnosis = leaf->diagnosis;
        o.recommendations = leaf->recommendations;
        o.medications = leaf->medications;
      } else if (const auto* d = std::get_if<DecisionNode>(node); d && t.status == TreeStatus::kRunning) {
        o.pending_question = d->question;
      }
    }
    out.push_back(std::move(o));
  }
  return out;
}

SessionSummary session_summary(const DiagnosisSession& s) {
  SessionSummary summary;
  summary.session_id = s.session_id;
  summary.patient_id = s.record.patient_id;
  summary.concluded = s.concluded() && !s.active_trees.empty();
  summary.outcomes = outcomes(s);
  for (const auto& e : s.event_log) {
    if (e.kind != EventKind::kObservationRecorded) continue;
    PerformedTest t{e.payload.at("name").get<std::string>(), e.payload.value("test_id", ""),
                    e.payload.value("cost", 0.0)};
    summary.total_cost += t.cost;
    summary.tests_performed.push_back(std::move(t));
  }
  summary.events = s.event_log;
  return summary;
}

void to_json(json& j, const SessionEvent& e) {
  j = json{{"seq", e.seq}, {"at", format_rfc3339(e.at)}, {"kind", to_string(e.kind)}, {"payload", e.payload}};
}

void from_json(const json& j, SessionEvent& e) {
  e.seq = j.at("seq").get<size_t>();
  e.at = parse_rfc3339(j.at("at").get<std::string>());
  e.kind = event_kind_from_string(j.at("kind").get<std::string>());
  e.payload = j.at("payload");
}

void to_json(json& j, const IntegrityIssue& i) {
  j = json{{"session_id", i.session_id}, {"disease_id", i.disease_id}, {"version", i.version},
           {"node_id", i.node_id}, {"message", i.message}};
}

void from_json(const json& j, IntegrityIssue& i) {
  i.session_id = j.at("session_id").get<std::string>();
  i.disease_id = j.at("disease_id").get<std::string>();
  i.version = j.at("version").get<int>();
  i.node_id = j.at("node_id").get<std::string>();
  i.message = j.at("message").get<std::string>();
}

void to_json(json& j, const ActiveTree& t) {
  j = json{{"disease_id", t.disease_id},
           {"version", t.tree.version},
           {"source", t.tree.source},
           {"probability", t.probability},
           {"cursor", t.cursor},
           {"status", to_string(t.status)},
           {"diagnosis", t.diagnosis},
           {"drop_reason", t.drop_reason},
           {"trajectory", t.trajectory},
           {"tree", tree_to_json(t.tree)}};
}

void from_json(const json& j, ActiveTree& t) {
  t.disease_id = j.at("disease_id").get<std::string>();
  t.probability = j.at("probability").get<double>();
  t.cursor = j.at("cursor").get<std::string>();
  t.status = tree_status_from_string(j.at("status").get<std::string>());
  t.diagnosis = j.value("diagnosis", "");
  t.drop_reason = j.value("drop_reason", "");
  t.trajectory = j.at("trajectory").get<std::vector<std::string>>();
  t.tree = tree_from_json(j.at("tree"));
  t.tree.version = j.at("version").get<int>();
  t.tree.source = j.at("source").get<TreeSource>();
}

void to_json(json& j, const DiagnosisSession& s) {
  j = json{{"session_id", s.session_id},
           {"model_ref", s.model_ref},
           {"threshold", s.threshold},
           {"record", s.record},
           {"probabilities", s.probabilities},
           {"active_trees", s.active_trees},
           {"observation_cache", s.observation_cache},
           {"event_log", s.event_log},
           {"integrity_issues", s.integrity_issues},
           {"needs_manual_selection", s.needs_manual_selection()},
           {"concluded", s.concluded()}};
}

void from_json(const json& j, DiagnosisSession& s) {
  s.session_id = j.at("session_id").get<std::string>();
  s.model_ref = j.at("model_ref").get<std::string>();
  s.threshold = j.at("threshold").get<double>();
  s.record = j.at("record").get<PatientRecord>();
  s.probabilities = j.at("probabilities").get<DiseaseProbabilities>();
  s.active_trees = j.at("active_trees").get<std::vector<ActiveTree>>();
  s.observation_cache.clear();
  for (const auto& [name, value] : j.at("observation_cache").items())
    s.observation_cache[name] = value.get<ObservationValue>();
  s.event_log = j.at("event_log").get<std::vector<SessionEvent>>();
  s.integrity_issues = j.value("integrity_issues", std::vector<IntegrityIssue>{});
}

void to_json(json& j, const Recommendation& r) {
  json resolves = json::array();
  for (const auto& t : r.resolves)
    resolves.push_back({{"disease_id", t.disease_id}, {"node_id", t.node_id}, {"question", t.question}});
  j = json{{"test", r.test}, {"resolves", resolves}, {"rationale", r.rationale}};
}

void to_json(json& j, const TreeOutcome& o) {
  j = json{{"disease_id", o.disease_id},
           {"version", o.version},
           {"probability", o.probability},
           {"status", to_string(o.status)},
           {"cursor", o.cursor}};
  if (o.status == TreeStatus::kConcluded) {
    j["diagnosis"] = o.diagnosis;
    j["recommendations"] = o.recommendations;
    j["medications"] = o.medications;
  } else if (o.status == TreeStatus::kRunning) {
    j["pending_question"] = o.pending_question;
  } else {
    j["drop_reason"] = o.drop_reason;
  }
}

void to_json(json& j, const StepResult& r) {
  j = json{{"recommendations", r.recommendations}, {"concluded", r.concluded}, {"outcomes", r.outcomes}};
}

void to_json(json& j, const SessionSummary& s) {
  json tests = json::array();
  for (const auto& t : s.tests_performed)
    tests.push_back({{"observation", t.observation}, {"test_id", t.test_id}, {"cost", t.cost}});
  j = json{{"session_id", s.session_id},
           {"patient_id", s.patient_id},
           {"concluded", s.concluded},
           {"outcomes", s.outcomes},
           {"tests_performed", tests},
           {"total_cost", s.total_cost},
           {"events", s.events}};
}

}  // namespace careproto
