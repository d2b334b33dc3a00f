#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness/agent_runtime.hpp"
#include "harness/arbiter.hpp"
#include "harness/compiler.hpp"
#include "harness/contract.hpp"
#include "harness/issue.hpp"
#include "harness/ticket.hpp"
#include "harness/verification.hpp"

namespace harness::pipeline {

// JSON text of data/transitions.json, compiled into the library.
std::string_view builtin_transition_table();

enum class Phase { pre_pipeline, pipeline, post_pipeline, done, halted };

enum class EventKind {
  issue_submitted,
  contract_compiled_p1,
  contract_refined_p2,
  gate_recorded,
  job_dispatched,
  response_received,
  ci_completed,
  failure_classified,
  corrective_action,
  regression_promoted,
  retro_completed,
  human_decision,
  run_done,
  run_halted,
};

std::string_view to_string(Phase p);
std::string_view to_string(EventKind k);
std::optional<EventKind> parse_event_kind(std::string_view s);

struct RunEvent {
  std::int64_t seq = 0;
  std::string run_id;
  std::string timestamp;
  EventKind kind = EventKind::issue_submitted;
  nlohmann::json payload = nlohmann::json::object();
};

nlohmann::json to_json(const RunEvent& e);
RunEvent event_from_json(const nlohmann::json& j);

// An event before the store has given it a sequence number and timestamp.
struct EventDraft {
  EventKind kind = EventKind::issue_submitted;
  nlohmann::json payload = nlohmann::json::object();
};

// Transition labels, most specific first: e.g. gate_recorded:qa:pass,
// gate_recorded:qa, gate_recorded.
std::vector<std::string> event_labels(EventKind kind, const nlohmann::json& payload);

inline constexpr int kSame = -1;
inline constexpr int kDone = -2;
inline constexpr int kHalted = -3;

class TransitionTable {
 public:
  // Parses and validates: known event kinds, known steps, no duplicate
  // (step, label) pairs, every step reachable from step 1 and able to reach
  // done, and run_halted accepted from every non-terminal step.
  static TransitionTable parse(std::string_view json_text);
  static const TransitionTable& builtin();

  // Target for the first label with an entry at `from` ("done", "halted" or
  // a step number), falling back to the wildcard row for non-terminal steps.
  std::optional<int> lookup(const std::string& from, const std::vector<std::string>& labels) const;
  std::vector<std::string> labels_from(const std::string& from) const;
  const std::map<int, std::string>& step_names() const { return step_names_; }

 private:
  std::map<std::string, std::map<std::string, int>> rows_;
  std::map<int, std::string> step_names_;
  std::vector<int> transient_;
};

struct GateResult {
  std::string gate;
  verification::Verdict verdict = verification::Verdict::pass;
  std::vector<verification::ReviewFinding> findings;
  std::optional<std::string> principal;  // present iff waived
  std::int64_t recorded_seq = 0;
};

struct JobRecord {
  std::string job_id;
  agents::Role role = agents::Role::implementer;
  int attempt = 1;
  int step = 0;
  std::string route;
  nlohmann::json payload;
  bool answered = false;
  agents::ResponseKind kind = agents::ResponseKind::code_artifact;
  nlohmann::json body;
  std::string transcript_digest;
  bool discarded = false;
  std::int64_t dispatched_seq = 0;
};

struct ClassificationRecord {
  std::string group_key;
  std::string origin;  // ci | post_merge
  std::string section;
  arbiter::FailureClassification classification;
};

struct Proposal {
  std::string id;
  std::string kind;
  std::string target;
  std::string diff;
  std::vector<std::string> evidence_runs;
  std::string status = "pending";
  std::string ticket_id;
};

nlohmann::json to_json(const Proposal& p);
Proposal proposal_from_json(const nlohmann::json& j);

struct RunState {
  std::string run_id;
  RawIssue issue;
  std::string scenario_id;
  nlohmann::json ground_truth_labels = nlohmann::json::object();
  std::string interface_description;

  std::vector<contract::Contract> contract_lineage;
  Phase phase = Phase::pre_pipeline;
  int step = 1;
  int implementation_cycles = 0;
  int cycle_grants = 0;  // operator "continue" decisions after a cycle halt
  std::map<std::string, GateResult> gates;
  std::optional<std::string> pending_human;
  std::vector<HumanTicket> tickets;
  std::vector<JobRecord> jobs;

  std::vector<nlohmann::json> specializations;  // {domain, confidence}
  std::vector<std::string> checklists;
  std::vector<compiler::AmbiguityFinding> ambiguity_findings;
  std::vector<compiler::Removal> removals;

  std::string route = "implementer";  // next implementer dispatch at step 7
  std::optional<std::string> artifact_job;
  std::vector<verification::TestSuite> suites;  // this run's test_author and calibration suites
  std::string noise_mode;                       // verifier | ci while a noise round is open
  bool calibration_done = false;
  std::vector<nlohmann::json> noise_groups;
  int noise_rounds = 0;

  int ci_rounds = 0;
  nlohmann::json last_results = nlohmann::json::array();
  std::vector<nlohmann::json> round;  // failure groups of the latest failing CI
  std::vector<arbiter::FailureClassification> round_classifications;
  std::map<std::string, std::string> round_jobs;   // group key -> arbiter job
  std::map<std::string, std::string> round_human;  // group key -> class decided by operator
  std::vector<ClassificationRecord> classifications;
  std::vector<verification::ReviewFinding> last_findings;

  std::vector<nlohmann::json> pending_regressions;  // {test_id, suite}
  std::vector<std::string> promoted_regressions;

  std::vector<nlohmann::json> post_merge_reports;
  std::vector<Proposal> proposals;
  int retro_rounds = 0;
  int post_merge_actions = 0;
  bool post_merge_retro_done = false;
  std::string halt_reason;

  std::int64_t entered_seq = 0;  // event that moved the run into its current step
  std::int64_t last_seq = 0;
  std::size_t event_count = 0;
  std::string last_timestamp;

  const contract::Contract* current_contract() const;
  // Latest revision with status final, if any.
  const contract::Contract* final_contract() const;
  const JobRecord* find_job(std::string_view job_id) const;
  std::vector<const JobRecord*> outstanding_jobs() const;
  int role_attempts(agents::Role role) const;
  std::string module_name() const;
  std::string step_key() const;  // "done", "halted" or the step number
};

// Canonical JSON form; two states are equal iff their dumps are equal.
nlohmann::json to_json(const RunState& s);

Phase phase_for_step(int step);

// Pure. Illegal events throw illegal-transition naming the current step
// and the offending event; the input state is never modified.
RunState advance(const RunState& state, const RunEvent& event,
                 const TransitionTable& table = TransitionTable::builtin());

RunState fold(const std::vector<RunEvent>& events, const TransitionTable& table = TransitionTable::builtin());

struct ArbiterOutcome {
  RunState state;
  EventDraft event;  // corrective_action
};

// Builds the corrective_action for the current arbitration round (step 13)
// or for a post-merge report (done), and folds it.
ArbiterOutcome apply_arbiter_outcome(const RunState& state, const arbiter::FailureClassification& classification);

// Pure payload construction behind apply_arbiter_outcome.
nlohmann::json corrective_payload(const RunState& state, const arbiter::FailureClassification& classification);

// A run_halt ticket once implementation_cycles exceeds the allowance
// (limit per operator grant).
std::optional<HumanTicket> max_cycles_guard(const RunState& state, int limit);

// Same allowance applied to noise rounds, so a fixture that never settles
// reaches an operator instead of cycling through calibration forever.
std::optional<HumanTicket> noise_rounds_guard(const RunState& state, int limit);

}  // namespace harness::pipeline
