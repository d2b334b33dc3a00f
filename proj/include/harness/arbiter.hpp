#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness/contract.hpp"
#include "harness/ticket.hpp"
#include "harness/verification.hpp"

namespace harness::arbiter {

enum class FailureClass { bug, spec_gap, noise, contract_ambiguity };
enum class DecidedBy { agent, rules, human };

std::string_view to_string(FailureClass c);
std::string_view to_string(DecidedBy d);
std::optional<FailureClass> parse_failure_class(std::string_view s);
std::optional<DecidedBy> parse_decided_by(std::string_view s);
const std::vector<FailureClass>& all_classes();

struct FailingTest {
  std::string test_id;
  std::string assertion;
  std::vector<contract::ClauseId> clause_ids;
  // true: every linked clause exists; false: linked to nothing or to missing
  // clauses; unset: the suite carries no metadata for this test.
  std::optional<bool> contract_coverage;
  bool operator==(const FailingTest&) const = default;
};

// One failure group: every failing test of one suite sharing a root
// assertion, or a suite-level infrastructure failure with no test records.
struct FailureEvidence {
  std::string run_id;
  std::string group_key;
  std::string suite_id;
  std::string section;  // contract section of the first linked clause, or "uncovered"
  std::vector<FailingTest> failing_tests;
  std::optional<double> rerun_stability;
  std::vector<std::string> environment_flags;
  std::vector<contract::ClauseId> touched_clauses;    // from the code artifact, empty = unknown
  std::vector<contract::ClauseId> ambiguous_clauses;  // lint findings on the current contract
  bool operator==(const FailureEvidence&) const = default;
};

nlohmann::json to_json(const FailureEvidence& e);
FailureEvidence evidence_from_json(const nlohmann::json& j);

std::string root_assertion(std::string_view assertion);

std::vector<FailureEvidence> gather_evidence(const std::string& run_id, const contract::Contract& contract,
                                             const std::vector<verification::TestResults>& results,
                                             const std::vector<verification::TestSuite>& suites,
                                             const std::map<std::string, verification::FlakinessReport>& reruns,
                                             const std::vector<contract::ClauseId>& touched_clauses,
                                             const std::vector<contract::ClauseId>& ambiguous_clauses);

struct FailureClassification {
  FailureClass cls = FailureClass::bug;
  double confidence = 0.0;
  std::string rationale;
  DecidedBy decided_by = DecidedBy::rules;
  bool operator==(const FailureClassification&) const = default;
};

nlohmann::json to_json(const FailureClassification& c);
FailureClassification classification_from_json(const nlohmann::json& j);

struct ArbiterPolicy {
  double noise_threshold = 0.2;
  double escalation_confidence = 0.6;
  double rule_confidence = 0.8;
};

struct RuleOutcome {
  std::optional<FailureClass> candidate;
  bool forced = false;  // noise rule: no agent is consulted
  std::vector<std::string> trace;
};

RuleOutcome rule_prepass(const FailureEvidence& evidence, const ArbiterPolicy& policy);

struct AgentOpinion {
  FailureClass cls = FailureClass::bug;
  double confidence = 0.0;
  std::string rationale;
};

// Parses a classification response body; agent_response_invalid otherwise.
AgentOpinion opinion_from_body(const nlohmann::json& body);

struct ArbiterDecision {
  FailureClassification classification;
  std::optional<FailureClass> rule_candidate;
  bool escalate = false;
  std::string reason;
};

// Combines the rule pre-pass with the arbiter agent's opinion. Without an
// opinion the rules decide alone, and a missing candidate escalates.
ArbiterDecision classify(const FailureEvidence& evidence, const ArbiterPolicy& policy,
                         const std::optional<AgentOpinion>& agent);

bool needs_escalation(const std::optional<FailureClass>& rule_candidate, const AgentOpinion& agent,
                      const ArbiterPolicy& policy);

// Ticket for the operator queue; the caller assigns the id.
HumanTicket escalate(const FailureEvidence& evidence, const FailureClassification& proposed, const std::string& reason);

FailureClassification human_classification(FailureClass cls, const std::string& principal);

// The fixed response for each class.
struct CorrectiveRoute {
  FailureClass cls;
  std::string action;
  int next_step = 0;
  bool retry_implementation = false;  // implementer retry on the same contract
  bool promote_regression = false;
  bool contract_update = false;  // new contract revision through pass 2
  bool discard_artifact = false;
  bool calibrate_verifier = false;
};

const CorrectiveRoute& route_for(FailureClass cls);

// Among one CI round's classifications, the class whose route wins:
// contract_ambiguity, then spec_gap, then bug, then noise.
FailureClass dominant_class(const std::vector<FailureClassification>& round);

}  // namespace harness::arbiter
