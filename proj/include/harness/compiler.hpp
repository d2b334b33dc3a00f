#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness/contract.hpp"
#include "harness/issue.hpp"
#include "harness/memory.hpp"

namespace harness::compiler {

struct AmbiguityFinding {
  contract::ClauseId clause_id;
  std::vector<std::string> interpretations;  // at least two readings
  std::string suggested_rewrite;
  std::string rule;  // lint rule id, or "agent"
  bool operator==(const AmbiguityFinding&) const = default;
};

nlohmann::json to_json(const AmbiguityFinding& f);
AmbiguityFinding finding_from_json(const nlohmann::json& j);

// Keeps only records whose match confidence reaches both `threshold` and the
// record's own min_confidence. Below threshold the issue compiles without
// the specialization.
std::vector<memory::ScoredSpecialization> select_specializations(
    const RawIssue& issue, const std::vector<memory::SpecializationRecord>& registry, double threshold);

// `must` for imperative wording (must, shall, never, always, ...), else `should`.
contract::Severity default_severity(std::string_view text);

// ---- ambiguity lint ---------------------------------------------------------

struct LintRule {
  std::string id;
  std::vector<std::string> phrases;  // matched on word boundaries
  std::vector<std::string> interpretations;
  std::string suggestion;
  bool leading_only = false;  // phrase must open the clause
  bool operator==(const LintRule&) const = default;
};

nlohmann::json to_json(const LintRule& r);
LintRule lint_rule_from_json(const nlohmann::json& j);

const std::vector<LintRule>& builtin_lint_rules();

// Deterministic rule findings over obligation-bearing clauses (invariants,
// business rules, auth rules, acceptance criteria), merged with any agent
// findings; one finding per clause id, rule findings first.
std::vector<AmbiguityFinding> lint_ambiguity(const contract::Contract& c, const std::vector<LintRule>& extra_rules = {},
                                             const std::vector<AmbiguityFinding>& agent_findings = {});

// ---- pass 1 ---------------------------------------------------------------

// Enforces structure and provenance on a ContractCompiler draft: assigns
// missing ids, defaults severity and origin, forces status draft_pass1 and
// injects every selected specialization clause with origin specialization.
// Throws agent_response_invalid when the draft cannot be made valid.
contract::Contract accept_pass1_draft(const RawIssue& issue, const std::vector<memory::ScoredSpecialization>& specs,
                                      const nlohmann::json& agent_body);

using AgentCall = std::function<nlohmann::json(int attempt)>;

// Calls the agent until a draft is accepted or `max_retries` extra attempts
// are used up.
contract::Contract compile_pass1(const RawIssue& issue, const std::vector<memory::ScoredSpecialization>& specs,
                                 const AgentCall& agent, int max_retries);

// ---- pass 2 ---------------------------------------------------------------

struct Removal {
  contract::ClauseId id;
  std::string reason;
  bool operator==(const Removal&) const = default;
};

struct Pass2Result {
  contract::Contract contract;
  std::vector<AmbiguityFinding> findings;
  std::vector<Removal> removals;
  int rejected_attempts = 0;
};

// Applies a refinement body {remove, rewrite, add, ambiguities} to a pass-1
// draft. Any attempt to introduce a clause id the draft does not have throws
// monotonicity_violation; other schema problems throw agent_response_invalid.
Pass2Result apply_refinement(const contract::Contract& draft, const nlohmann::json& agent_body,
                             const std::vector<LintRule>& extra_rules = {});

Pass2Result compile_pass2(const contract::Contract& draft, const AgentCall& agent, int max_retries,
                          const std::vector<LintRule>& extra_rules = {});

}  // namespace harness::compiler
