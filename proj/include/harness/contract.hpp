#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace harness::contract {

// Opaque and stable: a clarified clause keeps its id across rewrites, and an
// id is never handed out twice within one contract lineage.
using ClauseId = std::string;

enum class Status { draft_pass1, refined_pass2, product_approved, eng_approved, final, superseded };
enum class SurfaceKind { api_endpoint, ui_flow, job, integration };
enum class Severity { must, should };
enum class Origin { issue, pass1_inferred, specialization, calibration };

std::string_view to_string(Status s);
std::string_view to_string(SurfaceKind k);
std::string_view to_string(Severity s);
std::string_view to_string(Origin o);
std::optional<Status> parse_status(std::string_view s);
std::optional<Origin> parse_origin(std::string_view s);
std::optional<Severity> parse_severity(std::string_view s);

struct TextClause {
  ClauseId id;
  std::string text;
  Origin origin = Origin::issue;
  bool operator==(const TextClause&) const = default;
};

struct InvariantClause {
  ClauseId id;
  std::string text;
  Severity severity = Severity::must;
  Origin origin = Origin::issue;
  bool operator==(const InvariantClause&) const = default;
};

struct ErrorEntry {
  ClauseId id;
  std::string code;
  std::string meaning;
  Origin origin = Origin::issue;
  bool operator==(const ErrorEntry&) const = default;
};

struct Surface {
  ClauseId id;
  SurfaceKind kind = SurfaceKind::api_endpoint;
  std::string method_or_trigger;
  std::string path_or_name;
  std::vector<std::string> returns;
  std::vector<TextClause> side_effects;
  std::vector<std::string> errors;
  Origin origin = Origin::issue;
  bool operator==(const Surface&) const = default;
};

struct AcceptanceCriterion {
  ClauseId id;
  std::string text;
  std::vector<ClauseId> linked_invariants;
  Origin origin = Origin::issue;
  bool operator==(const AcceptanceCriterion&) const = default;
};

struct Contract {
  std::string module_name;
  std::string version;
  std::vector<Surface> surfaces;
  std::vector<InvariantClause> invariants;
  std::vector<ErrorEntry> error_taxonomy;
  std::vector<TextClause> auth_rules;
  std::vector<InvariantClause> business_rules;
  std::vector<TextClause> out_of_scope;
  std::vector<TextClause> qa_targets;
  std::vector<TextClause> regression_risks;
  std::vector<AcceptanceCriterion> acceptance_criteria;
  std::vector<TextClause> known_gaps;
  Status status = Status::draft_pass1;
  bool operator==(const Contract&) const = default;
};

// A clause viewed independently of the list that holds it.
struct ClauseRef {
  ClauseId id;
  std::string section;  // list name, e.g. "invariants" or "surfaces.side_effects"
  std::string text;
  Origin origin = Origin::issue;
};

// Every clause of every list, in serialization order.
std::vector<ClauseRef> all_clauses(const Contract& c);
std::vector<ClauseId> clause_ids(const Contract& c);
const InvariantClause* find_invariant(const Contract& c, std::string_view id);
std::optional<ClauseRef> find_clause(const Contract& c, std::string_view id);

struct Violation {
  std::string field;
  std::string rule;
  bool operator==(const Violation&) const = default;
};
using ValidationReport = std::vector<Violation>;

// Checks every type invariant for the contract's declared status. The report
// is empty iff the contract is valid; ordering is deterministic.
ValidationReport validate_contract(const Contract& c);
bool is_semver(std::string_view version);

struct ClauseDiff {
  std::vector<ClauseId> unchanged;
  std::vector<ClauseId> added;
  std::vector<ClauseId> removed;
  std::vector<ClauseId> rewritten;
  bool operator==(const ClauseDiff&) const = default;
};

// Exact partition of ids(old) ∪ ids(new). A clause that keeps its id but
// changes text, attributes or list counts as rewritten.
ClauseDiff diff_contracts(const Contract& old_contract, const Contract& new_contract);

nlohmann::json to_json(const Contract& c);
// Strict: unknown keys, wrong types and missing clause ids are rejected with
// a parse_error naming the JSON field path.
Contract from_json(const nlohmann::json& j);

// Canonical form: sorted keys, two-space indent, trailing newline.
std::string serialize_contract(const Contract& c);
// Parse errors carry the line number (syntax) or field path (schema).
Contract parse_contract(std::string_view text);

// `<module_name>-v<version>.contract.json`
std::string contract_file_name(const Contract& c);

// Next id with the given prefix not present in any of the lineage contracts,
// e.g. fresh_clause_id({c}, "INV") -> "INV-7".
ClauseId fresh_clause_id(const std::vector<Contract>& lineage, std::string_view prefix);

}  // namespace harness::contract
