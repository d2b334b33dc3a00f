#include "harness/compiler.hpp"

#include <algorithm>
#include <set>

#include "harness/error.hpp"
#include "harness/util.hpp"

namespace harness::compiler {

using contract::ClauseId;
using contract::Contract;
using nlohmann::json;

namespace {

struct Section {
  const char* key;
  const char* prefix;
  bool has_severity;
};

constexpr Section kSections[] = {
    {"invariants", "INV", true},    {"error_taxonomy", "ERR", false}, {"auth_rules", "AUTH", false},
    {"business_rules", "BR", true}, {"out_of_scope", "OOS", false},   {"qa_targets", "QA", false},
    {"regression_risks", "RISK", false}, {"acceptance_criteria", "AC", false}};

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::agent_response_invalid, what); }

class IdAllocator {
 public:
  explicit IdAllocator(const json& contract_json) { collect(contract_json); }

  std::string next(const std::string& prefix) {
    for (int n = 1;; ++n) {
      std::string id = prefix + "-" + std::to_string(n);
      if (used_.insert(id).second) return id;
    }
  }

 private:
  void collect(const json& j) {
    if (j.is_object()) {
      if (auto it = j.find("id"); it != j.end() && it->is_string()) used_.insert(it->get<std::string>());
      for (const auto& [_, v] : j.items()) collect(v);
    } else if (j.is_array()) {
      for (const auto& v : j) collect(v);
    }
  }
  std::set<std::string> used_;
};

bool matches_template(const std::vector<memory::ScoredSpecialization>& specs, const std::string& text) {
  const std::string norm = util::normalize_words(text);
  for (const auto& s : specs) {
    for (const auto& t : s.record.injected_clauses) {
      if (util::normalize_words(t.text) == norm) return true;
    }
  }
  return false;
}

void normalize_clause(json& clause, const std::string& prefix, bool has_severity, IdAllocator& ids,
                      const std::vector<memory::ScoredSpecialization>& specs) {
  if (!clause.is_object()) invalid("clause is not an object");
  if (!clause.contains("id") || !clause["id"].is_string() || clause["id"].get<std::string>().empty()) {
    clause["id"] = ids.next(prefix);
  }
  std::string origin = clause.value("origin", "pass1_inferred");
  if (origin == "specialization") {
    const std::string text = clause.value("text", "");
    if (!matches_template(specs, text)) origin = "pass1_inferred";
  } else if (origin != "issue" && origin != "pass1_inferred") {
    origin = "pass1_inferred";
  }
  clause["origin"] = origin;
  if (has_severity && !clause.contains("severity")) {
    clause["severity"] = std::string(contract::to_string(default_severity(clause.value("text", ""))));
  }
}

std::string first_violation(const contract::ValidationReport& report) {
  return report.front().field + " (" + report.front().rule + ")";
}

bool is_ambiguity_lintable(const std::string& section) {
  return section == "invariants" || section == "business_rules" || section == "auth_rules" ||
         section == "acceptance_criteria";
}

bool rule_matches(const LintRule& rule, const std::string& text) {
  const std::string norm = util::normalize_words(text);
  for (const auto& phrase : rule.phrases) {
    const std::string needle = util::normalize_words(phrase);
    if (needle.size() <= 1) continue;
    if (rule.leading_only ? util::starts_with(norm, needle) : norm.find(needle) != std::string::npos) return true;
  }
  return false;
}

template <typename T>
bool erase_by_id(std::vector<T>& items, const ClauseId& id) {
  const auto before = items.size();
  items.erase(std::remove_if(items.begin(), items.end(), [&](const T& x) { return x.id == id; }), items.end());
  return items.size() != before;
}

template <typename T>
T* find_by_id(std::vector<T>& items, const ClauseId& id) {
  for (auto& x : items) {
    if (x.id == id) return &x;
  }
  return nullptr;
}

bool remove_clause(Contract& c, const ClauseId& id) {
  if (erase_by_id(c.surfaces, id)) return true;
  for (auto& s : c.surfaces) {
    if (erase_by_id(s.side_effects, id)) return true;
  }
  return erase_by_id(c.invariants, id) || erase_by_id(c.error_taxonomy, id) || erase_by_id(c.auth_rules, id) ||
         erase_by_id(c.business_rules, id) || erase_by_id(c.out_of_scope, id) || erase_by_id(c.qa_targets, id) ||
         erase_by_id(c.regression_risks, id) || erase_by_id(c.acceptance_criteria, id) ||
         erase_by_id(c.known_gaps, id);
}

bool rewrite_clause(Contract& c, const ClauseId& id, const std::string& text) {
  if (auto* x = find_by_id(c.invariants, id)) return x->text = text, true;
  if (auto* x = find_by_id(c.business_rules, id)) return x->text = text, true;
  if (auto* x = find_by_id(c.auth_rules, id)) return x->text = text, true;
  if (auto* x = find_by_id(c.out_of_scope, id)) return x->text = text, true;
  if (auto* x = find_by_id(c.qa_targets, id)) return x->text = text, true;
  if (auto* x = find_by_id(c.regression_risks, id)) return x->text = text, true;
  if (auto* x = find_by_id(c.acceptance_criteria, id)) return x->text = text, true;
  if (auto* x = find_by_id(c.error_taxonomy, id)) return x->meaning = text, true;
  for (auto& s : c.surfaces) {
    if (auto* x = find_by_id(s.side_effects, id)) return x->text = text, true;
  }
  return false;
}

std::vector<AmbiguityFinding> merge_findings(std::vector<AmbiguityFinding> first,
                                             const std::vector<AmbiguityFinding>& second) {
  std::set<ClauseId> seen;
  std::vector<AmbiguityFinding> out;
  for (auto* list : {&first, const_cast<std::vector<AmbiguityFinding>*>(&second)}) {
    for (const auto& f : *list) {
      if (seen.insert(f.clause_id).second) out.push_back(f);
    }
  }
  return out;
}

}  // namespace

json to_json(const AmbiguityFinding& f) {
  return {{"clause_id", f.clause_id},
          {"interpretations", f.interpretations},
          {"suggested_rewrite", f.suggested_rewrite},
          {"rule", f.rule}};
}

AmbiguityFinding finding_from_json(const json& j) {
  AmbiguityFinding f;
  try {
    f.clause_id = j.at("clause_id").get<std::string>();
    f.interpretations = j.at("interpretations").get<std::vector<std::string>>();
    f.suggested_rewrite = j.value("suggested_rewrite", "");
    f.rule = j.value("rule", "agent");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("ambiguity finding: ") + e.what());
  }
  if (f.interpretations.size() < 2) {
    throw Error(ErrorCode::parse_error, "ambiguity finding for " + f.clause_id + " needs at least two interpretations");
  }
  return f;
}

json to_json(const LintRule& r) {
  return {{"id", r.id},
          {"phrases", r.phrases},
          {"interpretations", r.interpretations},
          {"suggestion", r.suggestion},
          {"leading_only", r.leading_only}};
}

LintRule lint_rule_from_json(const json& j) {
  LintRule r;
  try {
    r.id = j.at("id").get<std::string>();
    r.phrases = j.at("phrases").get<std::vector<std::string>>();
    r.interpretations = j.at("interpretations").get<std::vector<std::string>>();
    r.suggestion = j.value("suggestion", "");
    r.leading_only = j.value("leading_only", false);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("lint rule: ") + e.what());
  }
  if (r.phrases.empty() || r.interpretations.size() < 2) {
    throw Error(ErrorCode::parse_error, "lint rule '" + r.id + "' needs phrases and two interpretations");
  }
  return r;
}

std::vector<memory::ScoredSpecialization> select_specializations(
    const RawIssue& issue, const std::vector<memory::SpecializationRecord>& registry, double threshold) {
  if (threshold < 0.0 || threshold > 1.0) {
    throw Error(ErrorCode::invalid_argument, "specialization threshold must be in [0,1]");
  }
  std::vector<memory::ScoredSpecialization> out;
  for (auto& scored : memory::match_specializations(issue, registry)) {
    if (scored.confidence >= threshold && scored.confidence >= scored.record.min_confidence) {
      out.push_back(std::move(scored));
    }
  }
  return out;
}

contract::Severity default_severity(std::string_view text) {
  static const char* kImperative[] = {"must", "shall", "never", "always", "required", "requires", "mandatory",
                                      "cannot", "must not", "only"};
  for (const char* word : kImperative) {
    if (util::contains_phrase(text, word)) return contract::Severity::must;
  }
  return contract::Severity::should;
}

const std::vector<LintRule>& builtin_lint_rules() {
  static const std::vector<LintRule> kRules = {
      {"vague-qualifier",
       {"appropriately", "appropriate", "as needed", "as necessary", "if necessary", "properly", "reasonable",
        "reasonably", "gracefully", "user friendly", "etc", "where applicable", "as expected"},
       {"reject the operation and report an error to the caller", "recover silently and continue with a default"},
       "replace the qualifier with the concrete observable behavior",
       false},
      {"unresolved-disjunction",
       {"and/or", "or similar", "or equivalent", "or otherwise", "or other"},
       {"every listed alternative is required", "any single alternative is sufficient"},
       "state which alternatives are required",
       false},
      {"undefined-referent",
       {"it", "this", "that", "they", "these", "those", "such"},
       {"refers to the subject of the preceding clause", "refers to the module as a whole"},
       "name the referent explicitly",
       true},
      {"vague-quantifier",
       {"some", "several", "many", "few", "various"},
       {"applies to every matching item", "applies to a subset chosen by the implementer"},
       "quantify the obligation (all, none, at most N)",
       false},
  };
  return kRules;
}

std::vector<AmbiguityFinding> lint_ambiguity(const Contract& c, const std::vector<LintRule>& extra_rules,
                                             const std::vector<AmbiguityFinding>& agent_findings) {
  std::vector<LintRule> rules = builtin_lint_rules();
  rules.insert(rules.end(), extra_rules.begin(), extra_rules.end());
  std::vector<AmbiguityFinding> found;
  for (const auto& clause : contract::all_clauses(c)) {
    if (!is_ambiguity_lintable(clause.section)) continue;
    for (const auto& rule : rules) {
      if (rule_matches(rule, clause.text)) {
        found.push_back({clause.id, rule.interpretations, rule.suggestion, rule.id});
        break;
      }
    }
  }
  const auto ids = contract::clause_ids(c);
  std::vector<AmbiguityFinding> agent;
  for (const auto& f : agent_findings) {
    if (std::find(ids.begin(), ids.end(), f.clause_id) != ids.end() && f.interpretations.size() >= 2) {
      agent.push_back(f);
    }
  }
  return merge_findings(std::move(found), agent);
}

Contract accept_pass1_draft(const RawIssue& issue, const std::vector<memory::ScoredSpecialization>& specs,
                            const json& agent_body) {
  if (util::trim(issue.body).empty()) throw Error(ErrorCode::empty_issue, "issue '" + issue.id + "' has no body");
  if (!agent_body.is_object() || !agent_body.contains("contract") || !agent_body["contract"].is_object()) {
    invalid("draft response has no contract object");
  }
  json draft = agent_body["contract"];
  if (draft.contains("known_gaps") && !draft["known_gaps"].empty()) invalid("a draft cannot carry known_gaps");
  draft["status"] = "draft_pass1";
  draft.erase("known_gaps");

  IdAllocator ids(draft);
  if (draft.contains("surfaces")) {
    if (!draft["surfaces"].is_array()) invalid("surfaces must be an array");
    for (auto& s : draft["surfaces"]) {
      normalize_clause(s, "SURF", false, ids, specs);
      if (s.contains("side_effects")) {
        if (!s["side_effects"].is_array()) invalid("side_effects must be an array");
        for (auto& se : s["side_effects"]) {
          if (se.is_string()) se = json{{"text", se}};
          normalize_clause(se, "SE", false, ids, specs);
        }
      }
    }
  }
  for (const auto& section : kSections) {
    if (!draft.contains(section.key)) continue;
    if (!draft[section.key].is_array()) invalid(std::string(section.key) + " must be an array");
    for (auto& clause : draft[section.key]) {
      if (clause.is_string()) clause = json{{"text", clause}};
      normalize_clause(clause, section.prefix, section.has_severity, ids, specs);
    }
  }

  Contract c;
  try {
    c = contract::from_json(draft);
  } catch (const Error& e) {
    invalid(std::string("draft does not parse: ") + e.what());
  }

  for (const auto& spec : specs) {
    for (const auto& tmpl : spec.record.injected_clauses) {
      const std::string norm = util::normalize_words(tmpl.text);
      auto it = std::find_if(c.invariants.begin(), c.invariants.end(),
                             [&](const auto& inv) { return util::normalize_words(inv.text) == norm; });
      if (it != c.invariants.end()) {
        it->origin = contract::Origin::specialization;
      } else {
        c.invariants.push_back({ids.next("SPEC"), tmpl.text, tmpl.severity, contract::Origin::specialization});
      }
    }
  }

  if (auto report = contract::validate_contract(c); !report.empty()) {
    invalid("draft violates " + first_violation(report));
  }
  return c;
}

Contract compile_pass1(const RawIssue& issue, const std::vector<memory::ScoredSpecialization>& specs,
                       const AgentCall& agent, int max_retries) {
  if (util::trim(issue.body).empty()) throw Error(ErrorCode::empty_issue, "issue '" + issue.id + "' has no body");
  std::string last;
  for (int attempt = 1; attempt <= 1 + max_retries; ++attempt) {
    try {
      return accept_pass1_draft(issue, specs, agent(attempt));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::agent_response_invalid) throw;
      last = e.what();
    }
  }
  throw Error(ErrorCode::agent_response_invalid, "no valid draft after retries; last: " + last);
}

Pass2Result apply_refinement(const Contract& draft, const json& agent_body, const std::vector<LintRule>& extra_rules) {
  if (draft.status != contract::Status::draft_pass1) {
    throw Error(ErrorCode::state_mismatch, "pass 2 expects a draft_pass1 contract");
  }
  if (!agent_body.is_object()) invalid("refinement response is not an object");
  for (const auto& [key, _] : agent_body.items()) {
    if (key != "remove" && key != "rewrite" && key != "add" && key != "ambiguities") {
      invalid("unknown refinement field '" + key + "'");
    }
  }
  if (agent_body.contains("add") && !agent_body["add"].empty()) {
    throw Error(ErrorCode::monotonicity_violation, "pass 2 may not add clauses");
  }

  Pass2Result result;
  result.contract = draft;
  Contract& c = result.contract;
  try {
    for (const auto& r : agent_body.value("remove", json::array())) {
      const std::string id = r.is_string() ? r.get<std::string>() : r.at("id").get<std::string>();
      std::string reason = r.is_object() ? r.value("reason", "") : "";
      if (reason.empty()) reason = "unsupported requirement";
      if (!remove_clause(c, id)) invalid("cannot remove unknown clause '" + id + "'");
      result.removals.push_back({id, reason});
    }
    for (const auto& w : agent_body.value("rewrite", json::array())) {
      const std::string id = w.at("id").get<std::string>();
      const std::string text = w.at("text").get<std::string>();
      if (!contract::find_clause(draft, id)) {
        throw Error(ErrorCode::monotonicity_violation, "rewrite introduces unknown clause '" + id + "'");
      }
      if (!rewrite_clause(c, id, text)) invalid("clause '" + id + "' was removed or has no text");
    }
  } catch (const json::exception& e) {
    invalid(std::string("malformed refinement: ") + e.what());
  }

  // Links to removed invariants are dropped with them.
  for (auto& ac : c.acceptance_criteria) {
    std::erase_if(ac.linked_invariants, [&](const ClauseId& id) { return contract::find_invariant(c, id) == nullptr; });
  }
  c.status = contract::Status::refined_pass2;

  const auto diff = contract::diff_contracts(draft, c);
  if (!diff.added.empty()) throw Error(ErrorCode::monotonicity_violation, "refinement added " + diff.added.front());
  if (auto report = contract::validate_contract(c); !report.empty()) {
    invalid("refined contract violates " + first_violation(report));
  }

  std::vector<AmbiguityFinding> agent_findings;
  try {
    for (const auto& f : agent_body.value("ambiguities", json::array())) agent_findings.push_back(finding_from_json(f));
  } catch (const Error& e) {
    invalid(e.what());
  }
  result.findings = lint_ambiguity(c, extra_rules, agent_findings);
  return result;
}

Pass2Result compile_pass2(const Contract& draft, const AgentCall& agent, int max_retries,
                          const std::vector<LintRule>& extra_rules) {
  if (auto report = contract::validate_contract(draft); !report.empty()) {
    throw Error(ErrorCode::state_mismatch, "pass 2 input is invalid: " + first_violation(report));
  }
  int rejected = 0;
  ErrorCode last_code = ErrorCode::agent_response_invalid;
  std::string last;
  for (int attempt = 1; attempt <= 1 + max_retries; ++attempt) {
    try {
      auto result = apply_refinement(draft, agent(attempt), extra_rules);
      result.rejected_attempts = rejected;
      return result;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::agent_response_invalid && e.code() != ErrorCode::monotonicity_violation) throw;
      ++rejected;
      last_code = e.code();
      last = e.what();
    }
  }
  throw Error(last_code, "no acceptable refinement after " + std::to_string(rejected) + " attempts; last: " + last);
}

}  // namespace harness::compiler
