#include "harness/arbiter.hpp"

#include <algorithm>
#include <set>

#include "harness/error.hpp"
#include "harness/util.hpp"

namespace harness::arbiter {

using nlohmann::json;

namespace {

constexpr std::pair<FailureClass, std::string_view> kClasses[] = {
    {FailureClass::bug, "bug"},
    {FailureClass::spec_gap, "spec_gap"},
    {FailureClass::noise, "noise"},
    {FailureClass::contract_ambiguity, "contract_ambiguity"}};

int precedence(FailureClass c) {
  switch (c) {
    case FailureClass::contract_ambiguity: return 3;
    case FailureClass::spec_gap: return 2;
    case FailureClass::bug: return 1;
    case FailureClass::noise: return 0;
  }
  return 0;
}

bool intersects(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  return std::any_of(a.begin(), a.end(), [&](const std::string& x) { return std::find(b.begin(), b.end(), x) != b.end(); });
}

}  // namespace

std::string_view to_string(FailureClass c) {
  for (const auto& [v, n] : kClasses) {
    if (v == c) return n;
  }
  return "?";
}

std::string_view to_string(DecidedBy d) {
  switch (d) {
    case DecidedBy::agent: return "agent";
    case DecidedBy::rules: return "rules";
    case DecidedBy::human: return "human";
  }
  return "?";
}

std::optional<FailureClass> parse_failure_class(std::string_view s) {
  if (s == "ambiguity" || s == "spec-gap") {
    return s == "ambiguity" ? FailureClass::contract_ambiguity : FailureClass::spec_gap;
  }
  for (const auto& [v, n] : kClasses) {
    if (n == s) return v;
  }
  return std::nullopt;
}

std::optional<DecidedBy> parse_decided_by(std::string_view s) {
  if (s == "agent") return DecidedBy::agent;
  if (s == "rules") return DecidedBy::rules;
  if (s == "human") return DecidedBy::human;
  return std::nullopt;
}

const std::vector<FailureClass>& all_classes() {
  static const std::vector<FailureClass> kAll = {FailureClass::bug, FailureClass::spec_gap, FailureClass::noise,
                                                 FailureClass::contract_ambiguity};
  return kAll;
}

json to_json(const FailureEvidence& e) {
  json tests = json::array();
  for (const auto& t : e.failing_tests) {
    json jt{{"test_id", t.test_id}, {"assertion", t.assertion}, {"clause_ids", t.clause_ids}};
    jt["contract_coverage"] = t.contract_coverage ? json(*t.contract_coverage) : json("unknown");
    tests.push_back(jt);
  }
  json j{{"run_id", e.run_id},
         {"group_key", e.group_key},
         {"suite_id", e.suite_id},
         {"section", e.section},
         {"failing_tests", tests},
         {"environment_flags", e.environment_flags},
         {"touched_clauses", e.touched_clauses},
         {"ambiguous_clauses", e.ambiguous_clauses}};
  j["rerun_stability"] = e.rerun_stability ? json(*e.rerun_stability) : json(nullptr);
  return j;
}

FailureEvidence evidence_from_json(const json& j) {
  FailureEvidence e;
  e.run_id = j.value("run_id", "");
  e.group_key = j.value("group_key", "");
  e.suite_id = j.value("suite_id", "");
  e.section = j.value("section", "uncovered");
  for (const auto& t : j.value("failing_tests", json::array())) {
    FailingTest ft;
    ft.test_id = t.value("test_id", "");
    ft.assertion = t.value("assertion", "");
    ft.clause_ids = t.value("clause_ids", std::vector<std::string>{});
    if (t.contains("contract_coverage") && t["contract_coverage"].is_boolean()) {
      ft.contract_coverage = t["contract_coverage"].get<bool>();
    }
    e.failing_tests.push_back(std::move(ft));
  }
  if (j.contains("rerun_stability") && j["rerun_stability"].is_number()) {
    e.rerun_stability = j["rerun_stability"].get<double>();
  }
  e.environment_flags = j.value("environment_flags", std::vector<std::string>{});
  e.touched_clauses = j.value("touched_clauses", std::vector<std::string>{});
  e.ambiguous_clauses = j.value("ambiguous_clauses", std::vector<std::string>{});
  return e;
}

std::string root_assertion(std::string_view assertion) {
  const auto nl = assertion.find('\n');
  return util::trim(assertion.substr(0, nl));
}

std::vector<FailureEvidence> gather_evidence(const std::string& run_id, const contract::Contract& contract,
                                             const std::vector<verification::TestResults>& results,
                                             const std::vector<verification::TestSuite>& suites,
                                             const std::map<std::string, verification::FlakinessReport>& reruns,
                                             const std::vector<contract::ClauseId>& touched_clauses,
                                             const std::vector<contract::ClauseId>& ambiguous_clauses) {
  std::vector<FailureEvidence> groups;
  for (const auto& r : results) {
    const auto suite_it = std::find_if(suites.begin(), suites.end(),
                                       [&](const verification::TestSuite& s) { return s.suite_id == r.suite_id; });
    const auto rerun_it = reruns.find(r.suite_id);
    const verification::FlakinessReport* flake = rerun_it == reruns.end() ? nullptr : &rerun_it->second;

    std::vector<std::string> run_flags;
    for (const auto& f : r.environment_flags) {
      if (!util::starts_with(f, "test-error:")) run_flags.push_back(f);
    }

    std::vector<std::string> order;
    std::map<std::string, FailureEvidence> by_root;
    for (const auto* t : r.failures()) {
      const std::string root = root_assertion(t->assertion);
      auto [it, fresh] = by_root.try_emplace(root);
      FailureEvidence& e = it->second;
      if (fresh) {
        order.push_back(root);
        e.run_id = run_id;
        e.suite_id = r.suite_id;
        e.group_key = r.suite_id + "::" + (root.empty() ? t->id : root);
        e.environment_flags = run_flags;
        e.touched_clauses = touched_clauses;
        e.section = "uncovered";
      }
      FailingTest ft;
      ft.test_id = t->id;
      ft.assertion = t->assertion;
      if (suite_it != suites.end()) {
        if (auto link = suite_it->clause_links.find(t->id); link != suite_it->clause_links.end()) {
          ft.clause_ids = link->second;
          ft.contract_coverage =
              !link->second.empty() && std::all_of(link->second.begin(), link->second.end(), [&](const std::string& id) {
                return contract::find_clause(contract, id).has_value();
              });
        }
      }
      for (const auto& id : ft.clause_ids) {
        if (std::find(ambiguous_clauses.begin(), ambiguous_clauses.end(), id) != ambiguous_clauses.end() &&
            std::find(e.ambiguous_clauses.begin(), e.ambiguous_clauses.end(), id) == e.ambiguous_clauses.end()) {
          e.ambiguous_clauses.push_back(id);
        }
        if (e.section == "uncovered") {
          if (auto ref = contract::find_clause(contract, id)) e.section = ref->section;
        }
      }
      if (t->status == verification::TestStatus::error) e.environment_flags.push_back("test-error:" + t->id);
      if (flake) {
        auto f = flake->failing_fraction.find(t->id);
        const double frac = f == flake->failing_fraction.end() ? flake->run_failure_fraction : f->second;
        e.rerun_stability = std::max(e.rerun_stability.value_or(0.0), frac);
      }
      e.failing_tests.push_back(std::move(ft));
    }
    if (order.empty() && !run_flags.empty()) {
      FailureEvidence e;
      e.run_id = run_id;
      e.suite_id = r.suite_id;
      e.group_key = r.suite_id + "::environment";
      e.section = "uncovered";
      e.environment_flags = run_flags;
      e.touched_clauses = touched_clauses;
      if (flake) e.rerun_stability = flake->run_failure_fraction;
      groups.push_back(std::move(e));
      continue;
    }
    for (const auto& root : order) groups.push_back(std::move(by_root[root]));
  }
  return groups;
}

json to_json(const FailureClassification& c) {
  return {{"class", to_string(c.cls)},
          {"confidence", c.confidence},
          {"rationale", c.rationale},
          {"decided_by", to_string(c.decided_by)}};
}

FailureClassification classification_from_json(const json& j) {
  FailureClassification c;
  const auto cls = parse_failure_class(j.at("class").get<std::string>());
  const auto by = parse_decided_by(j.value("decided_by", "rules"));
  if (!cls || !by) throw Error(ErrorCode::parse_error, "classification: unknown class or decider");
  c.cls = *cls;
  c.decided_by = *by;
  c.confidence = j.value("confidence", 0.0);
  c.rationale = j.value("rationale", "");
  return c;
}

RuleOutcome rule_prepass(const FailureEvidence& e, const ArbiterPolicy& policy) {
  RuleOutcome out;
  if (!e.environment_flags.empty() && e.rerun_stability && *e.rerun_stability < policy.noise_threshold) {
    out.candidate = FailureClass::noise;
    out.forced = true;
    out.trace.push_back("environment flags with rerun stability " + std::to_string(*e.rerun_stability) +
                        " below " + std::to_string(policy.noise_threshold));
    return out;
  }
  for (const auto& t : e.failing_tests) {
    std::optional<FailureClass> c;
    if (intersects(t.clause_ids, e.ambiguous_clauses)) {
      c = FailureClass::contract_ambiguity;
      out.trace.push_back(t.test_id + ": linked clause flagged ambiguous");
    } else if (t.contract_coverage == true &&
               (e.touched_clauses.empty() || intersects(t.clause_ids, e.touched_clauses))) {
      c = FailureClass::bug;
      out.trace.push_back(t.test_id + ": violates a clause the change implements");
    } else if (t.contract_coverage == false) {
      c = FailureClass::spec_gap;
      out.trace.push_back(t.test_id + ": asserted behavior has no contract clause");
    } else {
      out.trace.push_back(t.test_id + ": no rule applies");
    }
    if (c && (!out.candidate || precedence(*c) > precedence(*out.candidate))) out.candidate = c;
  }
  return out;
}

AgentOpinion opinion_from_body(const json& body) {
  if (!body.is_object() || !body.contains("class") || !body["class"].is_string()) {
    throw Error(ErrorCode::agent_response_invalid, "classification body lacks class");
  }
  const auto cls = parse_failure_class(body["class"].get<std::string>());
  if (!cls) throw Error(ErrorCode::agent_response_invalid, "unknown failure class " + body["class"].dump());
  const double confidence = body.value("confidence", 0.0);
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    throw Error(ErrorCode::agent_response_invalid, "classification confidence outside [0,1]");
  }
  return {*cls, confidence, body.value("rationale", "")};
}

bool needs_escalation(const std::optional<FailureClass>& rule_candidate, const AgentOpinion& agent,
                      const ArbiterPolicy& policy) {
  if (rule_candidate && *rule_candidate != agent.cls) return true;
  const double confidence = rule_candidate ? std::max(policy.rule_confidence, agent.confidence) : agent.confidence;
  return confidence < policy.escalation_confidence;
}

ArbiterDecision classify(const FailureEvidence& evidence, const ArbiterPolicy& policy,
                         const std::optional<AgentOpinion>& agent) {
  ArbiterDecision d;
  const RuleOutcome rules = rule_prepass(evidence, policy);
  d.rule_candidate = rules.candidate;
  std::string trace;
  for (const auto& line : rules.trace) trace += (trace.empty() ? "" : "; ") + line;

  if (rules.forced) {
    d.classification = {FailureClass::noise, 1.0 - *evidence.rerun_stability, trace, DecidedBy::rules};
    return d;
  }
  if (!agent) {
    if (rules.candidate) {
      d.classification = {*rules.candidate, policy.rule_confidence, trace, DecidedBy::rules};
    } else {
      d.classification = {FailureClass::spec_gap, 0.0, trace, DecidedBy::rules};
      d.escalate = true;
      d.reason = "no rule applies and no agent opinion";
    }
    return d;
  }
  if (rules.candidate && *rules.candidate == agent->cls) {
    d.classification = {agent->cls, std::max(policy.rule_confidence, agent->confidence),
                        agent->rationale.empty() ? trace : agent->rationale, DecidedBy::agent};
  } else {
    d.classification = {agent->cls, agent->confidence, agent->rationale, DecidedBy::agent};
  }
  if (needs_escalation(rules.candidate, *agent, policy)) {
    d.escalate = true;
    d.reason = rules.candidate && *rules.candidate != agent->cls
                   ? "rules say " + std::string(to_string(*rules.candidate)) + ", agent says " +
                         std::string(to_string(agent->cls))
                   : "confidence " + std::to_string(agent->confidence) + " below escalation threshold";
  }
  return d;
}

HumanTicket escalate(const FailureEvidence& evidence, const FailureClassification& proposed, const std::string& reason) {
  HumanTicket t;
  t.run_id = evidence.run_id;
  t.kind = TicketKind::arbiter_escalation;
  t.payload = {{"evidence", to_json(evidence)}, {"proposed", to_json(proposed)}, {"reason", reason}};
  return t;
}

FailureClassification human_classification(FailureClass cls, const std::string& principal) {
  return {cls, 1.0, "operator " + principal + " classified the failure", DecidedBy::human};
}

const CorrectiveRoute& route_for(FailureClass cls) {
  static const std::map<FailureClass, CorrectiveRoute> kRoutes = {
      {FailureClass::bug,
       {FailureClass::bug, "fix implementation; promote regression test", 7, true, true, false, false, false}},
      {FailureClass::spec_gap,
       {FailureClass::spec_gap, "update contract/template; retry", 3, false, false, true, false, false}},
      {FailureClass::noise, {FailureClass::noise, "calibrate verifier or CI", 11, false, false, false, false, true}},
      {FailureClass::contract_ambiguity,
       {FailureClass::contract_ambiguity, "refine contract; restart implementation", 3, false, false, true, true,
        false}},
  };
  return kRoutes.at(cls);
}

FailureClass dominant_class(const std::vector<FailureClassification>& round) {
  if (round.empty()) throw Error(ErrorCode::invalid_argument, "no classifications in round");
  FailureClass best = round.front().cls;
  for (const auto& c : round) {
    if (precedence(c.cls) > precedence(best)) best = c.cls;
  }
  return best;
}

}  // namespace harness::arbiter
