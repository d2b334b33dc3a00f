#include <gtest/gtest.h>

#include "harness/compiler.hpp"
#include "harness/error.hpp"
#include "support.hpp"

using namespace harness;
using namespace harness::compiler;
using contract::Contract;
using nlohmann::json;
using testing_support::sample_contract;

namespace {

RawIssue issue(std::string title, std::string body, std::vector<std::string> labels = {}) {
  return {"NG-1", std::move(title), std::move(body), std::move(labels), "ops@example.com"};
}

memory::SpecializationRecord payments_record() {
  memory::SpecializationRecord r;
  r.domain = "payments";
  r.trigger_terms = {{"payment", 3}, {"stripe", 3}, {"invoice", 2}, {"amount", 1}, {"refund", 1}};
  r.injected_clauses = {{"SPEC-1", "client-reported payment status is never trusted", contract::Severity::must,
                         contract::Origin::specialization}};
  r.review_checklist_items = {"verify with Stripe before writing"};
  r.min_confidence = 0.0;
  return r;
}

json minimal_draft() {
  return {{"contract",
           {{"module_name", "Billing"},
            {"version", "1.0.0"},
            {"surfaces", json::array({{{"kind", "api_endpoint"}, {"method_or_trigger", "POST"}, {"path_or_name", "/pay"},
                                       {"side_effects", json::array({"charge the card"})}}})},
            {"invariants", json::array({{{"text", "charges must be idempotent"}, {"origin", "issue"}},
                                        {{"text", "receipts are emailed"}}})},
            {"acceptance_criteria", json::array({{{"text", "a retry charges once"}, {"linked_invariants", {"INV-1"}}}})}}}};
}

std::vector<std::string> lint_ids(const Contract& c) {
  std::vector<std::string> out;
  for (const auto& f : lint_ambiguity(c)) out.push_back(f.clause_id + ":" + f.rule);
  return out;
}

}  // namespace

TEST(Specializations, ConfidenceIsWeightedHitFraction) {
  const auto scored = memory::match_specializations(issue("Pay an invoice", "Customers pay with Stripe"), {payments_record()});
  ASSERT_EQ(scored.size(), 1u);
  // "pay" is not "payment"; stripe 3 + invoice 2 of 10
  EXPECT_DOUBLE_EQ(scored[0].confidence, 0.5);

  const auto high = memory::match_specializations(
      issue("In-app payments", "Stripe payment for an invoice amount", {"payments"}), {payments_record()});
  EXPECT_DOUBLE_EQ(high[0].confidence, 0.9);
}

TEST(Specializations, ThresholdGatesSelection) {
  const RawIssue i = issue("Pay an invoice", "Customers pay with Stripe");
  EXPECT_TRUE(select_specializations(i, {payments_record()}, 0.7).empty());
  EXPECT_EQ(select_specializations(i, {payments_record()}, 0.5).size(), 1u);
  auto strict = payments_record();
  strict.min_confidence = 0.6;
  EXPECT_TRUE(select_specializations(i, {strict}, 0.5).empty());
  EXPECT_THROW(select_specializations(i, {}, 1.5), Error);
}

TEST(Specializations, BundledPaymentsRecordSelectsTheReplayIssue) {
  const auto registry = memory::load_registry(testing_support::bundled_data() / "specializations");
  const json scenario = testing_support::load_json(testing_support::scenario_path("payments-replay.json"));
  const RawIssue i = issue_from_json(scenario["issue"]);
  const auto chosen = select_specializations(i, registry, 0.7);
  ASSERT_EQ(chosen.size(), 1u);
  EXPECT_EQ(chosen[0].record.domain, "payments");
  EXPECT_GE(chosen[0].confidence, 0.7);
}

TEST(Severity, ImperativeWordingIsMust) {
  EXPECT_EQ(default_severity("The server must verify"), contract::Severity::must);
  EXPECT_EQ(default_severity("paid is never reverted"), contract::Severity::must);
  EXPECT_EQ(default_severity("only owners may read"), contract::Severity::must);
  EXPECT_EQ(default_severity("receipts are emailed"), contract::Severity::should);
  EXPECT_EQ(default_severity("mustard is served"), contract::Severity::should);
}

TEST(Lint, FlagsEachRuleFamily) {
  Contract c = sample_contract();
  c.invariants = {{"INV-1", "retry as needed", contract::Severity::must, contract::Origin::issue},
                  {"INV-2", "export CSV and/or JSON", contract::Severity::must, contract::Origin::issue},
                  {"INV-3", "it is cached", contract::Severity::must, contract::Origin::issue},
                  {"INV-4", "lock after several failures", contract::Severity::must, contract::Origin::issue},
                  {"INV-5", "totals are integer cents", contract::Severity::must, contract::Origin::issue},
                  {"INV-6", "the cache keeps it warm", contract::Severity::must, contract::Origin::issue}};
  c.acceptance_criteria[0].linked_invariants = {"INV-1"};
  const auto ids = lint_ids(c);
  const std::vector<std::string> expected = {"INV-1:vague-qualifier", "INV-2:unresolved-disjunction",
                                             "INV-3:undefined-referent", "INV-4:vague-quantifier"};
  EXPECT_EQ(ids, expected);
}

TEST(Lint, IgnoresDescriptiveSectionsAndWordFragments) {
  Contract c = sample_contract();
  c.out_of_scope[0].text = "refunds as needed";     // not obligation-bearing
  c.invariants[0].text = "the handsome total is positive";  // "some" inside a word
  EXPECT_TRUE(lint_ambiguity(c).empty());
}

TEST(Lint, ExtraRulesAndAgentFindingsMergeOncePerClause) {
  Contract c = sample_contract();
  c.invariants[0].text = "totals are shown promptly";
  const LintRule promptly{"calibrated-1", {"promptly"}, {"under 1 s", "same day"}, "give a bound", false};
  const AmbiguityFinding agent{"INV-1", {"a", "b"}, "", "agent"};
  const AmbiguityFinding other{"INV-2", {"a", "b"}, "", "agent"};
  const auto found = lint_ambiguity(c, {promptly}, {agent, other});
  ASSERT_EQ(found.size(), 2u);
  EXPECT_EQ(found[0].clause_id, "INV-1");
  EXPECT_EQ(found[0].rule, "calibrated-1");
  EXPECT_EQ(found[1].clause_id, "INV-2");
}

TEST(Pass1, AssignsIdsOriginsAndInjectsTemplates) {
  const std::vector<memory::ScoredSpecialization> specs = {{payments_record(), 0.9}};
  const Contract c = accept_pass1_draft(issue("Pay", "pay an invoice"), specs, minimal_draft());
  EXPECT_EQ(c.status, contract::Status::draft_pass1);
  ASSERT_EQ(c.invariants.size(), 3u);
  EXPECT_EQ(c.invariants[0].id, "INV-1");
  EXPECT_EQ(c.invariants[0].severity, contract::Severity::must);
  EXPECT_EQ(c.invariants[0].origin, contract::Origin::issue);
  EXPECT_EQ(c.invariants[1].origin, contract::Origin::pass1_inferred);
  EXPECT_EQ(c.invariants[1].severity, contract::Severity::should);
  EXPECT_EQ(c.invariants[2].text, "client-reported payment status is never trusted");
  EXPECT_EQ(c.invariants[2].origin, contract::Origin::specialization);
  ASSERT_EQ(c.surfaces[0].side_effects.size(), 1u);
  EXPECT_FALSE(c.surfaces[0].side_effects[0].id.empty());
  EXPECT_TRUE(contract::validate_contract(c).empty());
}

TEST(Pass1, SpecializationOriginMustMatchATemplate) {
  json body = minimal_draft();
  body["contract"]["invariants"][1]["origin"] = "specialization";
  const Contract c = accept_pass1_draft(issue("x", "y"), {}, body);
  EXPECT_EQ(c.invariants[1].origin, contract::Origin::pass1_inferred);
}

TEST(Pass1, RejectsUnusableDrafts) {
  const auto code = [](const RawIssue& i, const json& body) {
    try {
      accept_pass1_draft(i, {}, body);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::io_error;
  };
  EXPECT_EQ(code(issue("x", "  "), minimal_draft()), ErrorCode::empty_issue);
  EXPECT_EQ(code(issue("x", "y"), json{{"text", "no contract"}}), ErrorCode::agent_response_invalid);
  json gaps = minimal_draft();
  gaps["contract"]["known_gaps"] = json::array({{{"id", "GAP-1"}, {"text", "t"}}});
  EXPECT_EQ(code(issue("x", "y"), gaps), ErrorCode::agent_response_invalid);
  json wrong = minimal_draft();
  wrong["contract"]["invariants"] = "all good";
  EXPECT_EQ(code(issue("x", "y"), wrong), ErrorCode::agent_response_invalid);
}

TEST(Pass1, RetriesUntilADraftParses) {
  int calls = 0;
  const Contract c = compile_pass1(issue("x", "y"), {}, [&](int attempt) {
    ++calls;
    return attempt < 3 ? json{{"garbage", true}} : minimal_draft();
  }, 2);
  EXPECT_EQ(calls, 3);
  EXPECT_EQ(c.module_name, "Billing");
  EXPECT_THROW(compile_pass1(issue("x", "y"), {}, [](int) { return json::object(); }, 1), Error);
}

TEST(Pass2, RemovesAndRewritesWithoutAdding) {
  const Contract draft = sample_contract();
  const json body = {{"remove", json::array({{{"id", "INV-3"}, {"reason", "not in the issue"}}})},
                     {"rewrite", json::array({{{"id", "INV-1"}, {"text", "an order total is at least 0 cents"}}})}};
  const Pass2Result r = apply_refinement(draft, body);
  EXPECT_EQ(r.contract.status, contract::Status::refined_pass2);
  ASSERT_EQ(r.removals.size(), 1u);
  EXPECT_EQ(r.removals[0].reason, "not in the issue");
  EXPECT_EQ(r.contract.invariants[0].id, "INV-1");
  EXPECT_EQ(r.contract.invariants[0].text, "an order total is at least 0 cents");
  const auto before = testing_support::sorted_ids(draft);
  const auto after = testing_support::sorted_ids(r.contract);
  EXPECT_TRUE(std::includes(before.begin(), before.end(), after.begin(), after.end()));
  EXPECT_EQ(after.size() + 1, before.size());
}

TEST(Pass2, RemovingALinkedInvariantDropsTheLink) {
  const Pass2Result r = apply_refinement(sample_contract(), {{"remove", json::array({"INV-2"})}});
  EXPECT_TRUE(r.contract.acceptance_criteria[0].linked_invariants.empty());
}

TEST(Pass2, AnyAdditionIsAMonotonicityViolation) {
  const Contract draft = sample_contract();
  const auto code = [&](const json& body) {
    try {
      apply_refinement(draft, body);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::io_error;
  };
  EXPECT_EQ(code({{"add", json::array({{{"text", "new rule"}}})}}), ErrorCode::monotonicity_violation);
  EXPECT_EQ(code({{"rewrite", json::array({{{"id", "INV-77"}, {"text", "sneaky"}}})}}), ErrorCode::monotonicity_violation);
  EXPECT_EQ(code({{"remove", json::array({"INV-77"})}}), ErrorCode::agent_response_invalid);
  EXPECT_EQ(code({{"reorder", true}}), ErrorCode::agent_response_invalid);
}

TEST(Pass2, RequiresADraftAndRecordsFindings) {
  Contract refined = sample_contract();
  refined.status = contract::Status::refined_pass2;
  EXPECT_THROW(apply_refinement(refined, json::object()), Error);

  Contract vague = sample_contract();
  vague.invariants[1].text = "orders are deduplicated as needed";
  const Pass2Result r = apply_refinement(vague, json::object());
  ASSERT_EQ(r.findings.size(), 1u);
  EXPECT_EQ(r.findings[0].clause_id, "INV-2");
  EXPECT_GE(r.findings[0].interpretations.size(), 2u);
}

TEST(Pass2, CompileRetriesRejectedRefinements) {
  int calls = 0;
  const Pass2Result r = compile_pass2(sample_contract(), [&](int attempt) {
    ++calls;
    return attempt == 1 ? json{{"add", json::array({"x"})}} : json{{"remove", json::array({"INV-3"})}};
  }, 2);
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(r.rejected_attempts, 1);
  try {
    compile_pass2(sample_contract(), [](int) { return json{{"add", json::array({"x"})}}; }, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::monotonicity_violation);
  }
}
