#include <gtest/gtest.h>

#include "harness/arbiter.hpp"
#include "harness/error.hpp"
#include "support.hpp"

using namespace harness;
using namespace harness::arbiter;
using nlohmann::json;

namespace {

FailingTest failing(std::string id, std::vector<std::string> clauses, std::optional<bool> coverage) {
  return {std::move(id), "assert failed", std::move(clauses), coverage};
}

FailureEvidence evidence(std::vector<FailingTest> tests) {
  FailureEvidence e;
  e.run_id = "run-0001";
  e.group_key = "s1::assert failed";
  e.suite_id = "s1";
  e.section = "invariants";
  e.failing_tests = std::move(tests);
  return e;
}

verification::TestResults results(std::string suite, std::vector<verification::TestOutcome> tests,
                                  std::vector<std::string> flags = {}) {
  verification::TestResults r;
  r.suite_id = std::move(suite);
  r.tests = std::move(tests);
  r.environment_flags = std::move(flags);
  return r;
}

}  // namespace

TEST(RulePrepass, EachRuleFiresOnItsOwnEvidence) {
  const ArbiterPolicy policy;
  EXPECT_EQ(rule_prepass(evidence({failing("t", {"INV-1"}, true)}), policy).candidate, FailureClass::bug);
  EXPECT_EQ(rule_prepass(evidence({failing("t", {}, false)}), policy).candidate, FailureClass::spec_gap);
  EXPECT_EQ(rule_prepass(evidence({failing("t", {}, std::nullopt)}), policy).candidate, std::nullopt);

  FailureEvidence amb = evidence({failing("t", {"INV-2"}, true)});
  amb.ambiguous_clauses = {"INV-2"};
  EXPECT_EQ(rule_prepass(amb, policy).candidate, FailureClass::contract_ambiguity);

  FailureEvidence flaky = evidence({failing("t", {"INV-1"}, true)});
  flaky.environment_flags = {"test-error:t"};
  flaky.rerun_stability = 0.1;
  const RuleOutcome forced = rule_prepass(flaky, policy);
  EXPECT_EQ(forced.candidate, FailureClass::noise);
  EXPECT_TRUE(forced.forced);
  flaky.rerun_stability = 0.2;  // threshold is exclusive
  EXPECT_EQ(rule_prepass(flaky, policy).candidate, FailureClass::bug);
}

TEST(RulePrepass, TouchedClausesGateTheBugRule) {
  FailureEvidence e = evidence({failing("t", {"INV-1"}, true)});
  e.touched_clauses = {"INV-3"};
  EXPECT_EQ(rule_prepass(e, {}).candidate, std::nullopt);
  e.touched_clauses = {"INV-3", "INV-1"};
  EXPECT_EQ(rule_prepass(e, {}).candidate, FailureClass::bug);
}

TEST(RulePrepass, StrongestCandidateWinsAcrossTests) {
  FailureEvidence e = evidence({failing("a", {"INV-1"}, true), failing("b", {}, false)});
  EXPECT_EQ(rule_prepass(e, {}).candidate, FailureClass::spec_gap);
  EXPECT_EQ(rule_prepass(e, {}).trace.size(), 2u);
}

TEST(Classify, AgreementKeepsTheAgentAsDecider) {
  const auto d = classify(evidence({failing("t", {"INV-1"}, true)}), {}, AgentOpinion{FailureClass::bug, 0.7, "why"});
  EXPECT_FALSE(d.escalate);
  EXPECT_EQ(d.classification.cls, FailureClass::bug);
  EXPECT_EQ(d.classification.decided_by, DecidedBy::agent);
  EXPECT_DOUBLE_EQ(d.classification.confidence, 0.8);
}

TEST(Classify, DisagreementEscalates) {
  const auto d =
      classify(evidence({failing("t", {"INV-1"}, true)}), {}, AgentOpinion{FailureClass::spec_gap, 0.99, ""});
  EXPECT_TRUE(d.escalate);
  EXPECT_EQ(d.rule_candidate, FailureClass::bug);
  EXPECT_NE(d.reason.find("rules say bug"), std::string::npos);
}

TEST(Classify, LowConfidenceWithoutRuleEscalates) {
  const FailureEvidence e = evidence({failing("t", {}, std::nullopt)});
  EXPECT_TRUE(classify(e, {}, AgentOpinion{FailureClass::noise, 0.45, ""}).escalate);
  EXPECT_FALSE(classify(e, {}, AgentOpinion{FailureClass::noise, 0.6, ""}).escalate);
  const auto alone = classify(e, {}, std::nullopt);
  EXPECT_TRUE(alone.escalate);
  EXPECT_EQ(alone.classification.decided_by, DecidedBy::rules);
}

TEST(Classify, ForcedNoiseIgnoresTheAgent) {
  FailureEvidence e = evidence({failing("t", {"INV-1"}, true)});
  e.environment_flags = {"infra-exit:127"};
  e.rerun_stability = 0.0;
  const auto d = classify(e, {}, AgentOpinion{FailureClass::bug, 1.0, ""});
  EXPECT_EQ(d.classification.cls, FailureClass::noise);
  EXPECT_EQ(d.classification.decided_by, DecidedBy::rules);
  EXPECT_FALSE(d.escalate);
}

TEST(Classify, OpinionBodiesAreValidated) {
  EXPECT_EQ(opinion_from_body(json{{"class", "spec_gap"}, {"confidence", 0.5}}).cls, FailureClass::spec_gap);
  EXPECT_THROW(opinion_from_body(json{{"class", "typo"}}), Error);
  EXPECT_THROW(opinion_from_body(json{{"class", "bug"}, {"confidence", 1.5}}), Error);
  EXPECT_THROW(opinion_from_body(json::array()), Error);
}

TEST(Routes, TableMatchesTheCorrectiveResponses) {
  struct Expected {
    FailureClass cls;
    int next_step;
    bool retry, promote, contract_update, discard, calibrate;
  };
  const std::vector<Expected> table = {
      {FailureClass::bug, 7, true, true, false, false, false},
      {FailureClass::spec_gap, 3, false, false, true, false, false},
      {FailureClass::noise, 11, false, false, false, false, true},
      {FailureClass::contract_ambiguity, 3, false, false, true, true, false},
  };
  ASSERT_EQ(all_classes().size(), table.size());
  for (const auto& x : table) {
    const CorrectiveRoute& r = route_for(x.cls);
    EXPECT_EQ(r.cls, x.cls);
    EXPECT_EQ(r.next_step, x.next_step) << to_string(x.cls);
    EXPECT_EQ(r.retry_implementation, x.retry) << to_string(x.cls);
    EXPECT_EQ(r.promote_regression, x.promote) << to_string(x.cls);
    EXPECT_EQ(r.contract_update, x.contract_update) << to_string(x.cls);
    EXPECT_EQ(r.discard_artifact, x.discard) << to_string(x.cls);
    EXPECT_EQ(r.calibrate_verifier, x.calibrate) << to_string(x.cls);
  }
}

TEST(Routes, DominantClassPrefersContractWork) {
  auto c = [](FailureClass cls) { return FailureClassification{cls, 1.0, "", DecidedBy::rules}; };
  EXPECT_EQ(dominant_class({c(FailureClass::noise), c(FailureClass::bug)}), FailureClass::bug);
  EXPECT_EQ(dominant_class({c(FailureClass::bug), c(FailureClass::spec_gap)}), FailureClass::spec_gap);
  EXPECT_EQ(dominant_class({c(FailureClass::spec_gap), c(FailureClass::contract_ambiguity)}),
            FailureClass::contract_ambiguity);
  EXPECT_THROW(dominant_class({}), Error);
}

TEST(Evidence, GroupsFailuresBySuiteAndRootAssertion) {
  const contract::Contract c = testing_support::sample_contract();
  verification::TestSuite suite;
  suite.suite_id = "s1";
  suite.clause_links = {{"a", {"INV-1"}}, {"b", {"INV-1"}}, {"c", {}}, {"d", {"INV-9"}}};
  using verification::TestStatus;
  const auto r = results("s1", {{"a", TestStatus::fail, "total negative\nat line 3", 0},
                                {"b", TestStatus::fail, "total negative\nat line 9", 0},
                                {"c", TestStatus::fail, "deposit missing", 0},
                                {"d", TestStatus::pass, "", 0},
                                {"e", TestStatus::error, "boom", 0}});
  const auto groups = gather_evidence("run-0001", c, {r}, {suite}, {}, {}, {"INV-1"});
  ASSERT_EQ(groups.size(), 3u);
  EXPECT_EQ(groups[0].group_key, "s1::total negative");
  EXPECT_EQ(groups[0].failing_tests.size(), 2u);
  EXPECT_EQ(groups[0].section, "invariants");
  EXPECT_EQ(groups[0].ambiguous_clauses, std::vector<std::string>{"INV-1"});
  EXPECT_EQ(groups[1].failing_tests[0].contract_coverage, false);
  EXPECT_EQ(groups[1].section, "uncovered");
  EXPECT_EQ(groups[2].failing_tests[0].contract_coverage, std::nullopt);
  EXPECT_EQ(groups[2].environment_flags, std::vector<std::string>{"test-error:e"});
  EXPECT_EQ(evidence_from_json(to_json(groups[0])), groups[0]);
}

TEST(Evidence, InfraFailureWithoutTestsIsOneGroup) {
  verification::FlakinessReport flake;
  flake.suite_id = "s1";
  flake.reruns = 5;
  flake.run_failure_fraction = 0.0;
  const auto groups = gather_evidence("run-0001", testing_support::sample_contract(),
                                      {results("s1", {}, {"missing-results"})}, {}, {{"s1", flake}}, {}, {});
  ASSERT_EQ(groups.size(), 1u);
  EXPECT_EQ(groups[0].group_key, "s1::environment");
  EXPECT_EQ(groups[0].rerun_stability, 0.0);
  EXPECT_EQ(rule_prepass(groups[0], {}).candidate, FailureClass::noise);
}

TEST(Escalation, TicketCarriesEvidenceAndProposal) {
  const FailureEvidence e = evidence({failing("t", {}, std::nullopt)});
  const FailureClassification proposed{FailureClass::noise, 0.45, "flaky", DecidedBy::agent};
  const HumanTicket t = escalate(e, proposed, "low confidence");
  EXPECT_EQ(t.kind, TicketKind::arbiter_escalation);
  EXPECT_EQ(t.run_id, "run-0001");
  EXPECT_EQ(classification_from_json(t.payload["proposed"]), proposed);
  const auto human = human_classification(FailureClass::bug, "lead");
  EXPECT_EQ(human.decided_by, DecidedBy::human);
  EXPECT_DOUBLE_EQ(human.confidence, 1.0);
}
