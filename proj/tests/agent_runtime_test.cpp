#include <gtest/gtest.h>

#include "harness/agent_runtime.hpp"
#include "harness/error.hpp"
#include "support.hpp"

using namespace harness;
using namespace harness::agents;
using nlohmann::json;

namespace {

PayloadContext context(int step) {
  PayloadContext ctx;
  ctx.run_id = "run-0001";
  ctx.job_id = "run-0001/j1";
  ctx.step = step;
  ctx.contract = testing_support::sample_contract();
  ctx.specialization_checklists = {"check idempotency"};
  ctx.candidates = {
      {"raw_issue", "issue", "harness", "Create orders"},
      {"interface_description", "iface", "harness", "POST /orders"},
      {"code_artifact", "run-0001/j2", "implementer", {{"files", {{"impl.py", "IMPL"}}}}},
      {"test_results", "ci-1", "harness", json::array()},
      {"own_prior_suite", "run-0001/j3", "test_author", {{"suite_id", "s1"}}},
      {"own_prior_suite", "run-0001/j4", "implementer", {{"suite_id", "forged"}}},
      {"transcript", "run-0001/j2", "implementer", "I think..."},
      {"review_findings", "rev", "security_reviewer", json::array()},
      {"failure_evidence", "ev", "harness", json::object()},
  };
  return ctx;
}

std::vector<std::string> input_kinds(const JobPayload& p) {
  std::vector<std::string> out;
  for (const auto& in : p.inputs) out.push_back(in.kind + "/" + in.owner);
  return out;
}

class CountingBackend : public Backend {
 public:
  int malformed_before_success = 0;
  ResponseKind kind = ResponseKind::code_artifact;
  int calls = 0;
  std::string name() const override { return "counting"; }
  AgentResponse invoke(const JobPayload& p) override {
    ++calls;
    if (calls <= malformed_before_success) throw Error(ErrorCode::malformed_output, "garbled");
    return {p.job_id, p.role, kind, json{{"n", calls}}, "transcript"};
  }
};

JobPayload implementer_payload() {
  JobPayload p;
  p.job_id = "run-0001/j9";
  p.run_id = "run-0001";
  p.role = Role::implementer;
  p.step = 7;
  return p;
}

}  // namespace

TEST(Payload, TestAuthorSeesOnlyInterfaceAndOwnSuites) {
  const JobPayload p = build_payload(context(8), Role::test_author, 1);
  EXPECT_EQ(input_kinds(p), (std::vector<std::string>{"interface_description/harness", "own_prior_suite/test_author"}));
  EXPECT_TRUE(audit_payload(p).empty());
  EXPECT_TRUE(p.specialization_checklists.empty());
  const std::string forbidden = json(p.forbidden).dump();
  EXPECT_NE(forbidden.find("excluded code_artifact from implementer"), std::string::npos);
  EXPECT_NE(forbidden.find("excluded transcript from implementer"), std::string::npos);
}

TEST(Payload, ImplementerSeesResultsButNotSuitesOrTranscripts) {
  const JobPayload p = build_payload(context(7), Role::implementer, 2);
  EXPECT_EQ(input_kinds(p),
            (std::vector<std::string>{"interface_description/harness", "code_artifact/implementer",
                                      "test_results/harness", "review_findings/security_reviewer"}));
  EXPECT_TRUE(audit_payload(p).empty());
}

TEST(Payload, ImplementerGetsOwnArtifactBack) {
  PayloadContext ctx = context(7);
  ctx.candidates[2].owner = "implementer";
  ctx.candidates.push_back({"code_artifact", "x", "test_author", json::object()});
  const JobPayload p = build_payload(ctx, Role::implementer, 2);
  const auto kinds = input_kinds(p);
  EXPECT_NE(std::find(kinds.begin(), kinds.end(), "code_artifact/implementer"), kinds.end());
  EXPECT_EQ(std::find(kinds.begin(), kinds.end(), "code_artifact/test_author"), kinds.end());
}

TEST(Payload, InterfaceIsSynthesizedFromSurfacesWhenMissing) {
  PayloadContext ctx = context(8);
  ctx.candidates.erase(ctx.candidates.begin() + 1);
  const JobPayload p = build_payload(ctx, Role::test_author, 1);
  ASSERT_FALSE(p.inputs.empty());
  EXPECT_EQ(p.inputs.back().kind, "interface_description");
  EXPECT_EQ(p.inputs.back().content, json::array({"api_endpoint POST /orders"}));
}

TEST(Payload, ReviewersGetChecklistsAndCode) {
  const JobPayload p = build_payload(context(14), Role::security_reviewer, 1);
  EXPECT_EQ(p.specialization_checklists, std::vector<std::string>{"check idempotency"});
  EXPECT_EQ(input_kinds(p), std::vector<std::string>{"code_artifact/implementer"});
}

TEST(Payload, StepAndAttemptAreChecked) {
  EXPECT_THROW(build_payload(context(7), Role::test_author, 1), Error);
  EXPECT_THROW(build_payload(context(8), Role::test_author, 0), Error);
  for (Role r : all_roles()) {
    int allowed = 0;
    for (int step = 0; step <= 20; ++step) allowed += role_permitted_at(r, step) ? 1 : 0;
    EXPECT_GE(allowed, 1) << to_string(r);
  }
}

TEST(Payload, AuditCatchesSmuggledInputs) {
  JobPayload p = build_payload(context(8), Role::test_author, 1);
  p.inputs.push_back({"code_artifact", "run-0001/j2", "implementer", "IMPL"});
  p.inputs.push_back({"own_prior_suite", "j5", "implementer", json::object()});
  p.inputs.push_back({"transcript", "j6", "arbiter", "..."});
  p.inputs.push_back({"interface_description", "x", "harness", {{"raw_transcript", "leak"}}});
  EXPECT_EQ(audit_payload(p).size(), 7u);
}

TEST(Payload, JsonRoundTrip) {
  memory::MemoryDocument doc;
  doc.permanent.push_back({"d1", "2026-01-01T00:00:00Z", memory::EntryKind::decision, "cents", "run-0001"});
  PayloadContext ctx = context(14);
  ctx.memory = &doc;
  const JobPayload p = build_payload(ctx, Role::backend_reviewer, 3);
  ASSERT_EQ(p.memory_excerpts.size(), 1u);
  EXPECT_EQ(to_json(payload_from_json(to_json(p))), to_json(p));
  EXPECT_THROW(payload_from_json(json{{"job_id", "x"}}), Error);
}

TEST(Scenario, LookupPrefersTheMostSpecificKey) {
  ScriptedScenario s;
  s.responses["implementer:2:7"] = "exact";
  s.responses["implementer:2:*"] = "attempt";
  s.responses["implementer:*:7"] = "step";
  s.responses["implementer:*:*"] = "any";
  EXPECT_EQ(*s.lookup(Role::implementer, 2, 7), "exact");
  s.responses.erase("implementer:2:7");
  EXPECT_EQ(*s.lookup(Role::implementer, 2, 7), "attempt");
  EXPECT_EQ(*s.lookup(Role::implementer, 3, 7), "step");
  s.responses.erase("implementer:*:7");
  EXPECT_EQ(*s.lookup(Role::implementer, 3, 7), "any");
  EXPECT_EQ(s.lookup(Role::arbiter, 1, 12), nullptr);
}

TEST(Scenario, ScriptedBackendReplaysAndReportsGaps) {
  auto s = std::make_shared<ScriptedScenario>();
  s->scenario_id = "tiny";
  s->responses["implementer:*:*"] = {{"kind", "code_artifact"}, {"body", {{"files", json::object()}}},
                                     {"transcript", "thinking"}};
  ScriptedBackend backend(s);
  const AgentResponse r = backend.invoke(implementer_payload());
  EXPECT_EQ(r.kind, ResponseKind::code_artifact);
  EXPECT_EQ(r.raw_transcript, "thinking");

  JobPayload other = implementer_payload();
  other.role = Role::arbiter;
  other.step = 12;
  try {
    backend.invoke(other);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::scenario_incomplete);
    EXPECT_NE(std::string(e.what()).find("arbiter:1:12"), std::string::npos);
  }
}

TEST(Scenario, BundledScenariosParse) {
  for (const auto& sub : {"corpus", "labeled"}) {
    for (const auto& f : testing_support::scenario_files(sub)) {
      EXPECT_NO_THROW(load_scenario(f)) << f;
    }
  }
  const ScriptedScenario s = load_scenario(testing_support::scenario_path("payments-replay.json"));
  EXPECT_EQ(s.scenario_id, "payments-replay");
  EXPECT_EQ(s.post_merge_reports.size(), 2u);
}

TEST(Dispatch, RetriesMalformedOutputThenGivesUp) {
  CountingBackend b;
  b.malformed_before_success = 2;
  EXPECT_EQ(dispatch(implementer_payload(), b, 2).body["n"], 3);

  CountingBackend worse;
  worse.malformed_before_success = 3;
  try {
    dispatch(implementer_payload(), worse, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::malformed_after_retries);
  }
  EXPECT_EQ(worse.calls, 3);
}

TEST(Dispatch, RoleKindClosureIsEnforced) {
  CountingBackend b;
  b.kind = ResponseKind::test_suite;
  try {
    dispatch(implementer_payload(), b, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::role_violation);
  }
}

TEST(Dispatch, RepeatedJobIdReturnsCachedResponse) {
  CountingBackend b;
  Dispatcher d;
  const auto first = d.dispatch(implementer_payload(), b);
  const auto second = d.dispatch(implementer_payload(), b);
  EXPECT_EQ(b.calls, 1);
  EXPECT_EQ(first.body, second.body);
}

TEST(Wire, PromptRendersEveryPlaceholder) {
  WireConfig cfg;
  cfg.base_url = "http://127.0.0.1:1";
  cfg.templates_dir = testing_support::bundled_data() / "prompts";
  WireBackend backend(cfg);
  const std::string prompt = backend.render_prompt(build_payload(context(8), Role::test_author, 1));
  EXPECT_EQ(prompt.find("{{"), std::string::npos);
  EXPECT_NE(prompt.find("Orders"), std::string::npos);
}

TEST(Wire, UnreachableEndpointIsReported) {
  WireConfig cfg;
  cfg.base_url = "http://127.0.0.1:1";
  cfg.timeout_seconds = 2;
  WireBackend backend(cfg);
  try {
    backend.invoke(implementer_payload());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::backend_unreachable);
  }
}
