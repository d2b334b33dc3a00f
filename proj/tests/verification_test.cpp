#include <gtest/gtest.h>

#include <chrono>

#include "harness/error.hpp"
#include "harness/verification.hpp"
#include "support.hpp"

using namespace harness;
using namespace harness::verification;
using nlohmann::json;
using testing_support::TempDir;

namespace {

TestSuite sh_suite(const std::string& id, const std::string& script) {
  TestSuite s;
  s.suite_id = id;
  s.command = {"sh", {"run.sh"}, "."};
  s.files = {{"run.sh", script}};
  s.clause_links = {{"t1", {"INV-1"}}, {"t2", {"INV-2"}}};
  s.timeout_seconds = 10;
  return s;
}

// Emits t1 and t2; t2 passes only when the artifact says FIXED.
const char* kTwoTests = R"(#!/bin/sh
echo '{"id":"t1","status":"pass"}' > "$HARNESS_RESULTS"
if grep -q FIXED "$HARNESS_ARTIFACT_DIR/impl.txt"; then
  echo '{"id":"t2","status":"pass"}' >> "$HARNESS_RESULTS"
else
  echo '{"id":"t2","status":"fail","assertion":"expected FIXED"}' >> "$HARNESS_RESULTS"
fi
)";

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an exception";
  return ErrorCode::io_error;
}

}  // namespace

TEST(Suite, PassAndFailAreReportedPerTest) {
  TempDir dir("verify");
  Workspace ws(dir.path() / "ws");
  const TestSuite suite = sh_suite("s1", kTwoTests);
  ws.install_suite(suite);

  ws.install_artifact({{"impl.txt", "broken"}});
  TestResults r = run_suite(ws, suite);
  ASSERT_EQ(r.tests.size(), 2u);
  EXPECT_FALSE(r.all_passed());
  ASSERT_EQ(r.failures().size(), 1u);
  EXPECT_EQ(r.failures()[0]->id, "t2");
  EXPECT_EQ(r.failures()[0]->assertion, "expected FIXED");
  EXPECT_TRUE(r.environment_flags.empty());

  ws.install_artifact({{"impl.txt", "FIXED"}});
  r = run_suite(ws, suite);
  EXPECT_TRUE(r.all_passed());
  EXPECT_EQ(results_from_json(to_json(r)).tests.size(), 2u);
}

TEST(Suite, EnvironmentCarriesAttemptAndFilter) {
  TempDir dir("verify");
  Workspace ws(dir.path() / "ws");
  TestSuite suite = sh_suite("env", R"(printf '{"id":"t1","status":"pass","assertion":"%s/%s"}\n{"id":"t2","status":"pass"}\n' "$HARNESS_CI_ATTEMPT" "$HARNESS_RERUN_INDEX" > "$HARNESS_RESULTS")");
  suite.test_filter = "t1";
  ws.install_suite(suite);
  const TestResults r = run_suite(ws, suite, {4, 2});
  ASSERT_EQ(r.tests.size(), 1u);
  EXPECT_EQ(r.tests[0].assertion, "4/2");
}

TEST(Suite, InfraProblemsBecomeEnvironmentFlags) {
  TempDir dir("verify");
  Workspace ws(dir.path() / "ws");
  TestSuite missing = sh_suite("missing", "exit 0\n");
  ws.install_suite(missing);
  EXPECT_EQ(run_suite(ws, missing).environment_flags, std::vector<std::string>{"missing-results"});

  TestSuite noisy = sh_suite("noisy", R"(printf 'garbage\n{"id":"t1","status":"error"}\n{"id":"t1","status":"pass"}\n' > "$HARNESS_RESULTS")");
  ws.install_suite(noisy);
  const TestResults r = run_suite(ws, noisy);
  EXPECT_EQ(r.environment_flags,
            (std::vector<std::string>{"malformed-results", "test-error:t1", "duplicate-test-id:t1"}));
  EXPECT_FALSE(r.all_passed());
}

TEST(Sandbox, CommandDescriptorsAreConfined) {
  TestSuite s = sh_suite("x", "");
  EXPECT_EQ(command_problem(s), "");
  s.command.program = "bash";
  EXPECT_NE(command_problem(s), "");
  s.command.program = "/bin/sh";
  EXPECT_NE(command_problem(s), "");
  s.command.program = "./bin/runner";
  EXPECT_EQ(command_problem(s), "");
  s.command.program = "sh";
  s.command.args = {"../../etc/passwd"};
  EXPECT_NE(command_problem(s), "");
  s.command.args = {};
  s.command.working_dir = "../..";
  EXPECT_NE(command_problem(s), "");

  TempDir dir("verify");
  Workspace ws(dir.path() / "ws");
  EXPECT_EQ(code_of([&] { run_suite(ws, s); }), ErrorCode::sandbox_violation);
  s.command.working_dir = ".";
  s.files = {{"../evil.sh", "x"}};
  EXPECT_EQ(code_of([&] { ws.install_suite(s); }), ErrorCode::sandbox_violation);
}

TEST(Sandbox, WritesOutsideTheWorkspaceAreDetectedAndRemoved) {
  TempDir dir("verify");
  Workspace ws(dir.path() / "ws");
  const TestSuite s = sh_suite("escape", "echo x > \"$HARNESS_WORKSPACE/../escaped.txt\"\n");
  ws.install_suite(s);
  EXPECT_EQ(code_of([&] { run_suite(ws, s); }), ErrorCode::sandbox_violation);
  EXPECT_FALSE(std::filesystem::exists(dir.path() / "escaped.txt"));
}

TEST(Sandbox, TimeoutKillsTheProcessGroup) {
  TempDir dir("verify");
  Workspace ws(dir.path() / "ws");
  TestSuite s = sh_suite("slow", "sleep 30 & sleep 30\n");
  s.timeout_seconds = 1;
  ws.install_suite(s);
  const auto start = std::chrono::steady_clock::now();
  EXPECT_EQ(code_of([&] { run_suite(ws, s); }), ErrorCode::timeout);
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(10));
}

TEST(Workspace, ResetRestoresInstalledState) {
  TempDir dir("verify");
  Workspace ws(dir.path() / "ws");
  ws.install_artifact({{"src/impl.txt", "v1"}});
  const TestSuite s = sh_suite("mutator", "echo tampered > \"$HARNESS_ARTIFACT_DIR/src/impl.txt\"; touch \"$HARNESS_WORKSPACE/junk\"\n");
  ws.install_suite(s);
  run_suite(ws, s);
  EXPECT_EQ(util::read_file(ws.artifact_dir() / "src/impl.txt"), "tampered\n");
  ws.reset();
  EXPECT_EQ(util::read_file(ws.artifact_dir() / "src/impl.txt"), "v1");
  EXPECT_FALSE(std::filesystem::exists(ws.root() / "junk"));
  EXPECT_TRUE(std::filesystem::exists(ws.suite_dir() / "mutator" / "run.sh"));
}

TEST(Flakiness, FractionsComeFromReruns) {
  TempDir dir("verify");
  Workspace ws(dir.path() / "ws");
  // t2 fails on odd rerun indices only.
  const TestSuite s = sh_suite("flaky", R"(echo '{"id":"t1","status":"pass"}' > "$HARNESS_RESULTS"
if [ $((HARNESS_RERUN_INDEX % 2)) -eq 1 ]; then st=fail; else st=pass; fi
echo "{\"id\":\"t2\",\"status\":\"$st\"}" >> "$HARNESS_RESULTS"
)");
  ws.install_suite(s);
  const FlakinessReport r = rerun_for_noise(ws, s, 4);
  EXPECT_EQ(r.reruns, 4);
  EXPECT_DOUBLE_EQ(r.failing_fraction.at("t1"), 0.0);
  EXPECT_DOUBLE_EQ(r.failing_fraction.at("t2"), 0.5);
  EXPECT_DOUBLE_EQ(r.stability(), 0.5);
  EXPECT_THROW(rerun_for_noise(ws, s, 0), Error);
}

TEST(Flakiness, MissingResultsCountAsRunFailures) {
  TempDir dir("verify");
  Workspace ws(dir.path() / "ws");
  const TestSuite s = sh_suite("silent", "exit 0\n");
  ws.install_suite(s);
  const FlakinessReport r = rerun_for_noise(ws, s, 3);
  EXPECT_DOUBLE_EQ(r.run_failure_fraction, 1.0);
  EXPECT_DOUBLE_EQ(r.stability(), 1.0);
}

TEST(SuiteJson, RoundTripAndValidation) {
  TestSuite s = sh_suite("rt", kTwoTests);
  s.test_filter = "t2";
  EXPECT_EQ(suite_from_json(to_json(s)), s);
  json bad = to_json(s);
  bad["timeout"] = 0;
  EXPECT_THROW(suite_from_json(bad), Error);
  bad.erase("command");
  EXPECT_EQ(code_of([&] { suite_from_body(bad, SuiteOrigin::test_author); }), ErrorCode::agent_response_invalid);
  EXPECT_EQ(suite_from_body(to_json(s), SuiteOrigin::calibration).origin, SuiteOrigin::calibration);
}

TEST(Gates, VerdictFollowsBlockers) {
  EXPECT_EQ(gate_verdict({}), Verdict::pass);
  const auto findings = findings_from_body(
      agents::Role::security_reviewer,
      json{{"findings", {{{"severity", "major"}, {"text", "a"}}, {{"severity", "minor"}, {"text", "b"}}}}});
  EXPECT_EQ(findings[0].gate_role, "security_reviewer");
  EXPECT_EQ(gate_verdict(findings), Verdict::pass);
  auto blocked = findings;
  blocked.push_back(finding_from_json(json{{"severity", "blocker"}, {"text", "c"}, {"clause_id", "AUTH-1"}}));
  EXPECT_EQ(gate_verdict(blocked), Verdict::fail);
  EXPECT_THROW(findings_from_body(agents::Role::qa_tester, json::object()), Error);
  EXPECT_THROW(finding_from_json(json{{"severity", "fatal"}, {"text", "x"}}), Error);
}

TEST(Gates, ReviewGateDispatchesWithChecklist) {
  auto scenario = std::make_shared<agents::ScriptedScenario>();
  scenario->scenario_id = "gate";
  scenario->responses["architecture_reviewer:*:*"] = {
      {"kind", "review_findings"}, {"body", {{"findings", {{{"severity", "blocker"}, {"text", "inline style"}}}}}}};
  agents::ScriptedBackend backend(scenario);
  const auto findings = run_review_gate(agents::Role::architecture_reviewer, testing_support::sample_contract(), {},
                                        {"no inline styles"}, backend, "run-0001", "run-0001/j5", 1, 5);
  ASSERT_EQ(findings.size(), 1u);
  EXPECT_EQ(gate_verdict(findings), Verdict::fail);
  EXPECT_THROW(run_review_gate(agents::Role::implementer, testing_support::sample_contract(), {}, {}, backend,
                               "run-0001", "j", 1, 7),
               Error);
}

TEST(Regression, PromotionIsIdempotentAndScoped) {
  const TestSuite s = sh_suite("suite-a", kTwoTests);
  RegressionRegistry reg = promote_regression("t2", s, "Orders", {});
  reg = promote_regression("t2", s, "Orders", reg);
  ASSERT_EQ(reg.size(), 1u);
  const TestSuite promoted = reg.suites_for("Orders").at(0);
  EXPECT_EQ(promoted.suite_id, regression_suite_id(s, "t2"));
  EXPECT_EQ(promoted.origin, SuiteOrigin::regression_set);
  EXPECT_EQ(promoted.test_filter, "t2");
  EXPECT_EQ(promoted.clause_links.size(), 1u);
  EXPECT_TRUE(reg.suites_for("Billing").empty());
  EXPECT_EQ(code_of([&] { promote_regression("t9", s, "Orders", reg); }), ErrorCode::unknown_test);
}

TEST(Regression, PromotedSuiteRunsOnlyItsTest) {
  TempDir dir("verify");
  Workspace ws(dir.path() / "ws");
  const TestSuite s = sh_suite("suite-a", kTwoTests);
  const TestSuite promoted = promote_regression("t2", s, "Orders", {}).suites_for("Orders").at(0);
  ws.install_artifact({{"impl.txt", "FIXED"}});
  ws.install_suite(promoted);
  const TestResults r = run_suite(ws, promoted);
  ASSERT_EQ(r.tests.size(), 1u);
  EXPECT_EQ(r.tests[0].id, "t2");
  EXPECT_TRUE(r.all_passed());
}
