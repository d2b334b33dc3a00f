#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness/agent_runtime.hpp"
#include "harness/contract.hpp"

namespace harness::verification {

enum class SuiteOrigin { test_author, regression_set, calibration };

std::string_view to_string(SuiteOrigin o);
std::optional<SuiteOrigin> parse_suite_origin(std::string_view s);

struct Command {
  std::string program;
  std::vector<std::string> args;
  std::string working_dir = ".";  // relative to the suite directory
  bool operator==(const Command&) const = default;
};

struct TestSuite {
  std::string suite_id;
  SuiteOrigin origin = SuiteOrigin::test_author;
  Command command;
  // Every test the suite reports should appear here; an empty list means the
  // test asserts behavior no clause covers, absence means nobody said.
  std::map<std::string, std::vector<contract::ClauseId>> clause_links;
  int timeout_seconds = 30;
  std::map<std::string, std::string> files;  // installed under suite/<suite_id>/
  std::optional<std::string> test_filter;    // exported as HARNESS_TEST_FILTER
  bool operator==(const TestSuite&) const = default;
};

nlohmann::json to_json(const TestSuite& s);
TestSuite suite_from_json(const nlohmann::json& j);
// Builds a suite from a test_author response body.
TestSuite suite_from_body(const nlohmann::json& body, SuiteOrigin origin);

enum class TestStatus { pass, fail, error };

std::string_view to_string(TestStatus s);

struct TestOutcome {
  std::string id;
  TestStatus status = TestStatus::pass;
  std::string assertion;
  double duration_ms = 0.0;
};

struct TestResults {
  std::string suite_id;
  std::vector<TestOutcome> tests;
  int exit_code = 0;
  std::string output_digest;
  // Infra problems (missing command, no results file, test-level errors)
  // rather than assertion failures.
  std::vector<std::string> environment_flags;

  bool all_passed() const;
  std::vector<const TestOutcome*> failures() const;
};

nlohmann::json to_json(const TestResults& r);
TestResults results_from_json(const nlohmann::json& j);

// Per-execution knobs exported to the suite process.
struct RunOptions {
  int ci_attempt = 1;
  int rerun_index = 0;
};

// workspace/<run_id>/{artifact,suite,results.jsonl}. Everything a suite may
// touch lives below root().
class Workspace {
 public:
  explicit Workspace(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path artifact_dir() const { return root_ / "artifact"; }
  std::filesystem::path suite_dir() const { return root_ / "suite"; }
  std::filesystem::path results_file() const { return root_ / "results.jsonl"; }

  // Replaces the artifact tree; the files are remembered for reset().
  void install_artifact(const std::map<std::string, std::string>& files);
  void install_suite(const TestSuite& suite);
  // Restores the artifact tree and suites to exactly what was installed and
  // clears scratch state.
  void reset();

 private:
  std::filesystem::path root_;
  std::map<std::string, std::string> artifact_;
  std::map<std::string, TestSuite> suites_;
};

// Throws sandbox-violation when the command could escape the workspace, and
// timeout when the suite overruns; the process group is killed either way.
TestResults run_suite(Workspace& workspace, const TestSuite& suite, const RunOptions& options = {});

// Static confinement check of the command descriptor. Returns a reason, or
// empty when the command is acceptable.
std::string command_problem(const TestSuite& suite);

struct FlakinessReport {
  std::string suite_id;
  int reruns = 0;
  std::map<std::string, double> failing_fraction;  // per test id
  double run_failure_fraction = 0.0;                 // reruns with infra failure
  // Largest per-test fraction, or the run-level fraction when larger.
  double stability() const;
};

FlakinessReport rerun_for_noise(Workspace& workspace, const TestSuite& suite, int n, int ci_attempt = 1);

// ---- review gates ---------------------------------------------------------

enum class FindingSeverity { blocker, major, minor };
enum class Verdict { pass, fail, waived };

std::string_view to_string(FindingSeverity s);
std::string_view to_string(Verdict v);
std::optional<Verdict> parse_verdict(std::string_view s);

struct ReviewFinding {
  std::string gate_role;
  FindingSeverity severity = FindingSeverity::minor;
  std::optional<contract::ClauseId> clause_id;
  std::string text;
  std::optional<std::string> adjudication;  // true_issue | false_positive
};

nlohmann::json to_json(const ReviewFinding& f);
ReviewFinding finding_from_json(const nlohmann::json& j);
std::vector<ReviewFinding> findings_from_body(agents::Role role, const nlohmann::json& body);

Verdict gate_verdict(const std::vector<ReviewFinding>& findings);

// One reviewer's pass over the change. The checklist must already include
// the items of every applied specialization.
std::vector<ReviewFinding> run_review_gate(agents::Role role, const contract::Contract& contract,
                                           const std::vector<agents::InputRef>& artifact_refs,
                                           const std::vector<std::string>& checklist, agents::Backend& backend,
                                           const std::string& run_id, const std::string& job_id, int attempt,
                                           int step);

// ---- regression set -------------------------------------------------------

struct RegressionRegistry {
  std::map<std::string, std::vector<TestSuite>> by_module;
  std::size_t size() const;
  std::vector<TestSuite> suites_for(const std::string& module) const;
};

// Copies one test into the module's regression set as a single-test suite.
// Promoting the same test twice leaves the registry unchanged.
RegressionRegistry promote_regression(const std::string& test_id, const TestSuite& suite, const std::string& module,
                                      RegressionRegistry registry);
std::string regression_suite_id(const TestSuite& suite, const std::string& test_id);

}  // namespace harness::verification
