#include "harness/verification.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <set>
#include <sstream>
#include <thread>

#include "harness/error.hpp"
#include "harness/util.hpp"

namespace harness::verification {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::pair<SuiteOrigin, std::string_view> kOrigins[] = {
    {SuiteOrigin::test_author, "test_author"},
    {SuiteOrigin::regression_set, "regression_set"},
    {SuiteOrigin::calibration, "calibration"}};

const std::set<std::string> kAllowedPrograms = {"python3", "sh"};

bool escapes(const std::string& path) {
  if (path.empty()) return false;
  if (path.front() == '/') return true;
  for (const auto& part : fs::path(path)) {
    if (part == "..") return true;
  }
  return false;
}

void write_tree(const fs::path& base, const std::map<std::string, std::string>& files) {
  for (const auto& [rel, content] : files) {
    if (escapes(rel)) throw Error(ErrorCode::sandbox_violation, "file path escapes workspace: " + rel);
    const fs::path target = base / rel;
    fs::create_directories(target.parent_path());
    util::write_file_atomic(target, content);
  }
}

std::set<std::string> listing(const fs::path& dir) {
  std::set<std::string> names;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir, ec)) names.insert(entry.path().filename().string());
  return names;
}

struct ChildResult {
  int exit_code = 0;
  bool timed_out = false;
};

ChildResult spawn_and_wait(const fs::path& cwd, const std::string& program, const std::vector<std::string>& args,
                           const std::vector<std::string>& env, const fs::path& output, int timeout_seconds) {
  std::vector<char*> argv;
  argv.push_back(const_cast<char*>(program.c_str()));
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  std::vector<char*> envp;
  for (const auto& e : env) envp.push_back(const_cast<char*>(e.c_str()));
  envp.push_back(nullptr);

  const pid_t pid = fork();
  if (pid < 0) throw Error(ErrorCode::io_error, "fork failed");
  if (pid == 0) {
    setpgid(0, 0);
    const int fd = ::open(output.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd >= 0) {
      dup2(fd, STDOUT_FILENO);
      dup2(fd, STDERR_FILENO);
      ::close(fd);
    }
    const int devnull = ::open("/dev/null", O_RDONLY);
    if (devnull >= 0) dup2(devnull, STDIN_FILENO);
    if (chdir(cwd.c_str()) != 0) _exit(126);
    if (program.find('/') != std::string::npos) {
      execve(program.c_str(), argv.data(), envp.data());
    } else {
      // Resolve through the cleaned PATH only.
      for (const char* dir : {"/usr/local/bin", "/usr/bin", "/bin"}) {
        const std::string candidate = std::string(dir) + "/" + program;
        execve(candidate.c_str(), argv.data(), envp.data());
      }
    }
    _exit(127);
  }
  setpgid(pid, pid);

  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(timeout_seconds);
  auto pause = std::chrono::microseconds(200);
  int status = 0;
  while (true) {
    const pid_t r = waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0) throw Error(ErrorCode::io_error, "waitpid failed");
    if (std::chrono::steady_clock::now() >= deadline) {
      kill(-pid, SIGKILL);
      waitpid(pid, &status, 0);
      return {137, true};
    }
    std::this_thread::sleep_for(pause);
    pause = std::min(pause * 2, std::chrono::microseconds(5000));
  }
  // Reap anything the suite left behind in its group.
  kill(-pid, SIGKILL);
  if (WIFEXITED(status)) return {WEXITSTATUS(status), false};
  if (WIFSIGNALED(status)) return {128 + WTERMSIG(status), false};
  return {1, false};
}

std::optional<TestStatus> parse_status(std::string_view s) {
  if (s == "pass") return TestStatus::pass;
  if (s == "fail") return TestStatus::fail;
  if (s == "error") return TestStatus::error;
  return std::nullopt;
}

}  // namespace

std::string_view to_string(SuiteOrigin o) {
  for (const auto& [v, n] : kOrigins) {
    if (v == o) return n;
  }
  return "?";
}

std::optional<SuiteOrigin> parse_suite_origin(std::string_view s) {
  for (const auto& [v, n] : kOrigins) {
    if (n == s) return v;
  }
  return std::nullopt;
}

std::string_view to_string(TestStatus s) {
  switch (s) {
    case TestStatus::pass: return "pass";
    case TestStatus::fail: return "fail";
    case TestStatus::error: return "error";
  }
  return "?";
}

json to_json(const TestSuite& s) {
  json j{{"suite_id", s.suite_id},
         {"origin", to_string(s.origin)},
         {"command", {{"program", s.command.program}, {"args", s.command.args}, {"working_dir", s.command.working_dir}}},
         {"clause_links", s.clause_links},
         {"timeout", s.timeout_seconds},
         {"files", s.files}};
  if (s.test_filter) j["test_filter"] = *s.test_filter;
  return j;
}

TestSuite suite_from_json(const json& j) {
  TestSuite s;
  try {
    s.suite_id = j.at("suite_id").get<std::string>();
    const auto origin = parse_suite_origin(j.value("origin", "test_author"));
    if (!origin) throw Error(ErrorCode::parse_error, "suite " + s.suite_id + ": unknown origin");
    s.origin = *origin;
    const json& cmd = j.at("command");
    s.command.program = cmd.at("program").get<std::string>();
    s.command.args = cmd.value("args", std::vector<std::string>{});
    s.command.working_dir = cmd.value("working_dir", ".");
    s.clause_links = j.value("clause_links", std::map<std::string, std::vector<std::string>>{});
    s.timeout_seconds = j.value("timeout", 30);
    s.files = j.value("files", std::map<std::string, std::string>{});
    if (j.contains("test_filter")) s.test_filter = j["test_filter"].get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("suite: ") + e.what());
  }
  if (s.suite_id.empty()) throw Error(ErrorCode::parse_error, "suite: empty suite_id");
  if (s.timeout_seconds <= 0) throw Error(ErrorCode::parse_error, "suite " + s.suite_id + ": timeout must be positive");
  return s;
}

TestSuite suite_from_body(const json& body, SuiteOrigin origin) {
  try {
    TestSuite s = suite_from_json(body);
    s.origin = origin;
    return s;
  } catch (const Error& e) {
    throw Error(ErrorCode::agent_response_invalid, e.what());
  }
}

bool TestResults::all_passed() const {
  if (!environment_flags.empty()) return false;
  return std::all_of(tests.begin(), tests.end(), [](const TestOutcome& t) { return t.status == TestStatus::pass; });
}

std::vector<const TestOutcome*> TestResults::failures() const {
  std::vector<const TestOutcome*> out;
  for (const auto& t : tests) {
    if (t.status != TestStatus::pass) out.push_back(&t);
  }
  return out;
}

json to_json(const TestResults& r) {
  json tests = json::array();
  for (const auto& t : r.tests) {
    tests.push_back({{"id", t.id}, {"status", to_string(t.status)}, {"assertion", t.assertion}, {"duration_ms", t.duration_ms}});
  }
  return {{"suite_id", r.suite_id},
          {"tests", tests},
          {"exit_code", r.exit_code},
          {"output_digest", r.output_digest},
          {"environment_flags", r.environment_flags}};
}

TestResults results_from_json(const json& j) {
  TestResults r;
  r.suite_id = j.at("suite_id").get<std::string>();
  for (const auto& t : j.at("tests")) {
    r.tests.push_back({t.at("id").get<std::string>(), parse_status(t.at("status").get<std::string>()).value_or(TestStatus::error),
                       t.value("assertion", ""), t.value("duration_ms", 0.0)});
  }
  r.exit_code = j.value("exit_code", 0);
  r.output_digest = j.value("output_digest", "");
  r.environment_flags = j.value("environment_flags", std::vector<std::string>{});
  return r;
}

// ---- workspace ------------------------------------------------------------

Workspace::Workspace(fs::path root) : root_(fs::absolute(std::move(root)).lexically_normal()) {
  fs::create_directories(root_);
  fs::create_directories(artifact_dir());
  fs::create_directories(suite_dir());
}

void Workspace::install_artifact(const std::map<std::string, std::string>& files) {
  fs::remove_all(artifact_dir());
  fs::create_directories(artifact_dir());
  write_tree(artifact_dir(), files);
  artifact_ = files;
}

void Workspace::install_suite(const TestSuite& suite) {
  const fs::path dir = suite_dir() / util::safe_file_name(suite.suite_id);
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_tree(dir, suite.files);
  suites_[suite.suite_id] = suite;
}

void Workspace::reset() {
  for (const auto& entry : fs::directory_iterator(root_)) fs::remove_all(entry.path());
  fs::create_directories(artifact_dir());
  fs::create_directories(suite_dir());
  write_tree(artifact_dir(), artifact_);
  for (const auto& [id, suite] : suites_) {
    const fs::path dir = suite_dir() / util::safe_file_name(id);
    fs::create_directories(dir);
    write_tree(dir, suite.files);
  }
}

std::string command_problem(const TestSuite& suite) {
  const Command& c = suite.command;
  if (c.program.empty()) return "empty program";
  if (c.program.find('/') != std::string::npos) {
    if (escapes(c.program)) return "program outside workspace: " + c.program;
  } else if (!kAllowedPrograms.count(c.program)) {
    return "program not allowed: " + c.program;
  }
  for (const auto& a : c.args) {
    if (escapes(a)) return "argument outside workspace: " + a;
  }
  if (escapes(c.working_dir)) return "working directory outside workspace: " + c.working_dir;
  return {};
}

TestResults run_suite(Workspace& workspace, const TestSuite& suite, const RunOptions& options) {
  if (const std::string problem = command_problem(suite); !problem.empty()) {
    throw Error(ErrorCode::sandbox_violation, suite.suite_id + ": " + problem);
  }
  const fs::path root = workspace.root();
  const fs::path suite_home = workspace.suite_dir() / util::safe_file_name(suite.suite_id);
  const fs::path cwd = (suite_home / suite.command.working_dir).lexically_normal();
  fs::create_directories(cwd);
  fs::create_directories(root / ".home");
  fs::create_directories(root / ".tmp");
  fs::remove(workspace.results_file());
  const fs::path output = root / ".output.log";

  std::vector<std::string> env = {
      "PATH=/usr/local/bin:/usr/bin:/bin",
      "HOME=" + (root / ".home").string(),
      "TMPDIR=" + (root / ".tmp").string(),
      "LANG=C.UTF-8",
      "PYTHONDONTWRITEBYTECODE=1",
      "PYTHONHASHSEED=0",
      "HARNESS_WORKSPACE=" + root.string(),
      "HARNESS_RESULTS=" + workspace.results_file().string(),
      "HARNESS_SUITE_DIR=" + suite_home.string(),
      "HARNESS_ARTIFACT_DIR=" + workspace.artifact_dir().string(),
      "HARNESS_CI_ATTEMPT=" + std::to_string(options.ci_attempt),
      "HARNESS_RERUN_INDEX=" + std::to_string(options.rerun_index),
  };
  if (suite.test_filter) env.push_back("HARNESS_TEST_FILTER=" + *suite.test_filter);

  const fs::path outside = root.parent_path();
  const auto before = listing(outside);
  const ChildResult child =
      spawn_and_wait(cwd, suite.command.program, suite.command.args, env, output, suite.timeout_seconds);
  const auto after = listing(outside);
  for (const auto& name : after) {
    if (!before.count(name)) {
      fs::remove_all(outside / name);
      throw Error(ErrorCode::sandbox_violation, suite.suite_id + " wrote outside its workspace: " + name);
    }
  }
  if (child.timed_out) {
    throw Error(ErrorCode::timeout, suite.suite_id + " exceeded " + std::to_string(suite.timeout_seconds) + "s");
  }

  TestResults results;
  results.suite_id = suite.suite_id;
  results.exit_code = child.exit_code;
  results.output_digest = util::fnv1a_hex(fs::exists(output) ? util::read_file(output) : std::string());
  if (child.exit_code == 126 || child.exit_code == 127) {
    results.environment_flags.push_back("infra-exit:" + std::to_string(child.exit_code));
  }
  if (!fs::exists(workspace.results_file())) {
    results.environment_flags.push_back("missing-results");
    return results;
  }

  std::set<std::string> seen;
  for (const auto& line : util::split_lines(util::read_file(workspace.results_file()))) {
    if (util::trim(line).empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error&) {
      results.environment_flags.push_back("malformed-results");
      continue;
    }
    if (!rec.is_object() || !rec.contains("id") || !rec["id"].is_string()) {
      results.environment_flags.push_back("malformed-results");
      continue;
    }
    TestOutcome t;
    t.id = rec["id"].get<std::string>();
    if (suite.test_filter && t.id != *suite.test_filter) continue;
    if (!seen.insert(t.id).second) {
      results.environment_flags.push_back("duplicate-test-id:" + t.id);
      continue;
    }
    const auto status = rec.contains("status") && rec["status"].is_string()
                            ? parse_status(rec["status"].get<std::string>())
                            : std::nullopt;
    t.status = status.value_or(TestStatus::error);
    t.assertion = rec.value("assertion", "");
    if (rec.contains("duration_ms") && rec["duration_ms"].is_number()) t.duration_ms = rec["duration_ms"].get<double>();
    if (t.status == TestStatus::error) results.environment_flags.push_back("test-error:" + t.id);
    results.tests.push_back(std::move(t));
  }
  return results;
}

double FlakinessReport::stability() const {
  double worst = run_failure_fraction;
  for (const auto& [_, f] : failing_fraction) worst = std::max(worst, f);
  return worst;
}

FlakinessReport rerun_for_noise(Workspace& workspace, const TestSuite& suite, int n, int ci_attempt) {
  if (n < 1) throw Error(ErrorCode::invalid_argument, "rerun count must be >= 1");
  FlakinessReport report;
  report.suite_id = suite.suite_id;
  report.reruns = n;
  std::map<std::string, int> failing;
  for (const auto& [id, _] : suite.clause_links) failing[id] = 0;
  int run_failures = 0;
  for (int i = 1; i <= n; ++i) {
    workspace.reset();
    const TestResults r = run_suite(workspace, suite, {ci_attempt, i});
    const bool infra = std::any_of(r.environment_flags.begin(), r.environment_flags.end(), [](const std::string& f) {
      return util::starts_with(f, "infra-exit") || f == "missing-results";
    });
    if (infra) ++run_failures;
    for (const auto& t : r.tests) {
      failing.try_emplace(t.id, 0);
      if (t.status != TestStatus::pass) ++failing[t.id];
    }
  }
  for (const auto& [id, count] : failing) report.failing_fraction[id] = static_cast<double>(count) / n;
  report.run_failure_fraction = static_cast<double>(run_failures) / n;
  workspace.reset();
  return report;
}

// ---- review gates ---------------------------------------------------------

std::string_view to_string(FindingSeverity s) {
  switch (s) {
    case FindingSeverity::blocker: return "blocker";
    case FindingSeverity::major: return "major";
    case FindingSeverity::minor: return "minor";
  }
  return "?";
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::waived: return "waived";
  }
  return "?";
}

std::optional<Verdict> parse_verdict(std::string_view s) {
  if (s == "pass") return Verdict::pass;
  if (s == "fail") return Verdict::fail;
  if (s == "waived") return Verdict::waived;
  return std::nullopt;
}

json to_json(const ReviewFinding& f) {
  json j{{"gate_role", f.gate_role}, {"severity", to_string(f.severity)}, {"text", f.text}};
  if (f.clause_id) j["clause_id"] = *f.clause_id;
  if (f.adjudication) j["adjudication"] = *f.adjudication;
  return j;
}

ReviewFinding finding_from_json(const json& j) {
  ReviewFinding f;
  if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
    throw Error(ErrorCode::agent_response_invalid, "finding without text");
  }
  f.gate_role = j.value("gate_role", "");
  const std::string sev = j.value("severity", "minor");
  if (sev == "blocker") {
    f.severity = FindingSeverity::blocker;
  } else if (sev == "major") {
    f.severity = FindingSeverity::major;
  } else if (sev == "minor") {
    f.severity = FindingSeverity::minor;
  } else {
    throw Error(ErrorCode::agent_response_invalid, "unknown finding severity '" + sev + "'");
  }
  if (j.contains("clause_id") && j["clause_id"].is_string()) f.clause_id = j["clause_id"].get<std::string>();
  f.text = j["text"].get<std::string>();
  if (j.contains("adjudication") && j["adjudication"].is_string()) f.adjudication = j["adjudication"].get<std::string>();
  return f;
}

std::vector<ReviewFinding> findings_from_body(agents::Role role, const json& body) {
  if (!body.is_object() || !body.contains("findings") || !body["findings"].is_array()) {
    throw Error(ErrorCode::agent_response_invalid, "review body lacks a findings list");
  }
  std::vector<ReviewFinding> out;
  for (const auto& item : body["findings"]) {
    ReviewFinding f = finding_from_json(item);
    f.gate_role = std::string(agents::to_string(role));
    out.push_back(std::move(f));
  }
  return out;
}

Verdict gate_verdict(const std::vector<ReviewFinding>& findings) {
  const bool blocked = std::any_of(findings.begin(), findings.end(),
                                   [](const ReviewFinding& f) { return f.severity == FindingSeverity::blocker; });
  return blocked ? Verdict::fail : Verdict::pass;
}

std::vector<ReviewFinding> run_review_gate(agents::Role role, const contract::Contract& contract,
                                           const std::vector<agents::InputRef>& artifact_refs,
                                           const std::vector<std::string>& checklist, agents::Backend& backend,
                                           const std::string& run_id, const std::string& job_id, int attempt,
                                           int step) {
  if (!agents::is_reviewer(role)) {
    throw Error(ErrorCode::invalid_argument, std::string(agents::to_string(role)) + " is not a reviewer role");
  }
  agents::PayloadContext ctx;
  ctx.run_id = run_id;
  ctx.job_id = job_id;
  ctx.step = step;
  ctx.route = std::string(agents::to_string(role));
  ctx.contract = contract;
  ctx.specialization_checklists = checklist;
  ctx.candidates = artifact_refs;
  const agents::JobPayload payload = agents::build_payload(ctx, role, attempt);
  const agents::AgentResponse response = agents::dispatch(payload, backend, 2);
  return findings_from_body(role, response.body);
}

// ---- regression set -------------------------------------------------------

std::size_t RegressionRegistry::size() const {
  std::size_t n = 0;
  for (const auto& [_, suites] : by_module) n += suites.size();
  return n;
}

std::vector<TestSuite> RegressionRegistry::suites_for(const std::string& module) const {
  auto it = by_module.find(module);
  return it == by_module.end() ? std::vector<TestSuite>{} : it->second;
}

std::string regression_suite_id(const TestSuite& suite, const std::string& test_id) {
  return "reg-" + util::safe_file_name(suite.suite_id + "-" + test_id);
}

RegressionRegistry promote_regression(const std::string& test_id, const TestSuite& suite, const std::string& module,
                                      RegressionRegistry registry) {
  if (!suite.clause_links.count(test_id)) {
    throw Error(ErrorCode::unknown_test, "test " + test_id + " is not part of suite " + suite.suite_id);
  }
  const std::string id = regression_suite_id(suite, test_id);
  auto& suites = registry.by_module[module];
  if (std::any_of(suites.begin(), suites.end(), [&](const TestSuite& s) { return s.suite_id == id; })) {
    return registry;
  }
  TestSuite promoted = suite;
  promoted.suite_id = id;
  promoted.origin = SuiteOrigin::regression_set;
  promoted.clause_links = {{test_id, suite.clause_links.at(test_id)}};
  promoted.test_filter = test_id;
  suites.push_back(std::move(promoted));
  return registry;
}

}  // namespace harness::verification
