#include <gtest/gtest.h>

#include "harness/calibration.hpp"
#include "harness/error.hpp"
#include "harness/memory.hpp"
#include "support.hpp"

using namespace harness;
using namespace harness::calibration;
using nlohmann::json;
using pipeline::EventKind;
using pipeline::RunEvent;
using testing_support::TempDir;

namespace {

constexpr std::int64_t kEpoch = 1767225600;  // 2026-01-01T00:00:00Z

class Log {
 public:
  Log& add(const std::string& run, EventKind kind, json payload = json::object()) {
    ++seq_;
    events_.push_back({seq_, run, util::iso8601_utc(kEpoch + seq_ * 60), kind, std::move(payload)});
    return *this;
  }
  Log& issue(const std::string& run, json labels = json::object()) {
    return add(run, EventKind::issue_submitted,
               {{"issue", {{"id", "ISS-" + run}, {"title", "t"}, {"body", "b"}}}, {"ground_truth_labels", labels}});
  }
  Log& compiled(const std::string& run, const std::string& domain) {
    return add(run, EventKind::contract_compiled_p1,
               {{"contract", {{"module_name", "Mod"}}}, {"specializations", json::array({{{"domain", domain}}})}});
  }
  Log& classified(const std::string& run, const std::string& cls, const std::string& section,
                  const std::string& origin = "ci", const std::string& summary = "") {
    return add(run, EventKind::failure_classified,
               {{"origin", origin}, {"section", section}, {"summary", summary}, {"classification", {{"class", cls}}}});
  }
  Log& dispatched(const std::string& run, const std::string& role) {
    return add(run, EventKind::job_dispatched, {{"payload", {{"role", role}}}});
  }
  const std::vector<RunEvent>& events() const { return events_; }

 private:
  std::int64_t seq_ = 0;
  std::vector<RunEvent> events_;
};

HarnessStores stores_in(const std::filesystem::path& dir) {
  HarnessStores s;
  s.specializations_dir = dir / "specializations";
  s.lint_rules_file = dir / "lint_rules.json";
  s.memory_file = dir / "MEMORY.md";
  std::filesystem::create_directories(s.specializations_dir);
  for (const auto& r : memory::load_registry(testing_support::bundled_data() / "specializations")) {
    memory::save_specialization(s.specializations_dir, r);
  }
  return s;
}

RetroProposal approved(std::string kind, std::string target, std::string diff) {
  RetroProposal p;
  p.id = "p1";
  p.kind = std::move(kind);
  p.target = std::move(target);
  p.diff = std::move(diff);
  p.status = "approved";
  return p;
}

}  // namespace

TEST(Window, ParsesOpenAndClosedRanges) {
  EXPECT_FALSE(TimeWindow::parse("").from);
  const auto w = TimeWindow::parse("2026-01-01T00:00:00Z..2026-01-02T00:00:00Z");
  EXPECT_TRUE(w.contains("2026-01-01T00:00:00Z"));
  EXPECT_TRUE(w.contains("2026-01-02T00:00:00Z"));
  EXPECT_FALSE(w.contains("2026-01-02T00:00:01Z"));
  EXPECT_EQ(w.to_string(), "2026-01-01T00:00:00Z..2026-01-02T00:00:00Z");
  EXPECT_TRUE(TimeWindow::parse("2026-03-01T00:00:00Z..").contains("2030-01-01T00:00:00Z"));
  EXPECT_THROW(TimeWindow::parse("yesterday"), Error);
  EXPECT_THROW(TimeWindow::parse("2026-02-01T00:00:00Z..2026-01-01T00:00:00Z"), Error);
}

TEST(Retro, RecurringSpecGapsBecomeTemplateUpdates) {
  Log log;
  log.issue("r1").compiled("r1", "payments");
  log.classified("r1", "spec_gap", "amount_calculation", "post_merge", "deposits omitted");
  log.classified("r1", "spec_gap", "amount_calculation", "post_merge", "discounts omitted");
  log.classified("r1", "bug", "invariants");
  log.classified("r1", "noise", "uncovered");
  log.classified("r1", "noise", "uncovered");
  const auto proposals = run_retro(log.events(), {2});
  ASSERT_EQ(proposals.size(), 1u);
  EXPECT_EQ(proposals[0].kind, "contract_template_update");
  EXPECT_EQ(proposals[0].target, "payments");
  EXPECT_EQ(proposals[0].diff, "deposits omitted\ndiscounts omitted");
  EXPECT_EQ(proposals[0].evidence_runs, std::vector<std::string>{"r1"});
  EXPECT_EQ(run_retro(log.events(), {3}).size(), 0u);
}

TEST(Retro, RepeatedGateFailuresBecomeChecklistItems) {
  Log log;
  log.issue("r1");
  for (int i = 0; i < 2; ++i) {
    log.add("r1", EventKind::gate_recorded,
            {{"gate", "structural_review"},
             {"verdict", "fail"},
             {"findings", {{{"severity", "blocker"}, {"text", "inline style " + std::to_string(i)}}}}});
  }
  const auto proposals = run_retro(log.events(), {2});
  ASSERT_EQ(proposals.size(), 1u);
  EXPECT_EQ(proposals[0].kind, "review_checklist_item");
  EXPECT_EQ(proposals[0].target, "ISS-r1");
}

TEST(Retro, AgentProposalsAreValidated) {
  const auto ok = proposals_from_body(
      json{{"proposals", {{{"kind", "compiler_rule"}, {"target", "default"}, {"diff", "as needed"}}}}}, "run-0001");
  ASSERT_EQ(ok.size(), 1u);
  EXPECT_EQ(ok[0].evidence_runs, std::vector<std::string>{"run-0001"});
  EXPECT_THROW(proposals_from_body(json{{"proposals", {{{"kind", "rewrite_everything"}, {"target", "x"}, {"diff", "y"}}}}}, "r"),
               Error);
  EXPECT_THROW(proposals_from_body(json{{"proposals", {{{"kind", "compiler_rule"}, {"target", ""}, {"diff", "y"}}}}}, "r"),
               Error);
  EXPECT_THROW(proposals_from_body(json::object(), "r"), Error);
}

TEST(Apply, RequiresApprovalWithPrincipal) {
  TempDir dir("calib");
  const HarnessStores stores = stores_in(dir.path());
  RetroProposal p = approved("compiler_rule", "default", "as needed");
  EXPECT_THROW(apply_proposal(p, {false, "lead"}, stores), Error);
  EXPECT_THROW(apply_proposal(p, {true, ""}, stores), Error);
  p.status = "pending";
  EXPECT_THROW(apply_proposal(p, {true, "lead"}, stores), Error);
  EXPECT_FALSE(std::filesystem::exists(stores.lint_rules_file));
}

TEST(Apply, TemplateUpdateInjectsClausesOnce) {
  TempDir dir("calib");
  const HarnessStores stores = stores_in(dir.path());
  const auto p = approved("contract_template_update", "payments",
                          "final invoices include offline deposits\ndiscounts are encoded in the contract\n");
  std::size_t before = 0;
  for (const auto& r : memory::load_registry(stores.specializations_dir)) {
    if (r.domain == "payments") before = r.injected_clauses.size();
  }
  EXPECT_NE(apply_proposal(p, {true, "lead"}, stores).description.find("2 template clause"), std::string::npos);
  EXPECT_NE(apply_proposal(p, {true, "lead"}, stores).description.find("0 template clause"), std::string::npos);
  for (const auto& r : memory::load_registry(stores.specializations_dir)) {
    if (r.domain != "payments") continue;
    EXPECT_EQ(r.injected_clauses.back().text, "discounts are encoded in the contract");
    EXPECT_EQ(r.injected_clauses.back().origin, contract::Origin::specialization);
    EXPECT_EQ(r.injected_clauses.size(), before + 2);
  }
  EXPECT_THROW(apply_proposal(approved("contract_template_update", "gardening", "x"), {true, "lead"}, stores), Error);
}

TEST(Apply, CompilerRuleFromPlainPhrases) {
  TempDir dir("calib");
  const HarnessStores stores = stores_in(dir.path());
  apply_proposal(approved("compiler_rule", "default", "In A Timely Manner"), {true, "lead"}, stores);
  const auto rules = load_lint_rules(stores.lint_rules_file);
  ASSERT_EQ(rules.size(), 1u);
  EXPECT_EQ(rules[0].phrases, std::vector<std::string>{"in a timely manner"});
}

TEST(Apply, MemoryPromotionMovesTheEntry) {
  TempDir dir("calib");
  const HarnessStores stores = stores_in(dir.path());
  memory::MemoryDocument doc;
  doc = memory::append_rolling(doc, {"c7", "2026-01-01T00:00:00Z", memory::EntryKind::constraint, "no PII in logs",
                                     std::nullopt});
  util::write_file_atomic(stores.memory_file, memory::serialize_memory(doc));
  apply_proposal(approved("memory_promotion", "c7", "no PII in logs"), {true, "lead"}, stores);
  const auto after = memory::parse_memory(util::read_file(stores.memory_file));
  ASSERT_EQ(after.permanent.size(), 1u);
  EXPECT_EQ(after.permanent[0].id, "c7");
}

TEST(Apply, RegressionPromotionEmitsEvents) {
  TempDir dir("calib");
  HarnessStores stores = stores_in(dir.path());
  verification::TestSuite suite;
  suite.suite_id = "s1";
  suite.command = {"sh", {"run.sh"}, "."};
  suite.clause_links = {{"t1", {"INV-1"}}};
  stores.find_suite = [&](const std::string& id) -> std::optional<verification::TestSuite> {
    if (id == "s1") return suite;
    return std::nullopt;
  };
  const json diff{{"module", "Orders"}, {"tests", {{{"suite_id", "s1"}, {"test_id", "t1"}}, {{"suite_id", "s1"}, {"test_id", "t1"}}}}};
  const AppliedChange c = apply_proposal(approved("regression_promotion", "Orders", diff.dump()), {true, "lead"}, stores);
  ASSERT_EQ(c.events.size(), 1u);
  EXPECT_EQ(c.events[0].kind, EventKind::regression_promoted);
  EXPECT_EQ(c.events[0].payload["test_id"], "t1");
  const json bad{{"tests", {{{"suite_id", "nope"}, {"test_id", "t1"}}}}};
  EXPECT_THROW(apply_proposal(approved("regression_promotion", "Orders", bad.dump()), {true, "lead"}, stores), Error);
}

TEST(Metrics, HandCountedLog) {
  Log log;
  // r1: ambiguous, routed to refinement, one human decision, done.
  log.issue("r1", {{"ambiguous", true}});
  log.dispatched("r1", "implementer");
  log.add("r1", EventKind::response_received, {{"route", "test_author"}, {"kind", "test_suite"}});
  log.add("r1", EventKind::ci_completed, {{"status", "fail"}});
  log.classified("r1", "contract_ambiguity", "invariants");
  log.add("r1", EventKind::corrective_action, {{"origin", "ci"}, {"class", "contract_ambiguity"}});
  log.add("r1", EventKind::human_decision, {{"ticket_kind", "arbiter_escalation"}, {"decision", "bug"}});
  log.dispatched("r1", "implementer");
  log.add("r1", EventKind::ci_completed, {{"status", "pass"}});
  log.add("r1", EventKind::run_done);
  // r2: clean, one bug, one QA blocker, done with no human input.
  log.issue("r2", {{"ambiguous", false}});
  log.dispatched("r2", "implementer");
  log.add("r2", EventKind::ci_completed, {{"status", "fail"}});
  log.classified("r2", "bug", "invariants");
  log.add("r2", EventKind::gate_recorded,
          {{"gate", "qa"}, {"verdict", "fail"}, {"findings", {{{"severity", "blocker"}, {"text", "x"}}}}});
  log.add("r2", EventKind::run_done);

  const MetricsReport m = compute_metrics(log.events());
  EXPECT_EQ(m.features_completed, 2);
  EXPECT_EQ(m.autonomous_commits, 1);
  EXPECT_EQ(m.human_interventions, 1);
  EXPECT_EQ(m.jobs_dispatched, 3);
  EXPECT_EQ(m.suites_generated, 1);
  EXPECT_EQ(m.bugs_caught_pre_merge, 2);
  EXPECT_DOUBLE_EQ(*m.pass_fail_rate, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(*m.avg_implementation_cycles, 1.5);
  EXPECT_DOUBLE_EQ(*m.spec_gap_rate, 0.0);
  EXPECT_DOUBLE_EQ(*m.ambiguity_detection_rate, 1.0);
  EXPECT_DOUBLE_EQ(*m.qa_failure_rate, 1.0);
  EXPECT_DOUBLE_EQ(*m.cycle_time_max_seconds, 9 * 60.0);
  EXPECT_FALSE(m.review_gate_precision);
  EXPECT_EQ(m.rollback_rate, 0.0);
}

TEST(Metrics, UndefinedRatesAreOmitted) {
  const MetricsReport m = compute_metrics({});
  const json j = to_json(m);
  EXPECT_EQ(j["productivity"]["features_completed"], 0);
  EXPECT_FALSE(j["verification"].contains("pass_fail_rate"));
  EXPECT_FALSE(j["verification"].contains("ambiguity_detection_rate"));
  EXPECT_FALSE(j["quality"].contains("post_merge_bug_rate"));
  EXPECT_TRUE(j["diagnostics"].empty());
  EXPECT_NE(to_table(m).find("features_completed"), std::string::npos);
}

TEST(Metrics, WindowFiltersByTimestamp) {
  Log log;
  log.issue("r1").add("r1", EventKind::run_done);  // minutes 1 and 2
  log.issue("r2").add("r2", EventKind::run_done);  // minutes 3 and 4
  TimeWindow w;
  w.from = kEpoch + 3 * 60;
  const MetricsReport m = compute_metrics(log.events(), w);
  EXPECT_EQ(m.features_completed, 1);
}
