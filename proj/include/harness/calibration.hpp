#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness/pipeline.hpp"
#include "harness/verification.hpp"

namespace harness::calibration {

using RetroProposal = pipeline::Proposal;

const std::vector<std::string>& proposal_kinds();

// Inclusive range of event timestamps; either end may be open. Text form is
// "FROM..TO" with ISO-8601 UTC ends, e.g. "2026-01-01T00:00:00Z..".
struct TimeWindow {
  std::optional<std::int64_t> from;
  std::optional<std::int64_t> to;

  static TimeWindow parse(std::string_view text);
  bool contains(const std::string& timestamp) const;
  std::string to_string() const;
};

// ---- retrospectives -------------------------------------------------------

struct RetroPolicy {
  int recurrence_threshold = 2;
};

// One proposal per (failure class, contract section) pair, or per
// post-pipeline gate, that recurs at least `recurrence_threshold` times in
// the given events. Ids are left empty for the caller to assign.
std::vector<RetroProposal> run_retro(const std::vector<pipeline::RunEvent>& events, const RetroPolicy& policy);

// Validates proposals returned by the retro agent.
std::vector<RetroProposal> proposals_from_body(const nlohmann::json& body, const std::string& run_id);

struct Approval {
  bool approved = false;
  std::string principal;
};

// Where approved changes land.
struct HarnessStores {
  std::filesystem::path specializations_dir;
  std::filesystem::path lint_rules_file;
  std::filesystem::path memory_file;
  std::function<std::optional<verification::TestSuite>(const std::string& suite_id)> find_suite;
};

struct AppliedChange {
  std::string description;
  std::vector<pipeline::EventDraft> events;  // to append to the proposal's run
};

// Throws not-approved unless the proposal is approved and the approval
// names a principal.
AppliedChange apply_proposal(const RetroProposal& proposal, const Approval& approval, const HarnessStores& stores);

std::vector<compiler::LintRule> load_lint_rules(const std::filesystem::path& file);

// ---- metrics --------------------------------------------------------------

struct MetricsReport {
  TimeWindow window;

  std::int64_t features_completed = 0;
  std::optional<double> cycle_time_mean_seconds;
  std::optional<double> cycle_time_max_seconds;
  std::int64_t autonomous_commits = 0;
  std::int64_t human_interventions = 0;
  std::int64_t jobs_dispatched = 0;
  std::optional<double> avg_implementation_cycles;

  std::int64_t suites_generated = 0;
  std::int64_t calibration_suites = 0;
  std::optional<double> pass_fail_rate;
  std::int64_t bugs_caught_pre_merge = 0;
  std::optional<double> spec_gap_rate;
  std::optional<double> verifier_noise_rate;
  std::optional<double> ambiguity_detection_rate;
  std::int64_t regressions_promoted = 0;

  std::optional<double> post_merge_bug_rate;
  std::optional<double> rollback_rate;
  std::optional<double> qa_failure_rate;
  std::int64_t structural_review_findings = 0;
  std::int64_t trust_boundary_findings = 0;

  std::map<std::string, std::int64_t> recurring_failure_classes;
  std::vector<std::string> contract_sections_with_gaps;
  std::map<std::string, std::int64_t> agents_with_failures;
  std::int64_t specialization_updates = 0;
  std::int64_t memory_promotions = 0;
  std::int64_t failures_converted_to_improvements = 0;

  std::optional<double> contract_violation_detection_rate;
  std::optional<double> review_gate_precision;
};

MetricsReport compute_metrics(const std::vector<pipeline::RunEvent>& events, const TimeWindow& window = {});

// Undefined rates are omitted from the JSON, never written as 0 or 1.
nlohmann::json to_json(const MetricsReport& m);
std::string to_table(const MetricsReport& m);

}  // namespace harness::calibration
