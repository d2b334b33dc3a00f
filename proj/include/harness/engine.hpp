#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness/agent_runtime.hpp"
#include "harness/arbiter.hpp"
#include "harness/config.hpp"
#include "harness/event_store.hpp"
#include "harness/pipeline.hpp"

namespace harness::engine {

struct EngineOptions {
  Config config;
  std::filesystem::path specializations_dir;
  std::filesystem::path lint_rules_file;
  std::filesystem::path memory_file;
  std::filesystem::path workspace_root;
  std::filesystem::path transcripts_dir;  // empty: transcripts are not kept

  // Standard layout below config.data_dir.
  static EngineOptions for_config(const Config& config);
};

enum class Outcome { done, halted, awaiting_operator };
std::string_view to_string(Outcome o);

struct DriveResult {
  pipeline::RunState state;
  Outcome outcome = Outcome::done;
  std::string detail;
};

// Drives runs through the pipeline. Every step is decided from the folded
// event log alone, so a driver killed between any two appends resumes where
// the log ends and produces the same events.
class Engine {
 public:
  Engine(store::EventStore& store, EngineOptions options);

  pipeline::RunState load_state(const std::string& run_id) const;

  // Validates the event against the current state, persists it, folds it
  // and refreshes the run's snapshot.
  pipeline::RunEvent commit(const std::string& run_id, pipeline::RunState& state, const pipeline::EventDraft& draft);

  std::string submit(const RawIssue& issue, const std::string& scenario_id = {},
                     const nlohmann::json& ground_truth_labels = nlohmann::json::object(),
                     const std::string& interface_description = {});

  // Runs until the pipeline finishes, halts, or needs an operator decision
  // that `scenario` does not script. Scripted post-merge reports are fed in
  // once the run is done.
  DriveResult drive(const std::string& run_id, agents::Backend& backend,
                    const agents::ScriptedScenario* scenario = nullptr);

  // Records an operator decision. Approved proposals are applied to the
  // harness stores; regression promotions are committed when the run can
  // take them.
  pipeline::RunState resolve(const std::string& run_id, const std::string& ticket_id, const std::string& decision,
                             const std::string& principal, const std::string& note = {});

  pipeline::RunState report_post_merge(const std::string& run_id, const nlohmann::json& report,
                                       const std::string& principal);

  const std::vector<std::string>& applied_changes() const { return applied_; }
  const EngineOptions& options() const { return options_; }
  arbiter::ArbiterPolicy arbiter_policy() const;
  store::EventStore& store() { return store_; }

 private:
  store::EventStore& store_;
  EngineOptions options_;
  std::vector<std::string> applied_;
};

// Suites promoted into the module's regression set, from regression_promoted
// events across all runs, in promotion order and without duplicates.
std::vector<verification::TestSuite> regression_suites(const std::vector<pipeline::RunEvent>& events,
                                                       const std::string& module);

}  // namespace harness::engine
