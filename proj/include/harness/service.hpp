#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "harness/calibration.hpp"
#include "harness/config.hpp"
#include "harness/engine.hpp"
#include "harness/event_store.hpp"

namespace harness::service {

// Directory holding the bundled prompts, specializations and scenarios.
std::filesystem::path bundled_data_dir();

// Creates the data directory layout and seeds the specialization registry
// and prompt templates from `bundled`. Existing files are left alone.
void init_data_dir(const Config& config, const std::filesystem::path& bundled = bundled_data_dir());

struct ScenarioRun {
  std::string run_id;
  engine::DriveResult result;
};

// The operations behind both the CLI and the HTTP API. All methods are
// serialized; JSON shapes are the API's response bodies.
class Service {
 public:
  explicit Service(Config config);

  const Config& config() const { return config_; }
  store::EventStore& store() { return *store_; }
  engine::Engine& engine() { return *engine_; }

  // Request: {issue, scenario?, ground_truth_labels?, interface?}. A scenario
  // object is stored under the data directory and binds the run to it.
  std::string submit_issue(const nlohmann::json& request);
  engine::DriveResult drive(const std::string& run_id);
  ScenarioRun run_scenario(const std::filesystem::path& scenario_file);
  ScenarioRun run_scenario(const nlohmann::json& scenario);

  nlohmann::json list_runs();
  nlohmann::json run_detail(const std::string& run_id);
  nlohmann::json pending_tickets();
  nlohmann::json resolve_ticket(const std::string& ticket_id, const nlohmann::json& decision);
  nlohmann::json report_post_merge(const std::string& run_id, const nlohmann::json& report);
  calibration::MetricsReport metrics(const calibration::TimeWindow& window);
  std::string memory_text();

 private:
  std::unique_ptr<agents::Backend> backend_for(const pipeline::RunState& state,
                                               std::shared_ptr<const agents::ScriptedScenario>& scenario) const;
  engine::DriveResult drive_locked(const std::string& run_id);
  void record_memory();

  Config config_;
  std::unique_ptr<store::EventStore> store_;
  std::unique_ptr<engine::Engine> engine_;
  std::recursive_mutex mu_;
};

}  // namespace harness::service
