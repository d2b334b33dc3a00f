#include "harness/service.hpp"

#include <algorithm>
#include <cstdlib>

#include "harness/error.hpp"
#include "harness/memory.hpp"
#include "harness/util.hpp"

#ifndef HARNESS_BUNDLED_DATA_DIR
#define HARNESS_BUNDLED_DATA_DIR "data"
#endif

namespace harness::service {

namespace fs = std::filesystem;
using nlohmann::json;
using pipeline::EventKind;

std::filesystem::path bundled_data_dir() {
  if (const char* v = std::getenv("HARNESS_BUNDLED_DATA"); v && *v) return v;
  return HARNESS_BUNDLED_DATA_DIR;
}

void init_data_dir(const Config& config, const fs::path& bundled) {
  const fs::path root = config.data_dir;
  for (const char* sub : {"events", "runs", "scenarios", "specializations", "prompts", "workspace", "transcripts"}) {
    fs::create_directories(root / sub);
  }
  for (const char* sub : {"specializations", "prompts"}) {
    const fs::path from = bundled / sub;
    if (!fs::exists(from)) continue;
    for (const auto& entry : fs::directory_iterator(from)) {
      const fs::path to = root / sub / entry.path().filename();
      if (entry.is_regular_file() && !fs::exists(to)) fs::copy_file(entry.path(), to);
    }
  }
  if (!fs::exists(root / "memory.md")) util::write_file_atomic(root / "memory.md", memory::serialize_memory({}));
  if (!fs::exists(root / "lint_rules.json")) util::write_file_atomic(root / "lint_rules.json", "[]\n");
  if (!fs::exists(root / "harness.conf")) util::write_file_atomic(root / "harness.conf", config.to_text());
}

namespace {

json brief(const pipeline::RunState& s) {
  json j{{"run_id", s.run_id},
         {"title", s.issue.title},
         {"issue_id", s.issue.id},
         {"scenario_id", s.scenario_id},
         {"phase", std::string(pipeline::to_string(s.phase))},
         {"step", s.step_key()},
         {"implementation_cycles", s.implementation_cycles},
         {"updated_at", s.last_timestamp}};
  if (s.pending_human) j["pending_ticket"] = *s.pending_human;
  if (!s.halt_reason.empty()) j["halt_reason"] = s.halt_reason;
  if (const auto* c = s.current_contract()) j["contract_version"] = c->version;
  return j;
}

std::string run_of_ticket(const std::string& ticket_id) {
  const auto pos = ticket_id.rfind("/t");
  if (pos == std::string::npos || pos == 0) throw Error(ErrorCode::not_found, "ticket " + ticket_id);
  return ticket_id.substr(0, pos);
}

json outcome_json(const engine::DriveResult& r) {
  return {{"outcome", std::string(engine::to_string(r.outcome))}, {"detail", r.detail}, {"run", brief(r.state)}};
}

}  // namespace

Service::Service(Config config) : config_(std::move(config)) {
  init_data_dir(config_);
  store_ = std::make_unique<store::EventStore>(
      config_.data_dir, config_.clock == "logical" ? store::ClockMode::logical : store::ClockMode::wall);
  engine_ = std::make_unique<engine::Engine>(*store_, engine::EngineOptions::for_config(config_));
}

std::unique_ptr<agents::Backend> Service::backend_for(const pipeline::RunState& state,
                                                      std::shared_ptr<const agents::ScriptedScenario>& scenario) const {
  if (!state.scenario_id.empty()) {
    const fs::path file = config_.data_dir / "scenarios" / (util::safe_file_name(state.scenario_id) + ".json");
    if (!fs::exists(file)) throw Error(ErrorCode::not_found, "scenario " + state.scenario_id);
    scenario = std::make_shared<const agents::ScriptedScenario>(agents::load_scenario(file));
    return std::make_unique<agents::ScriptedBackend>(scenario);
  }
  if (config_.backend_url.empty()) return nullptr;
  agents::WireConfig wire;
  wire.base_url = config_.backend_url;
  wire.model = config_.backend_model;
  if (const char* key = std::getenv("HARNESS_BACKEND_KEY"); key) wire.api_key = key;
  wire.templates_dir = config_.data_dir / "prompts";
  return std::make_unique<agents::WireBackend>(wire);
}

std::string Service::submit_issue(const json& request) {
  std::lock_guard lock(mu_);
  if (!request.is_object() || !request.contains("issue")) throw Error(ErrorCode::invalid_issue, "request lacks issue");
  RawIssue issue;
  try {
    issue = issue_from_json(request.at("issue"));
  } catch (const Error& e) {
    throw Error(ErrorCode::invalid_issue, e.what());
  }
  std::string scenario_id;
  json labels = request.value("ground_truth_labels", json::object());
  std::string interface = request.value("interface", "");
  if (request.contains("scenario") && !request["scenario"].is_null()) {
    const agents::ScriptedScenario parsed = agents::scenario_from_json(request["scenario"]);
    scenario_id = parsed.scenario_id;
    util::write_file_atomic(config_.data_dir / "scenarios" / (util::safe_file_name(scenario_id) + ".json"),
                            request["scenario"].dump(2) + "\n");
    if (labels.empty()) labels = parsed.ground_truth_labels;
    if (interface.empty()) interface = parsed.interface_description;
  }
  return engine_->submit(issue, scenario_id, labels, interface);
}

engine::DriveResult Service::drive(const std::string& run_id) {
  std::lock_guard lock(mu_);
  return drive_locked(run_id);
}

engine::DriveResult Service::drive_locked(const std::string& run_id) {
  pipeline::RunState state = engine_->load_state(run_id);
  std::shared_ptr<const agents::ScriptedScenario> scenario;
  auto backend = backend_for(state, scenario);
  engine::DriveResult result;
  try {
    if (!backend) throw Error(ErrorCode::backend_unreachable, "no agent backend configured");
    result = engine_->drive(run_id, *backend, scenario.get());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::backend_unreachable) throw;
    state = engine_->load_state(run_id);
    if (state.phase != pipeline::Phase::halted && state.phase != pipeline::Phase::done) {
      engine_->commit(run_id, state, {EventKind::run_halted, {{"reason", e.what()}}});
    }
    result = {state, engine::Outcome::halted, e.what()};
  }
  record_memory();
  return result;
}

ScenarioRun Service::run_scenario(const fs::path& scenario_file) {
  json j;
  try {
    j = json::parse(util::read_file(scenario_file));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse_error, scenario_file.string() + ": " + e.what());
  }
  return run_scenario(j);
}

ScenarioRun Service::run_scenario(const json& scenario) {
  std::lock_guard lock(mu_);
  const agents::ScriptedScenario parsed = agents::scenario_from_json(scenario);
  json request{{"issue", parsed.issue}, {"scenario", scenario}};
  ScenarioRun run;
  run.run_id = submit_issue(request);
  run.result = drive_locked(run.run_id);
  return run;
}

json Service::list_runs() {
  std::lock_guard lock(mu_);
  json out = json::array();
  for (const auto& id : store_->run_ids()) out.push_back(brief(engine_->load_state(id)));
  return out;
}

json Service::run_detail(const std::string& run_id) {
  std::lock_guard lock(mu_);
  const auto events = store_->load(run_id);
  if (events.empty()) throw Error(ErrorCode::not_found, "run " + run_id);
  const pipeline::RunState state = pipeline::fold(events);
  json event_json = json::array();
  json audit = json::array();
  for (const auto& e : events) {
    event_json.push_back(pipeline::to_json(e));
    if (e.kind != EventKind::job_dispatched) continue;
    const auto payload = agents::payload_from_json(e.payload.at("payload"));
    audit.push_back({{"job_id", payload.job_id},
                     {"role", std::string(agents::to_string(payload.role))},
                     {"inputs", e.payload.at("payload").at("inputs")},
                     {"excluded", payload.forbidden},
                     {"violations", agents::audit_payload(payload)}});
  }
  json gates = json::object();
  for (const auto& [name, g] : state.gates) {
    json findings = json::array();
    for (const auto& f : g.findings) findings.push_back(verification::to_json(f));
    gates[name] = {{"verdict", std::string(verification::to_string(g.verdict))}, {"findings", findings}};
    if (g.principal) gates[name]["principal"] = *g.principal;
  }
  json detail = brief(state);
  detail["state"] = pipeline::to_json(state);
  detail["events"] = event_json;
  detail["payload_audit"] = audit;
  detail["gates"] = gates;
  return detail;
}

json Service::pending_tickets() {
  std::lock_guard lock(mu_);
  json out = json::array();
  for (const auto& id : store_->run_ids()) {
    const auto state = engine_->load_state(id);
    for (const auto& t : state.tickets) {
      if (!t.resolved) out.push_back(to_json(t));
    }
  }
  return out;
}

json Service::resolve_ticket(const std::string& ticket_id, const json& decision) {
  std::lock_guard lock(mu_);
  if (!decision.is_object() || !decision.contains("decision") || !decision["decision"].is_string()) {
    throw Error(ErrorCode::shape_mismatch, "resolution needs a decision");
  }
  const std::string principal = decision.value("principal", "");
  if (principal.empty()) throw Error(ErrorCode::shape_mismatch, "resolution needs a principal");
  const std::string run_id = run_of_ticket(ticket_id);
  if (!store_->has_run(run_id)) throw Error(ErrorCode::not_found, "ticket " + ticket_id);
  const std::size_t applied_before = engine_->applied_changes().size();
  const auto state = engine_->resolve(run_id, ticket_id, decision["decision"].get<std::string>(), principal,
                                      decision.value("note", ""));
  json applied = json::array();
  for (std::size_t i = applied_before; i < engine_->applied_changes().size(); ++i) {
    applied.push_back(engine_->applied_changes()[i]);
  }
  json out{{"ticket_id", ticket_id}, {"applied", applied}};
  for (const auto& t : state.tickets) {
    if (t.ticket_id == ticket_id) out["ticket"] = to_json(t);
  }
  if (state.phase != pipeline::Phase::done && state.phase != pipeline::Phase::halted) {
    out["drive"] = outcome_json(drive_locked(run_id));
  } else {
    out["drive"] = {{"outcome", std::string(pipeline::to_string(state.phase))}, {"run", brief(state)}};
  }
  return out;
}

json Service::report_post_merge(const std::string& run_id, const json& report) {
  std::lock_guard lock(mu_);
  engine_->report_post_merge(run_id, report, report.value("reporter", "operator"));
  return outcome_json(drive_locked(run_id));
}

calibration::MetricsReport Service::metrics(const calibration::TimeWindow& window) {
  std::lock_guard lock(mu_);
  return calibration::compute_metrics(store_->all_events(), window);
}

std::string Service::memory_text() {
  std::lock_guard lock(mu_);
  const fs::path file = config_.data_dir / "memory.md";
  return fs::exists(file) ? util::read_file(file) : memory::serialize_memory({});
}

// Appends run outcomes to the rolling section. A cursor file remembers the
// last event folded in, so compression never resurrects evicted entries.
void Service::record_memory() {
  const fs::path file = config_.data_dir / "memory.md";
  const fs::path cursor_file = config_.data_dir / "memory.cursor";
  std::int64_t cursor = 0;
  if (fs::exists(cursor_file)) cursor = std::stoll("0" + util::trim(util::read_file(cursor_file)));
  memory::MemoryDocument doc = fs::exists(file) ? memory::parse_memory(util::read_file(file)) : memory::MemoryDocument{};

  std::map<std::string, std::string> modules;
  std::int64_t last = cursor;
  bool changed = false;
  for (const auto& e : store_->all_events()) {
    if (e.kind == EventKind::contract_compiled_p1) {
      modules[e.run_id] = e.payload.at("contract").value("module_name", "");
    }
    if (e.seq <= cursor) continue;
    last = std::max(last, e.seq);
    memory::MemoryEntry entry;
    entry.id = e.run_id + "-e" + std::to_string(e.seq);
    entry.created_at = e.timestamp;
    entry.source_run = e.run_id;
    const std::string module = modules.count(e.run_id) ? modules[e.run_id] : e.run_id;
    if (e.kind == EventKind::failure_classified) {
      entry.kind = memory::EntryKind::failure_pattern;
      entry.text = module + ": " + e.payload.at("classification").value("class", "") + " in " +
                   e.payload.value("section", "uncovered") + " (" + e.payload.value("summary", "") + ")";
    } else if (e.kind == EventKind::run_done) {
      entry.kind = memory::EntryKind::observation;
      entry.text = module + " merged after " + std::to_string(e.payload.value("implementation_cycles", 0)) +
                   " implementation cycle(s)";
    } else if (e.kind == EventKind::human_decision && e.payload.contains("ticket_id")) {
      entry.kind = memory::EntryKind::decision;
      entry.text = module + ": " + e.payload.value("principal", "") + " decided " + e.payload.value("decision", "") +
                   " on " + e.payload.value("ticket_kind", "");
    } else {
      continue;
    }
    if (memory::find_entry(doc, entry.id)) continue;
    doc = memory::append_rolling(std::move(doc), std::move(entry));
    changed = true;
  }
  if (changed) {
    doc = memory::compress_rolling(std::move(doc), {static_cast<std::size_t>(std::max(1, config_.rolling_cap))}).first;
    util::write_file_atomic(file, memory::serialize_memory(doc));
  }
  if (last != cursor) util::write_file_atomic(cursor_file, std::to_string(last) + "\n");
}

}  // namespace harness::service
