#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness/contract.hpp"
#include "harness/memory.hpp"

namespace harness::agents {

enum class Role {
  contract_compiler,
  implementer,
  test_author,
  product_reviewer,
  architecture_reviewer,
  security_reviewer,
  backend_reviewer,
  frontend_reviewer,
  qa_tester,
  shipping_reviewer,
  arbiter,
  retro,
};

enum class ResponseKind {
  contract_draft,
  contract_refinement,
  code_artifact,
  test_suite,
  review_findings,
  classification,
  retro_proposals,
};

std::string_view to_string(Role r);
std::string_view to_string(ResponseKind k);
std::optional<Role> parse_role(std::string_view s);
std::optional<ResponseKind> parse_response_kind(std::string_view s);
const std::vector<Role>& all_roles();
bool is_reviewer(Role r);
bool kind_allowed(Role r, ResponseKind k);

// A reference to something a job may read. Content is inlined for small
// harness-produced records (issue text, failing assertions, evidence);
// agent artifacts are referenced by the job id that produced them.
struct InputRef {
  std::string kind;   // contract, interface_description, raw_issue, code_artifact, ...
  std::string ref;    // job id or logical name
  std::string owner;  // role that produced it, or "harness"
  nlohmann::json content;
  bool operator==(const InputRef&) const = default;
};

struct JobPayload {
  std::string job_id;
  std::string run_id;
  Role role = Role::implementer;
  int attempt = 1;
  int step = 0;
  std::string route;  // transition qualifier, e.g. implementer_retry
  contract::Contract contract;
  std::vector<memory::MemoryEntry> memory_excerpts;
  std::vector<std::string> specialization_checklists;
  std::vector<InputRef> inputs;
  std::vector<std::string> forbidden;
};

nlohmann::json to_json(const JobPayload& p);
JobPayload payload_from_json(const nlohmann::json& j);

struct AgentResponse {
  std::string job_id;
  Role role = Role::implementer;
  ResponseKind kind = ResponseKind::code_artifact;
  nlohmann::json body;
  std::string raw_transcript;  // retained per role only, never forwarded
};

nlohmann::json to_json(const AgentResponse& r);
AgentResponse response_from_json(const nlohmann::json& j);

// Everything the orchestrator could hand to a job. build_payload keeps only
// what the role is allowed to see and records the rest as exclusions.
struct PayloadContext {
  std::string run_id;
  std::string job_id;
  int step = 0;
  std::string route;
  contract::Contract contract;
  const memory::MemoryDocument* memory = nullptr;
  std::vector<std::string> specialization_checklists;
  std::vector<InputRef> candidates;
};

// Steps at which each role may be dispatched; anything else is a
// state_mismatch.
bool role_permitted_at(Role role, int step);

JobPayload build_payload(const PayloadContext& ctx, Role role, int attempt);

// Independence audit over one payload. Empty result means the payload obeys
// the role's exclusion rules: test authors see only the contract, the
// interface description and their own prior work; nobody sees another
// role's transcript.
std::vector<std::string> audit_payload(const JobPayload& payload);

// ---- scenarios ------------------------------------------------------------

struct ScriptedScenario {
  std::string scenario_id;
  std::map<std::string, nlohmann::json> responses;  // "<role>:<attempt>:<step>"
  nlohmann::json ground_truth_labels = nlohmann::json::object();
  nlohmann::json issue = nlohmann::json::object();
  std::string interface_description;
  nlohmann::json operator_decisions = nlohmann::json::array();
  nlohmann::json post_merge_reports = nlohmann::json::array();

  // Exact key first, then `role:attempt:*`, `role:*:step`, `role:*:*`.
  const nlohmann::json* lookup(Role role, int attempt, int step) const;
};

std::string response_key(Role role, int attempt, int step);
ScriptedScenario scenario_from_json(const nlohmann::json& j);
ScriptedScenario load_scenario(const std::filesystem::path& path);

// ---- backends -------------------------------------------------------------

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  // May throw scenario_incomplete, backend_unreachable or malformed_output.
  virtual AgentResponse invoke(const JobPayload& payload) = 0;
};

// Replays canned responses; deterministic by construction.
class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(std::shared_ptr<const ScriptedScenario> scenario);
  std::string name() const override { return "scripted:" + scenario_->scenario_id; }
  AgentResponse invoke(const JobPayload& payload) override;
  const ScriptedScenario& scenario() const { return *scenario_; }

 private:
  std::shared_ptr<const ScriptedScenario> scenario_;
};

struct WireConfig {
  std::string base_url;  // e.g. http://127.0.0.1:9000
  std::string path = "/v1/chat/completions";
  std::string model = "default";
  std::string api_key;
  std::filesystem::path templates_dir;  // <role>.txt, optional
  int timeout_seconds = 60;
};

// Renders a role prompt template ({{role}}, {{contract}}, {{memory}},
// {{inputs}}, {{checklists}}) and exchanges one chat-completion style
// request. The reply's message content must be JSON {kind, body}.
class WireBackend final : public Backend {
 public:
  explicit WireBackend(WireConfig config);
  std::string name() const override { return "wire:" + config_.base_url; }
  AgentResponse invoke(const JobPayload& payload) override;
  std::string render_prompt(const JobPayload& payload) const;

 private:
  WireConfig config_;
};

// Validates role/kind closure, retries malformed output, and returns the
// cached response when a job id is dispatched again.
class Dispatcher {
 public:
  explicit Dispatcher(int malformed_retries = 2) : retries_(malformed_retries) {}
  AgentResponse dispatch(const JobPayload& payload, Backend& backend);

 private:
  int retries_;
  std::mutex mu_;
  std::map<std::string, AgentResponse> done_;
};

AgentResponse dispatch(const JobPayload& payload, Backend& backend, int malformed_retries);

}  // namespace harness::agents
