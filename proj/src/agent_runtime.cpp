#include "harness/agent_runtime.hpp"

#include <algorithm>
#include <future>
#include <set>

#include <httplib.h>

#include "harness/error.hpp"
#include "harness/util.hpp"

namespace harness::agents {

using nlohmann::json;

namespace {

constexpr std::pair<Role, std::string_view> kRoles[] = {
    {Role::contract_compiler, "contract_compiler"},
    {Role::implementer, "implementer"},
    {Role::test_author, "test_author"},
    {Role::product_reviewer, "product_reviewer"},
    {Role::architecture_reviewer, "architecture_reviewer"},
    {Role::security_reviewer, "security_reviewer"},
    {Role::backend_reviewer, "backend_reviewer"},
    {Role::frontend_reviewer, "frontend_reviewer"},
    {Role::qa_tester, "qa_tester"},
    {Role::shipping_reviewer, "shipping_reviewer"},
    {Role::arbiter, "arbiter"},
    {Role::retro, "retro"},
};

constexpr std::pair<ResponseKind, std::string_view> kKinds[] = {
    {ResponseKind::contract_draft, "contract_draft"},
    {ResponseKind::contract_refinement, "contract_refinement"},
    {ResponseKind::code_artifact, "code_artifact"},
    {ResponseKind::test_suite, "test_suite"},
    {ResponseKind::review_findings, "review_findings"},
    {ResponseKind::classification, "classification"},
    {ResponseKind::retro_proposals, "retro_proposals"},
};

struct InputPolicy {
  std::set<std::string> kinds;
  // Kinds that are only visible when the role itself produced them.
  std::set<std::string> own_only;
  std::vector<std::string> declared;
};

const InputPolicy& policy_for(Role role) {
  static const std::map<Role, InputPolicy> kPolicies = [] {
    std::map<Role, InputPolicy> p;
    p[Role::contract_compiler] = {{"raw_issue", "specializations"}, {}, {"implementation artifacts", "test suites"}};
    p[Role::implementer] = {{"interface_description", "code_artifact", "test_results", "review_findings"},
                            {"code_artifact"},
                            {"test suite source", "test_author transcript"}};
    p[Role::test_author] = {{"interface_description", "own_prior_suite", "calibration_task"},
                            {"own_prior_suite"},
                            {"code_artifact", "implementer transcript", "implementer reasoning", "test_results"}};
    for (Role r : {Role::product_reviewer, Role::architecture_reviewer, Role::security_reviewer,
                   Role::backend_reviewer, Role::frontend_reviewer, Role::shipping_reviewer}) {
      p[r] = {{"code_artifact"}, {}, {"other reviewers' findings", "agent transcripts"}};
    }
    p[Role::qa_tester] = {{"code_artifact", "test_results"}, {}, {"other reviewers' findings", "agent transcripts"}};
    p[Role::arbiter] = {{"failure_evidence", "test_results"}, {}, {"agent transcripts"}};
    p[Role::retro] = {{"failure_history"}, {}, {"agent transcripts"}};
    return p;
  }();
  return kPolicies.at(role);
}

std::string render_inputs(const std::vector<InputRef>& inputs) {
  json arr = json::array();
  for (const auto& in : inputs) {
    arr.push_back({{"kind", in.kind}, {"ref", in.ref}, {"owner", in.owner}, {"content", in.content}});
  }
  return arr.dump(2);
}

void replace_all(std::string& text, const std::string& from, const std::string& to) {
  for (std::size_t pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size())) {
    text.replace(pos, from.size(), to);
  }
}

}  // namespace

std::string_view to_string(Role r) {
  for (const auto& [v, n] : kRoles) {
    if (v == r) return n;
  }
  return "?";
}

std::string_view to_string(ResponseKind k) {
  for (const auto& [v, n] : kKinds) {
    if (v == k) return n;
  }
  return "?";
}

std::optional<Role> parse_role(std::string_view s) {
  for (const auto& [v, n] : kRoles) {
    if (n == s) return v;
  }
  return std::nullopt;
}

std::optional<ResponseKind> parse_response_kind(std::string_view s) {
  for (const auto& [v, n] : kKinds) {
    if (n == s) return v;
  }
  return std::nullopt;
}

const std::vector<Role>& all_roles() {
  static const std::vector<Role> kAll = [] {
    std::vector<Role> v;
    for (const auto& [r, _] : kRoles) v.push_back(r);
    return v;
  }();
  return kAll;
}

bool is_reviewer(Role r) {
  switch (r) {
    case Role::product_reviewer:
    case Role::architecture_reviewer:
    case Role::security_reviewer:
    case Role::backend_reviewer:
    case Role::frontend_reviewer:
    case Role::qa_tester:
    case Role::shipping_reviewer:
      return true;
    default:
      return false;
  }
}

bool kind_allowed(Role r, ResponseKind k) {
  switch (r) {
    case Role::contract_compiler:
      return k == ResponseKind::contract_draft || k == ResponseKind::contract_refinement;
    case Role::implementer:
      return k == ResponseKind::code_artifact;
    case Role::test_author:
      return k == ResponseKind::test_suite;
    case Role::arbiter:
      return k == ResponseKind::classification;
    case Role::retro:
      return k == ResponseKind::retro_proposals;
    default:
      return is_reviewer(r) && k == ResponseKind::review_findings;
  }
}

bool role_permitted_at(Role role, int step) {
  switch (role) {
    case Role::contract_compiler: return step == 2 || step == 3;
    case Role::product_reviewer: return step == 4;
    case Role::architecture_reviewer: return step == 5 || step == 14;
    case Role::security_reviewer:
    case Role::backend_reviewer:
    case Role::frontend_reviewer: return step == 14;
    case Role::implementer: return step == 7;
    case Role::test_author: return step == 8 || step == 11;
    case Role::arbiter: return step == 12;
    case Role::qa_tester: return step == 15;
    case Role::shipping_reviewer: return step == 16;
    case Role::retro: return step == 17;
  }
  return false;
}

json to_json(const JobPayload& p) {
  json excerpts = json::array();
  for (const auto& e : p.memory_excerpts) {
    json entry{{"id", e.id}, {"created_at", e.created_at}, {"kind", memory::to_string(e.kind)}, {"text", e.text}};
    if (e.source_run) entry["source_run"] = *e.source_run;
    excerpts.push_back(entry);
  }
  json inputs = json::array();
  for (const auto& in : p.inputs) {
    inputs.push_back({{"kind", in.kind}, {"ref", in.ref}, {"owner", in.owner}, {"content", in.content}});
  }
  return {{"job_id", p.job_id},
          {"run_id", p.run_id},
          {"role", to_string(p.role)},
          {"attempt", p.attempt},
          {"step", p.step},
          {"route", p.route},
          {"contract", contract::to_json(p.contract)},
          {"memory_excerpts", excerpts},
          {"specialization_checklists", p.specialization_checklists},
          {"inputs", inputs},
          {"forbidden", p.forbidden}};
}

JobPayload payload_from_json(const json& j) {
  JobPayload p;
  try {
    p.job_id = j.at("job_id").get<std::string>();
    p.run_id = j.at("run_id").get<std::string>();
    const auto role = parse_role(j.at("role").get<std::string>());
    if (!role) throw Error(ErrorCode::parse_error, "payload: unknown role");
    p.role = *role;
    p.attempt = j.at("attempt").get<int>();
    p.step = j.at("step").get<int>();
    p.route = j.value("route", "");
    p.contract = contract::from_json(j.at("contract"));
    for (const auto& e : j.at("memory_excerpts")) {
      memory::MemoryEntry entry;
      entry.id = e.at("id").get<std::string>();
      entry.created_at = e.at("created_at").get<std::string>();
      entry.kind = memory::parse_entry_kind(e.at("kind").get<std::string>()).value_or(memory::EntryKind::observation);
      entry.text = e.at("text").get<std::string>();
      if (e.contains("source_run")) entry.source_run = e["source_run"].get<std::string>();
      p.memory_excerpts.push_back(std::move(entry));
    }
    p.specialization_checklists = j.value("specialization_checklists", std::vector<std::string>{});
    for (const auto& in : j.at("inputs")) {
      p.inputs.push_back({in.at("kind").get<std::string>(), in.value("ref", ""), in.value("owner", ""),
                          in.value("content", json())});
    }
    p.forbidden = j.value("forbidden", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("payload: ") + e.what());
  }
  return p;
}

json to_json(const AgentResponse& r) {
  return {{"job_id", r.job_id},
          {"role", to_string(r.role)},
          {"kind", to_string(r.kind)},
          {"body", r.body},
          {"raw_transcript", r.raw_transcript}};
}

AgentResponse response_from_json(const json& j) {
  AgentResponse r;
  try {
    r.job_id = j.value("job_id", "");
    const auto role = parse_role(j.at("role").get<std::string>());
    const auto kind = parse_response_kind(j.at("kind").get<std::string>());
    if (!role || !kind) throw Error(ErrorCode::parse_error, "response: unknown role or kind");
    r.role = *role;
    r.kind = *kind;
    r.body = j.value("body", json::object());
    r.raw_transcript = j.value("raw_transcript", "");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("response: ") + e.what());
  }
  return r;
}

JobPayload build_payload(const PayloadContext& ctx, Role role, int attempt) {
  if (!role_permitted_at(role, ctx.step)) {
    throw Error(ErrorCode::state_mismatch,
                std::string(to_string(role)) + " cannot be dispatched at step " + std::to_string(ctx.step));
  }
  if (attempt < 1) throw Error(ErrorCode::invalid_argument, "attempt must be >= 1");
  const InputPolicy& policy = policy_for(role);

  JobPayload p;
  p.job_id = ctx.job_id;
  p.run_id = ctx.run_id;
  p.role = role;
  p.attempt = attempt;
  p.step = ctx.step;
  p.route = ctx.route;
  p.contract = ctx.contract;
  if (ctx.memory) p.memory_excerpts = memory::select_excerpts(*ctx.memory, ctx.contract.module_name);
  if (is_reviewer(role)) p.specialization_checklists = ctx.specialization_checklists;
  p.forbidden = policy.declared;
  p.forbidden.push_back("transcripts of other roles");

  const std::string self(to_string(role));
  for (const auto& in : ctx.candidates) {
    const bool kind_ok = policy.kinds.count(in.kind) > 0;
    const bool owner_ok = !policy.own_only.count(in.kind) || in.owner == self;
    const bool transcript = in.kind == "transcript" && in.owner != self;
    if (kind_ok && owner_ok && !transcript) {
      p.inputs.push_back(in);
    } else {
      p.forbidden.push_back("excluded " + in.kind + " from " + in.owner + (in.ref.empty() ? "" : " (" + in.ref + ")"));
    }
  }
  if (role == Role::test_author || role == Role::implementer) {
    const bool has_interface = std::any_of(p.inputs.begin(), p.inputs.end(),
                                           [](const InputRef& in) { return in.kind == "interface_description"; });
    if (!has_interface) {
      json surfaces = json::array();
      for (const auto& s : ctx.contract.surfaces) {
        surfaces.push_back(std::string(contract::to_string(s.kind)) + " " + s.method_or_trigger + " " + s.path_or_name);
      }
      p.inputs.push_back({"interface_description", "contract.surfaces", "harness", surfaces});
    }
  }
  return p;
}

std::vector<std::string> audit_payload(const JobPayload& payload) {
  std::vector<std::string> violations;
  const std::string self(to_string(payload.role));
  if (!role_permitted_at(payload.role, payload.step)) {
    violations.push_back(payload.job_id + ": role " + self + " at step " + std::to_string(payload.step));
  }
  for (const auto& in : payload.inputs) {
    if (in.kind == "transcript" && in.owner != self) {
      violations.push_back(payload.job_id + ": carries " + in.owner + " transcript");
    }
    if (in.content.dump().find("\"raw_transcript\"") != std::string::npos) {
      violations.push_back(payload.job_id + ": input " + in.ref + " embeds a raw transcript");
    }
    if (payload.role == Role::test_author) {
      static const std::set<std::string> kAllowed = {"interface_description", "own_prior_suite", "calibration_task"};
      if (!kAllowed.count(in.kind)) {
        violations.push_back(payload.job_id + ": test_author payload holds " + in.kind);
      }
      if (in.owner == "implementer") {
        violations.push_back(payload.job_id + ": test_author payload holds implementer output " + in.ref);
      }
      if (in.kind == "own_prior_suite" && in.owner != "test_author") {
        violations.push_back(payload.job_id + ": prior suite owned by " + in.owner);
      }
    }
  }
  return violations;
}

// ---- scenarios ------------------------------------------------------------

std::string response_key(Role role, int attempt, int step) {
  return std::string(to_string(role)) + ":" + std::to_string(attempt) + ":" + std::to_string(step);
}

const json* ScriptedScenario::lookup(Role role, int attempt, int step) const {
  const std::string r(to_string(role));
  for (const std::string& key : {response_key(role, attempt, step), r + ":" + std::to_string(attempt) + ":*",
                                 r + ":*:" + std::to_string(step), r + ":*:*"}) {
    if (auto it = responses.find(key); it != responses.end()) return &it->second;
  }
  return nullptr;
}

ScriptedScenario scenario_from_json(const json& j) {
  ScriptedScenario s;
  try {
    s.scenario_id = j.at("scenario_id").get<std::string>();
    for (const auto& [key, value] : j.at("responses").items()) {
      const auto first = key.find(':');
      const auto second = key.find(':', first == std::string::npos ? first : first + 1);
      if (first == std::string::npos || second == std::string::npos || !parse_role(key.substr(0, first))) {
        throw Error(ErrorCode::parse_error, "scenario " + s.scenario_id + ": bad response key '" + key + "'");
      }
      if (!value.is_object() || !value.contains("kind")) {
        throw Error(ErrorCode::parse_error, "scenario " + s.scenario_id + ": response '" + key + "' lacks kind");
      }
      s.responses.emplace(key, value);
    }
    s.ground_truth_labels = j.value("ground_truth_labels", json::object());
    s.issue = j.value("issue", json::object());
    s.interface_description = j.value("interface", "");
    s.operator_decisions = j.value("operator_decisions", json::array());
    s.post_merge_reports = j.value("post_merge_reports", json::array());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("scenario: ") + e.what());
  }
  return s;
}

ScriptedScenario load_scenario(const std::filesystem::path& path) {
  try {
    return scenario_from_json(json::parse(util::read_file(path)));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse_error, path.string() + ": " + e.what());
  }
}

// ---- backends -------------------------------------------------------------

ScriptedBackend::ScriptedBackend(std::shared_ptr<const ScriptedScenario> scenario) : scenario_(std::move(scenario)) {}

AgentResponse ScriptedBackend::invoke(const JobPayload& payload) {
  const json* canned = scenario_->lookup(payload.role, payload.attempt, payload.step);
  if (!canned) {
    throw Error(ErrorCode::scenario_incomplete, scenario_->scenario_id + " has no response for " +
                                                    response_key(payload.role, payload.attempt, payload.step));
  }
  const auto kind = parse_response_kind(canned->at("kind").get<std::string>());
  if (!kind) throw Error(ErrorCode::malformed_output, "scenario response has unknown kind");
  AgentResponse r;
  r.job_id = payload.job_id;
  r.role = payload.role;
  r.kind = *kind;
  r.body = canned->value("body", json::object());
  r.raw_transcript = canned->value("transcript", "");
  return r;
}

WireBackend::WireBackend(WireConfig config) : config_(std::move(config)) {}

std::string WireBackend::render_prompt(const JobPayload& payload) const {
  std::string tmpl;
  const auto file = config_.templates_dir / (std::string(to_string(payload.role)) + ".txt");
  if (!config_.templates_dir.empty() && std::filesystem::exists(file)) {
    tmpl = util::read_file(file);
  } else {
    tmpl =
        "You are the {{role}} agent. Work only from the contract below.\n\nContract:\n{{contract}}\n\n"
        "Memory:\n{{memory}}\n\nInputs:\n{{inputs}}\n\nChecklists:\n{{checklists}}\n\n"
        "Reply with a single JSON object {\"kind\": ..., \"body\": ...}.\n";
  }
  json memory_json = json::array();
  for (const auto& e : payload.memory_excerpts) {
    memory_json.push_back({{"id", e.id}, {"kind", memory::to_string(e.kind)}, {"text", e.text}});
  }
  replace_all(tmpl, "{{role}}", std::string(to_string(payload.role)));
  replace_all(tmpl, "{{contract}}", contract::serialize_contract(payload.contract));
  replace_all(tmpl, "{{memory}}", memory_json.dump(2));
  replace_all(tmpl, "{{inputs}}", render_inputs(payload.inputs));
  replace_all(tmpl, "{{checklists}}", json(payload.specialization_checklists).dump(2));
  return tmpl;
}

AgentResponse WireBackend::invoke(const JobPayload& payload) {
  httplib::Client client(config_.base_url);
  client.set_connection_timeout(config_.timeout_seconds, 0);
  client.set_read_timeout(config_.timeout_seconds, 0);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  const json request{{"model", config_.model},
                     {"messages",
                      json::array({{{"role", "system"}, {"content", render_prompt(payload)}},
                                   {{"role", "user"}, {"content", to_json(payload).dump()}}})},
                     {"response_format", {{"type", "json_object"}}}};
  auto res = client.Post(config_.path, headers, request.dump(), "application/json");
  if (!res) {
    throw Error(ErrorCode::backend_unreachable, config_.base_url + ": " + httplib::to_string(res.error()));
  }
  if (res->status >= 500) throw Error(ErrorCode::backend_unreachable, "HTTP " + std::to_string(res->status));
  if (res->status != 200) throw Error(ErrorCode::malformed_output, "HTTP " + std::to_string(res->status));

  std::string content;
  json reply;
  try {
    content = json::parse(res->body).at("choices").at(0).at("message").at("content").get<std::string>();
    reply = json::parse(content);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::malformed_output, std::string("unparseable reply: ") + e.what());
  }
  if (!reply.is_object() || !reply.contains("kind") || !reply["kind"].is_string()) {
    throw Error(ErrorCode::malformed_output, "reply lacks kind");
  }
  const auto kind = parse_response_kind(reply["kind"].get<std::string>());
  if (!kind) throw Error(ErrorCode::malformed_output, "reply has unknown kind");
  AgentResponse r;
  r.job_id = payload.job_id;
  r.role = payload.role;
  r.kind = *kind;
  r.body = reply.value("body", json::object());
  r.raw_transcript = content;
  return r;
}

AgentResponse dispatch(const JobPayload& payload, Backend& backend, int malformed_retries) {
  std::string last;
  for (int attempt = 0; attempt <= malformed_retries; ++attempt) {
    AgentResponse r;
    try {
      r = backend.invoke(payload);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::malformed_output) throw;
      last = e.what();
      continue;
    }
    if (r.role != payload.role || !kind_allowed(payload.role, r.kind)) {
      throw Error(ErrorCode::role_violation, std::string(to_string(payload.role)) + " may not return " +
                                                 std::string(to_string(r.kind)));
    }
    r.job_id = payload.job_id;
    return r;
  }
  throw Error(ErrorCode::malformed_after_retries, payload.job_id + ": " + last);
}

AgentResponse Dispatcher::dispatch(const JobPayload& payload, Backend& backend) {
  {
    std::lock_guard lock(mu_);
    if (auto it = done_.find(payload.job_id); it != done_.end()) return it->second;
  }
  AgentResponse r = agents::dispatch(payload, backend, retries_);
  std::lock_guard lock(mu_);
  // A concurrent duplicate may have finished first; the first result wins.
  return done_.emplace(payload.job_id, std::move(r)).first->second;
}

}  // namespace harness::agents
