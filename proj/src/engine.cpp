#include "harness/engine.hpp"

#include <algorithm>
#include <future>
#include <set>

#include "harness/calibration.hpp"
#include "harness/compiler.hpp"
#include "harness/error.hpp"
#include "harness/memory.hpp"
#include "harness/util.hpp"
#include "harness/verification.hpp"

namespace harness::engine {

using agents::InputRef;
using agents::Role;
using nlohmann::json;
using pipeline::EventDraft;
using pipeline::EventKind;
using pipeline::JobRecord;
using pipeline::Phase;
using pipeline::RunState;

EngineOptions EngineOptions::for_config(const Config& config) {
  EngineOptions o;
  o.config = config;
  o.specializations_dir = config.data_dir / "specializations";
  o.lint_rules_file = config.data_dir / "lint_rules.json";
  o.memory_file = config.data_dir / "memory.md";
  o.workspace_root = config.data_dir / "workspace";
  o.transcripts_dir = config.data_dir / "transcripts";
  return o;
}

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::done: return "done";
    case Outcome::halted: return "halted";
    case Outcome::awaiting_operator: return "awaiting_operator";
  }
  return "?";
}

std::vector<verification::TestSuite> regression_suites(const std::vector<pipeline::RunEvent>& events,
                                                       const std::string& module) {
  std::vector<verification::TestSuite> out;
  for (const auto& e : events) {
    if (e.kind != EventKind::regression_promoted || e.payload.value("module", "") != module) continue;
    auto suite = verification::suite_from_json(e.payload.at("suite"));
    const bool seen = std::any_of(out.begin(), out.end(), [&](const auto& s) { return s.suite_id == suite.suite_id; });
    if (!seen) out.push_back(std::move(suite));
  }
  return out;
}

namespace {

constexpr int kMaxIterations = 20000;

const char* gate_for_step(int step) {
  switch (step) {
    case 4: return "product_review";
    case 5: return "engineering_review";
    case 14: return "structural_review";
    case 15: return "qa";
    case 16: return "shipping";
    default: return "";
  }
}

std::vector<const JobRecord*> jobs_since(const RunState& s, std::int64_t seq, std::optional<Role> role = {}) {
  std::vector<const JobRecord*> out;
  for (const auto& j : s.jobs) {
    if (j.dispatched_seq > seq && (!role || j.role == *role)) out.push_back(&j);
  }
  return out;
}

std::optional<arbiter::FailureClass> class_from(const std::string& s) { return arbiter::parse_failure_class(s); }

json findings_array(const std::vector<verification::ReviewFinding>& findings) {
  json arr = json::array();
  for (const auto& f : findings) arr.push_back(verification::to_json(f));
  return arr;
}

json tests_of(const arbiter::FailureEvidence& ev) {
  json arr = json::array();
  for (const auto& t : ev.failing_tests) arr.push_back({{"suite_id", ev.suite_id}, {"test_id", t.test_id}});
  return arr;
}

std::string summary_of(const arbiter::FailureEvidence& ev) {
  for (const auto& t : ev.failing_tests) {
    const std::string root = arbiter::root_assertion(t.assertion);
    if (!root.empty()) return root;
  }
  if (!ev.environment_flags.empty()) return "environment: " + ev.environment_flags.front();
  return ev.group_key;
}

// Holds everything one drive() call needs and turns the folded state into
// the next event.
class Driver {
 public:
  Driver(Engine& engine, std::string run_id, agents::Backend& backend, const agents::ScriptedScenario* scenario)
      : engine_(engine), run_id_(std::move(run_id)), backend_(backend), scenario_(scenario),
        dispatcher_(engine.options().config.malformed_retries) {
    const auto& o = engine_.options();
    if (!o.memory_file.empty() && std::filesystem::exists(o.memory_file)) {
      memory_ = memory::parse_memory(util::read_file(o.memory_file));
    }
    if (!o.lint_rules_file.empty()) extra_rules_ = calibration::load_lint_rules(o.lint_rules_file);
    state_ = engine_.load_state(run_id_);
  }

  DriveResult run() {
    DriveResult result;
    for (int i = 0; i < kMaxIterations; ++i) {
      if (!step(result)) {
        result.state = state_;
        return result;
      }
    }
    throw Error(ErrorCode::state_mismatch, run_id_ + " makes no progress at step " + state_.step_key());
  }

 private:
  const Config& config() const { return engine_.options().config; }

  void emit(EventKind kind, json payload) { engine_.commit(run_id_, state_, EventDraft{kind, std::move(payload)}); }

  void halt(const std::string& reason) { emit(EventKind::run_halted, {{"reason", reason}}); }

  void pause(const std::string& reason, TicketKind kind, json payload) {
    emit(EventKind::run_halted,
         {{"reason", reason}, {"ticket", {{"kind", std::string(harness::to_string(kind))}, {"payload", payload}}}});
  }

  // ---- operator decisions scripted by the scenario ------------------------

  const json* scripted_decision(TicketKind kind) const {
    if (!scenario_) return nullptr;
    const std::string name(harness::to_string(kind));
    int resolved = 0;
    for (const auto& t : state_.tickets) {
      if (t.kind == kind && t.resolved) ++resolved;
    }
    int k = 0;
    for (const auto& d : scenario_->operator_decisions) {
      if (d.value("ticket_kind", "") != name) continue;
      if (k++ == resolved) return &d;
    }
    return nullptr;
  }

  bool resolve_scripted(const HumanTicket& ticket) {
    const json* d = scripted_decision(ticket.kind);
    if (!d) return false;
    state_ = engine_.resolve(run_id_, ticket.ticket_id, d->value("decision", ""), d->value("principal", "operator"),
                             d->value("note", ""));
    return true;
  }

  // ---- jobs -----------------------------------------------------------------

  void dispatch(Role role, const std::string& route, const contract::Contract& contract,
                std::vector<InputRef> candidates) {
    agents::PayloadContext ctx;
    ctx.run_id = run_id_;
    ctx.job_id = run_id_ + "/j" + std::to_string(state_.jobs.size() + 1);
    ctx.step = state_.step;
    ctx.route = route;
    ctx.contract = contract;
    ctx.memory = &memory_;
    ctx.specialization_checklists = state_.checklists;
    ctx.candidates = std::move(candidates);
    const agents::JobPayload payload = agents::build_payload(ctx, role, state_.role_attempts(role) + 1);
    emit(EventKind::job_dispatched, {{"route", route}, {"payload", agents::to_json(payload)}});
  }

  // Invokes every outstanding job concurrently and records the answers in
  // dispatch order. Returns false when the run was halted instead.
  bool answer_outstanding() {
    const auto outstanding = state_.outstanding_jobs();
    std::vector<agents::JobPayload> payloads;
    for (const auto* j : outstanding) payloads.push_back(agents::payload_from_json(j->payload));
    std::vector<std::future<agents::AgentResponse>> futures;
    for (const auto& p : payloads) {
      futures.push_back(std::async(std::launch::async, [this, &p] { return dispatcher_.dispatch(p, backend_); }));
    }
    std::vector<agents::AgentResponse> responses;
    std::optional<Error> failure;
    for (auto& f : futures) {
      try {
        responses.push_back(f.get());
      } catch (const Error& e) {
        if (!failure) failure = e;
      }
    }
    if (failure) {
      if (failure->code() == ErrorCode::backend_unreachable) throw *failure;
      halt(failure->what());
      return false;
    }
    for (std::size_t i = 0; i < responses.size(); ++i) {
      const auto& r = responses[i];
      keep_transcript(r);
      emit(EventKind::response_received, {{"job_id", r.job_id},
                                          {"route", payloads[i].route},
                                          {"role", std::string(agents::to_string(r.role))},
                                          {"kind", std::string(agents::to_string(r.kind))},
                                          {"body", r.body},
                                          {"transcript_digest", util::fnv1a_hex(r.raw_transcript)}});
    }
    return true;
  }

  void keep_transcript(const agents::AgentResponse& r) const {
    const auto& dir = engine_.options().transcripts_dir;
    if (dir.empty() || r.raw_transcript.empty()) return;
    const auto file = dir / std::string(agents::to_string(r.role)) / (util::safe_file_name(r.job_id) + ".txt");
    std::filesystem::create_directories(file.parent_path());
    util::write_file_atomic(file, r.raw_transcript);
  }

  // ---- candidate inputs -----------------------------------------------------

  std::optional<InputRef> interface_input() const {
    if (state_.interface_description.empty()) return std::nullopt;
    return InputRef{"interface_description", "issue.interface", "harness", state_.interface_description};
  }

  const JobRecord* artifact_job() const { return state_.artifact_job ? state_.find_job(*state_.artifact_job) : nullptr; }

  std::optional<InputRef> artifact_input() const {
    const JobRecord* a = artifact_job();
    if (!a) return std::nullopt;
    return InputRef{"code_artifact", a->job_id, "implementer", a->body};
  }

  const verification::TestSuite* authored_suite() const {
    for (auto it = state_.suites.rbegin(); it != state_.suites.rend(); ++it) {
      if (it->origin == verification::SuiteOrigin::test_author) return &*it;
    }
    return nullptr;
  }

  std::vector<InputRef> transcript_refs(Role except) const {
    std::vector<InputRef> out;
    for (const auto& j : state_.jobs) {
      if (!j.answered || j.role == except || j.transcript_digest.empty()) continue;
      out.push_back({"transcript", j.job_id, std::string(agents::to_string(j.role)), j.transcript_digest});
    }
    return out;
  }

  std::vector<InputRef> implementer_inputs() const {
    std::vector<InputRef> in;
    if (auto i = interface_input()) in.push_back(*i);
    if (auto a = artifact_input()) in.push_back(*a);
    if (!state_.last_results.empty()) in.push_back({"test_results", "ci", "harness", state_.last_results});
    if (!state_.last_findings.empty()) {
      in.push_back({"review_findings", "gates", "harness", findings_array(state_.last_findings)});
    }
    if (const auto* s = authored_suite()) in.push_back({"test_suite", s->suite_id, "test_author", verification::to_json(*s)});
    for (auto& t : transcript_refs(Role::implementer)) in.push_back(std::move(t));
    return in;
  }

  std::vector<InputRef> test_author_inputs(bool calibration) const {
    std::vector<InputRef> in;
    if (auto i = interface_input()) in.push_back(*i);
    if (const auto* s = authored_suite()) {
      in.push_back({"own_prior_suite", s->suite_id, "test_author", verification::to_json(*s)});
    }
    if (calibration) {
      in.push_back({"calibration_task", "noise", "harness",
                    {{"noisy_groups", state_.noise_groups},
                     {"instruction", "make the flagged tests deterministic without weakening them"}}});
    }
    // Offered so the exclusion is recorded in the payload; build_payload drops them.
    if (auto a = artifact_input()) in.push_back(*a);
    for (const auto& j : state_.jobs) {
      if (j.role == Role::implementer && !j.discarded && j.answered) {
        in.push_back({"code_artifact", j.job_id, "implementer", j.body});
      }
    }
    if (!state_.last_results.empty()) in.push_back({"test_results", "ci", "harness", state_.last_results});
    for (auto& t : transcript_refs(Role::test_author)) in.push_back(std::move(t));
    return in;
  }

  // ---- steps ----------------------------------------------------------------

  bool step(DriveResult& r) {
    if (state_.phase == Phase::halted) {
      r.outcome = Outcome::halted;
      r.detail = state_.halt_reason;
      return false;
    }
    if (state_.pending_human) {
      const HumanTicket* t = nullptr;
      for (const auto& x : state_.tickets) {
        if (x.ticket_id == *state_.pending_human) t = &x;
      }
      if (t && resolve_scripted(*t)) return true;
      r.outcome = Outcome::awaiting_operator;
      r.detail = "ticket " + *state_.pending_human;
      return false;
    }
    if (state_.phase == Phase::done) return post_merge(r);
    if (state_.step == 8) {
      dispatch(Role::test_author, "test_author", *state_.final_contract(), test_author_inputs(false));
      return true;
    }
    if (!state_.outstanding_jobs().empty()) return answer_outstanding();

    switch (state_.step) {
      case 2: return compile_pass1();
      case 3: return refine_pass2();
      case 4:
      case 5: return contract_gate();
      case 7: return implement();
      case 11: return verify();
      case 12: return arbitrate();
      case 13: return correct();
      case 14: return structural();
      case 15:
      case 16: return single_reviewer_gate();
      case 17: return retro();
      case 18:
        emit(EventKind::run_done, {{"implementation_cycles", state_.implementation_cycles}});
        return true;
      default:
        throw Error(ErrorCode::state_mismatch, run_id_ + " has nothing to do at step " + state_.step_key());
    }
  }

  std::vector<memory::ScoredSpecialization> chosen_specializations() const {
    const auto& dir = engine_.options().specializations_dir;
    std::vector<memory::SpecializationRecord> registry;
    if (!dir.empty() && std::filesystem::exists(dir)) registry = memory::load_registry(dir);
    return compiler::select_specializations(state_.issue, registry, config().specialization_confidence);
  }

  bool compile_pass1() {
    const auto jobs = jobs_since(state_, state_.entered_seq, Role::contract_compiler);
    if (jobs.empty()) {
      json specs = json::array();
      for (const auto& s : chosen_specializations()) {
        specs.push_back({{"record", memory::to_json(s.record)}, {"confidence", s.confidence}});
      }
      dispatch(Role::contract_compiler, "contract_compiler", {},
               {{"raw_issue", state_.issue.id, "harness", to_json(state_.issue)},
                {"specializations", "registry", "harness", specs}});
      return true;
    }
    const JobRecord& job = *jobs.back();
    std::vector<memory::ScoredSpecialization> specs;
    const auto payload = agents::payload_from_json(job.payload);
    for (const auto& in : payload.inputs) {
      if (in.kind != "specializations") continue;
      for (const auto& s : in.content) specs.push_back({memory::specialization_from_json(s.at("record")), s.at("confidence")});
    }
    try {
      const contract::Contract draft = compiler::accept_pass1_draft(state_.issue, specs, job.body);
      json chosen = json::array();
      std::vector<std::string> checklists;
      for (const auto& s : specs) {
        chosen.push_back({{"domain", s.record.domain}, {"confidence", s.confidence}});
        for (const auto& item : s.record.review_checklist_items) checklists.push_back(item);
      }
      json findings = json::array();
      for (const auto& f : compiler::lint_ambiguity(draft, extra_rules_)) findings.push_back(compiler::to_json(f));
      emit(EventKind::contract_compiled_p1,
           {{"contract", contract::to_json(draft)}, {"specializations", chosen}, {"checklists", checklists},
            {"findings", findings}});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::agent_response_invalid && e.code() != ErrorCode::parse_error) throw;
      if (static_cast<int>(jobs.size()) > config().malformed_retries) {
        halt(std::string("pass 1 rejected: ") + e.what());
      } else {
        dispatch(Role::contract_compiler, "contract_compiler", {},
                 {{"raw_issue", state_.issue.id, "harness", to_json(state_.issue)},
                  payload.inputs.size() > 1 ? payload.inputs[1] : InputRef{"specializations", "registry", "harness", json::array()}});
      }
    }
    return true;
  }

  bool refine_pass2() {
    const contract::Contract draft = *state_.current_contract();
    const auto jobs = jobs_since(state_, state_.entered_seq, Role::contract_compiler);
    const auto ask = [&] {
      dispatch(Role::contract_compiler, "contract_compiler", draft,
               {{"raw_issue", state_.issue.id, "harness", to_json(state_.issue)}});
    };
    if (jobs.empty()) {
      ask();
      return true;
    }
    try {
      const compiler::Pass2Result refined = compiler::apply_refinement(draft, jobs.back()->body, extra_rules_);
      json findings = json::array();
      for (const auto& f : refined.findings) findings.push_back(compiler::to_json(f));
      json removals = json::array();
      for (const auto& rm : refined.removals) removals.push_back({{"id", rm.id}, {"reason", rm.reason}});
      emit(EventKind::contract_refined_p2,
           {{"contract", contract::to_json(refined.contract)}, {"findings", findings}, {"removals", removals}});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::monotonicity_violation && e.code() != ErrorCode::agent_response_invalid &&
          e.code() != ErrorCode::parse_error) {
        throw;
      }
      if (static_cast<int>(jobs.size()) > config().malformed_retries) {
        halt(std::string("pass 2 rejected: ") + e.what());
      } else {
        ask();
      }
    }
    return true;
  }

  // Reviewer jobs at the current step, dispatched in order; returns the
  // combined findings once every reviewer has answered.
  std::optional<std::vector<verification::ReviewFinding>> collect_reviews(const std::vector<Role>& roles,
                                                                          const contract::Contract& contract,
                                                                          std::vector<InputRef> inputs) {
    std::vector<verification::ReviewFinding> findings;
    for (Role role : roles) {
      const auto jobs = jobs_since(state_, state_.entered_seq, role);
      if (jobs.empty()) {
        dispatch(role, std::string(agents::to_string(role)), contract, inputs);
        return std::nullopt;
      }
      for (auto& f : verification::findings_from_body(role, jobs.back()->body)) findings.push_back(std::move(f));
    }
    return findings;
  }

  bool gate_recorded_here(const std::string& gate) const {
    auto it = state_.gates.find(gate);
    return it != state_.gates.end() && it->second.recorded_seq > state_.entered_seq;
  }

  void record_gate(const std::string& gate, const std::vector<verification::ReviewFinding>& findings, json extra = {}) {
    json p{{"gate", gate},
           {"verdict", std::string(verification::to_string(verification::gate_verdict(findings)))},
           {"findings", findings_array(findings)}};
    if (extra.is_object()) p.update(extra);
    emit(EventKind::gate_recorded, p);
  }

  bool contract_gate() {
    const std::string gate = gate_for_step(state_.step);
    if (gate_recorded_here(gate)) {
      const auto& g = state_.gates.at(gate);
      pause(gate + " failed", TicketKind::contract_approval, {{"gate", gate}, {"findings", findings_array(g.findings)}});
      return true;
    }
    const Role role = state_.step == 4 ? Role::product_reviewer : Role::architecture_reviewer;
    auto findings = collect_reviews({role}, *state_.current_contract(), {});
    if (!findings) return true;
    if (state_.step == 5) {
      contract::Contract final = *state_.current_contract();
      final.status = contract::Status::final;
      for (const auto& v : contract::validate_contract(final)) {
        findings->push_back({"harness", verification::FindingSeverity::blocker, std::nullopt,
                             "contract invalid at " + v.field + ": " + v.rule, std::nullopt});
      }
    }
    record_gate(gate, *findings);
    return true;
  }

  bool implement() {
    RunState probe = state_;
    ++probe.implementation_cycles;
    if (auto ticket = pipeline::max_cycles_guard(probe, config().max_cycles)) {
      pause(ticket->payload.value("reason", "cycle limit"), TicketKind::run_halt, ticket->payload);
      return true;
    }
    dispatch(Role::implementer, state_.route, *state_.final_contract(), implementer_inputs());
    return true;
  }

  bool verify() {
    if (auto ticket = pipeline::noise_rounds_guard(state_, config().max_cycles)) {
      pause(ticket->payload.value("reason", "noise limit"), TicketKind::run_halt, ticket->payload);
      return true;
    }
    if (state_.noise_mode == "verifier" && !state_.calibration_done) {
      dispatch(Role::test_author, "test_author_calibration", *state_.final_contract(), test_author_inputs(true));
      return true;
    }
    const contract::Contract& contract = *state_.final_contract();
    verification::Workspace ws(engine_.options().workspace_root / util::safe_file_name(run_id_));
    std::map<std::string, std::string> files;
    std::vector<contract::ClauseId> touched;
    if (const JobRecord* a = artifact_job()) {
      files = a->body.value("files", std::map<std::string, std::string>{});
      touched = a->body.value("touched_clauses", std::vector<std::string>{});
    }
    ws.install_artifact(files);

    std::vector<verification::TestSuite> suites = state_.suites;
    for (auto& reg : regression_suites(engine_.store().all_events(), state_.module_name())) {
      const bool clash = std::any_of(suites.begin(), suites.end(), [&](const auto& s) { return s.suite_id == reg.suite_id; });
      if (!clash) suites.push_back(std::move(reg));
    }
    for (const auto& s : suites) ws.install_suite(s);

    const int attempt = state_.ci_rounds + 1;
    std::vector<verification::TestResults> results;
    std::map<std::string, verification::FlakinessReport> reruns;
    try {
      for (const auto& s : suites) {
        try {
          results.push_back(verification::run_suite(ws, s, {attempt, 0}));
        } catch (const Error& e) {
          if (e.code() != ErrorCode::timeout) throw;
          verification::TestResults t;
          t.suite_id = s.suite_id;
          t.exit_code = -1;
          t.environment_flags.push_back("timeout");
          results.push_back(std::move(t));
        }
      }
      for (std::size_t i = 0; i < suites.size(); ++i) {
        if (results[i].environment_flags.empty()) continue;
        try {
          reruns[suites[i].suite_id] = verification::rerun_for_noise(ws, suites[i], config().noise_reruns, attempt);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::timeout) throw;
        }
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::sandbox_violation) throw;
      halt(e.what());
      return true;
    }

    std::vector<contract::ClauseId> ambiguous;
    for (const auto& f : compiler::lint_ambiguity(contract, extra_rules_)) ambiguous.push_back(f.clause_id);
    const auto groups = arbiter::gather_evidence(run_id_, contract, results, suites, reruns, touched, ambiguous);

    json suite_ids = json::array();
    json result_json = json::array();
    json group_json = json::array();
    for (const auto& s : suites) suite_ids.push_back(s.suite_id);
    for (const auto& res : results) result_json.push_back(verification::to_json(res));
    for (const auto& g : groups) group_json.push_back(arbiter::to_json(g));
    emit(EventKind::ci_completed, {{"status", groups.empty() ? "pass" : "fail"},
                                   {"attempt", attempt},
                                   {"suites", suite_ids},
                                   {"results", result_json},
                                   {"groups", group_json}});
    return true;
  }

  void classified(const arbiter::FailureEvidence& ev, const arbiter::FailureClassification& c) {
    const bool last = state_.round_classifications.size() + 1 == state_.round.size();
    emit(EventKind::failure_classified, {{"group_key", ev.group_key},
                                         {"origin", "ci"},
                                         {"suite_id", ev.suite_id},
                                         {"section", ev.section},
                                         {"summary", summary_of(ev)},
                                         {"tests", tests_of(ev)},
                                         {"final", last},
                                         {"classification", arbiter::to_json(c)}});
  }

  bool arbitrate() {
    const json& group = state_.round.at(state_.round_classifications.size());
    const arbiter::FailureEvidence ev = arbiter::evidence_from_json(group);
    const arbiter::ArbiterPolicy policy = engine_.arbiter_policy();

    const arbiter::RuleOutcome rules = arbiter::rule_prepass(ev, policy);
    if (rules.forced) {
      classified(ev, arbiter::classify(ev, policy, std::nullopt).classification);
      return true;
    }
    if (auto h = state_.round_human.find(ev.group_key); h != state_.round_human.end()) {
      std::string principal = "operator";
      for (const auto& t : state_.tickets) {
        if (t.kind == TicketKind::arbiter_escalation && t.resolution &&
            t.payload.at("evidence").value("group_key", "") == ev.group_key) {
          principal = t.resolution->principal;
        }
      }
      classified(ev, arbiter::human_classification(*class_from(h->second), principal));
      return true;
    }
    auto job = state_.round_jobs.find(ev.group_key);
    if (job == state_.round_jobs.end()) {
      dispatch(Role::arbiter, "arbiter", *state_.final_contract(),
               {{"failure_evidence", ev.group_key, "harness", group},
                {"test_results", "ci", "harness", state_.last_results}});
      return true;
    }
    const JobRecord* rec = state_.find_job(job->second);
    std::optional<arbiter::AgentOpinion> opinion;
    try {
      opinion = arbiter::opinion_from_body(rec->body);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::agent_response_invalid) throw;
    }
    const arbiter::ArbiterDecision d = arbiter::classify(ev, policy, opinion);
    if (d.escalate) {
      const HumanTicket t = arbiter::escalate(ev, d.classification, d.reason);
      pause("arbiter escalation: " + d.reason, TicketKind::arbiter_escalation, t.payload);
      return true;
    }
    classified(ev, d.classification);
    return true;
  }

  bool correct() {
    const auto cls = arbiter::dominant_class(state_.round_classifications);
    const auto it = std::find_if(state_.round_classifications.begin(), state_.round_classifications.end(),
                                 [&](const auto& c) { return c.cls == cls; });
    emit(EventKind::corrective_action, pipeline::corrective_payload(state_, *it));
    return true;
  }

  std::optional<verification::TestSuite> find_suite(const std::string& suite_id) const {
    for (const auto& s : state_.suites) {
      if (s.suite_id == suite_id) return s;
    }
    for (auto it = state_.jobs.rbegin(); it != state_.jobs.rend(); ++it) {
      if (it->role != Role::test_author || !it->answered) continue;
      try {
        auto s = verification::suite_from_body(it->body, verification::SuiteOrigin::test_author);
        if (s.suite_id == suite_id) return s;
      } catch (const Error&) {
      }
    }
    return std::nullopt;
  }

  bool promote_pending() {
    const std::string module = state_.module_name();
    for (const auto& c : state_.pending_regressions) {
      const auto suite = find_suite(c.value("suite_id", ""));
      const std::string test = c.value("test_id", "");
      if (!suite || !suite->clause_links.count(test)) continue;
      const std::string reg_id = verification::regression_suite_id(*suite, test);
      if (std::find(state_.promoted_regressions.begin(), state_.promoted_regressions.end(), reg_id) !=
          state_.promoted_regressions.end()) {
        continue;
      }
      const auto registry = verification::promote_regression(test, *suite, module, {});
      emit(EventKind::regression_promoted, {{"module", module},
                                            {"test_id", test},
                                            {"suite", verification::to_json(registry.by_module.at(module).back())}});
      return true;
    }
    return false;
  }

  bool structural() {
    if (promote_pending()) return true;
    std::vector<Role> roles = {Role::architecture_reviewer, Role::security_reviewer};
    const contract::Contract& contract = *state_.final_contract();
    bool backend = false, frontend = false;
    for (const auto& s : contract.surfaces) {
      if (s.kind == contract::SurfaceKind::ui_flow) {
        frontend = true;
      } else {
        backend = true;
      }
    }
    if (backend) roles.push_back(Role::backend_reviewer);
    if (frontend) roles.push_back(Role::frontend_reviewer);
    std::vector<InputRef> inputs;
    if (auto a = artifact_input()) inputs.push_back(*a);
    auto findings = collect_reviews(roles, contract, inputs);
    if (findings) record_gate("structural_review", *findings);
    return true;
  }

  bool single_reviewer_gate() {
    const bool qa = state_.step == 15;
    std::vector<InputRef> inputs;
    if (auto a = artifact_input()) inputs.push_back(*a);
    if (qa) inputs.push_back({"test_results", "ci", "harness", state_.last_results});
    auto findings = collect_reviews({qa ? Role::qa_tester : Role::shipping_reviewer}, *state_.final_contract(), inputs);
    if (!findings) return true;
    json extra = json::object();
    if (!qa && verification::gate_verdict(*findings) == verification::Verdict::pass) {
      extra["command"] = {{"action", "open_merge_request"}, {"result", "recorded"}};
    }
    record_gate(qa ? "qa" : "shipping", *findings, extra);
    return true;
  }

  json failure_history() const {
    json arr = json::array();
    for (const auto& c : state_.classifications) {
      arr.push_back({{"group_key", c.group_key},
                     {"origin", c.origin},
                     {"section", c.section},
                     {"classification", arbiter::to_json(c.classification)}});
    }
    return arr;
  }

  void complete_retro(std::vector<calibration::RetroProposal> proposals, json observations) {
    const calibration::RetroPolicy policy{config().recurrence_threshold};
    for (auto& p : calibration::run_retro(engine_.store().load(run_id_), policy)) proposals.push_back(std::move(p));
    json out = json::array();
    std::vector<calibration::RetroProposal> kept;
    for (auto& p : proposals) {
      const auto same = [&](const pipeline::Proposal& q) {
        return q.kind == p.kind && q.target == p.target && q.diff == p.diff;
      };
      if (std::any_of(state_.proposals.begin(), state_.proposals.end(), same) ||
          std::any_of(kept.begin(), kept.end(), same)) {
        continue;
      }
      p.id = run_id_ + "/p" + std::to_string(state_.proposals.size() + kept.size() + 1);
      p.status = "pending";
      kept.push_back(p);
      out.push_back(pipeline::to_json(p));
    }
    emit(EventKind::retro_completed, {{"proposals", out}, {"observations", observations}});
  }

  bool retro() {
    const auto jobs = jobs_since(state_, state_.entered_seq, Role::retro);
    if (jobs.empty()) {
      dispatch(Role::retro, "retro", *state_.final_contract(), {{"failure_history", "run", "harness", failure_history()}});
      return true;
    }
    std::vector<calibration::RetroProposal> proposals;
    json observations = json::array();
    try {
      proposals = calibration::proposals_from_body(jobs.back()->body, run_id_);
      observations = jobs.back()->body.value("observations", json::array());
    } catch (const Error& e) {
      if (e.code() != ErrorCode::agent_response_invalid) throw;
      observations.push_back(std::string("retro proposals ignored: ") + e.what());
    }
    complete_retro(std::move(proposals), observations);
    return true;
  }

  // ---- after merge ----------------------------------------------------------

  bool post_merge(DriveResult& r) {
    const std::size_t reports = state_.post_merge_reports.size();
    std::size_t classified_reports = 0;
    for (const auto& c : state_.classifications) classified_reports += c.origin == "post_merge";

    if (classified_reports < reports) {
      classify_report(classified_reports);
      return true;
    }
    if (static_cast<std::size_t>(state_.post_merge_actions) < reports) {
      emit(EventKind::corrective_action, pipeline::corrective_payload(state_, state_.classifications.back().classification));
      return true;
    }
    if (scenario_ && reports < scenario_->post_merge_reports.size()) {
      const json& report = scenario_->post_merge_reports[reports];
      emit(EventKind::human_decision, {{"ticket_kind", "post_merge_report"},
                                       {"report", report},
                                       {"principal", report.value("reporter", "operator")}});
      return true;
    }
    if (reports > 0 && !state_.post_merge_retro_done) {
      complete_retro({}, json::array());
      return true;
    }
    for (const auto& t : state_.tickets) {
      if (!t.resolved && (t.kind == TicketKind::proposal_approval || t.kind == TicketKind::memory_promotion) &&
          resolve_scripted(t)) {
        return true;
      }
    }
    r.outcome = Outcome::done;
    r.detail = "done";
    return false;
  }

  void classify_report(std::size_t index) {
    const json& report = state_.post_merge_reports[index];
    const contract::Contract* contract = state_.final_contract();
    arbiter::FailureEvidence ev;
    ev.run_id = run_id_;
    ev.group_key = "post-merge-" + std::to_string(index + 1);
    ev.suite_id = "post_merge";
    ev.section = report.value("section", "uncovered");
    arbiter::FailingTest t;
    t.test_id = "report-" + std::to_string(index + 1);
    t.assertion = report.value("text", "");
    t.clause_ids = report.value("clause_ids", std::vector<std::string>{});
    t.contract_coverage = !t.clause_ids.empty() && contract &&
                          std::all_of(t.clause_ids.begin(), t.clause_ids.end(),
                                      [&](const std::string& id) { return contract::find_clause(*contract, id).has_value(); });
    ev.failing_tests.push_back(t);
    if (contract) {
      for (const auto& f : compiler::lint_ambiguity(*contract, extra_rules_)) ev.ambiguous_clauses.push_back(f.clause_id);
    }
    const auto d = arbiter::classify(ev, engine_.arbiter_policy(), std::nullopt);
    emit(EventKind::failure_classified, {{"group_key", ev.group_key},
                                         {"origin", "post_merge"},
                                         {"suite_id", ev.suite_id},
                                         {"section", ev.section},
                                         {"summary", t.assertion},
                                         {"tests", tests_of(ev)},
                                         {"classification", arbiter::to_json(d.classification)}});
  }

  Engine& engine_;
  std::string run_id_;
  agents::Backend& backend_;
  const agents::ScriptedScenario* scenario_;
  agents::Dispatcher dispatcher_;
  memory::MemoryDocument memory_;
  std::vector<compiler::LintRule> extra_rules_;
  RunState state_;
};

}  // namespace

Engine::Engine(store::EventStore& store, EngineOptions options) : store_(store), options_(std::move(options)) {}

arbiter::ArbiterPolicy Engine::arbiter_policy() const {
  return {options_.config.noise_threshold, options_.config.escalation_confidence, 0.8};
}

RunState Engine::load_state(const std::string& run_id) const {
  if (!store_.has_run(run_id)) throw Error(ErrorCode::not_found, "run " + run_id);
  return pipeline::fold(store_.load(run_id));
}

pipeline::RunEvent Engine::commit(const std::string& run_id, RunState& state, const EventDraft& draft) {
  RunState next;
  const auto event = store_.append(run_id, draft, [&](const pipeline::RunEvent& e) { next = pipeline::advance(state, e); });
  state = std::move(next);
  store_.write_snapshot(run_id, pipeline::to_json(state).dump());
  return event;
}

std::string Engine::submit(const RawIssue& issue, const std::string& scenario_id, const json& ground_truth_labels,
                           const std::string& interface_description) {
  if (const std::string problem = issue_problem(issue); !problem.empty()) {
    throw Error(ErrorCode::invalid_issue, problem);
  }
  const std::string run_id = store_.allocate_run_id();
  RunState state;
  json payload{{"issue", to_json(issue)},
               {"scenario_id", scenario_id},
               {"ground_truth_labels", ground_truth_labels.is_object() ? ground_truth_labels : json::object()},
               {"interface", interface_description}};
  commit(run_id, state, {EventKind::issue_submitted, payload});
  return run_id;
}

DriveResult Engine::drive(const std::string& run_id, agents::Backend& backend, const agents::ScriptedScenario* scenario) {
  return Driver(*this, run_id, backend, scenario).run();
}

RunState Engine::resolve(const std::string& run_id, const std::string& ticket_id, const std::string& decision,
                         const std::string& principal, const std::string& note) {
  RunState state = load_state(run_id);
  const HumanTicket* ticket = nullptr;
  for (const auto& t : state.tickets) {
    if (t.ticket_id == ticket_id) ticket = &t;
  }
  if (!ticket) throw Error(ErrorCode::not_found, "ticket " + ticket_id);
  const TicketKind kind = ticket->kind;
  json payload{{"ticket_id", ticket_id},
               {"ticket_kind", std::string(harness::to_string(kind))},
               {"decision", decision},
               {"principal", principal}};
  if (!note.empty()) payload["note"] = note;
  const bool proposal = kind == TicketKind::proposal_approval || kind == TicketKind::memory_promotion;
  std::optional<pipeline::Proposal> prop;
  for (const auto& p : state.proposals) {
    if (p.ticket_id == ticket_id) prop = p;
  }
  if (proposal && prop) payload["proposal_kind"] = prop->kind;
  commit(run_id, state, {EventKind::human_decision, payload});

  if (!proposal || !prop || decision != "approve") return state;
  prop->status = "approved";
  calibration::HarnessStores stores{options_.specializations_dir, options_.lint_rules_file, options_.memory_file,
                                    [&](const std::string& suite_id) -> std::optional<verification::TestSuite> {
                                      for (const auto& s : state.suites) {
                                        if (s.suite_id == suite_id) return s;
                                      }
                                      return std::nullopt;
                                    }};
  try {
    const auto change = calibration::apply_proposal(*prop, {true, principal}, stores);
    applied_.push_back(prop->id + ": " + change.description);
    const bool can_promote = state.phase == Phase::done || state.step == 14;
    for (const auto& e : change.events) {
      if (can_promote) commit(run_id, state, e);
    }
  } catch (const Error& e) {
    applied_.push_back(prop->id + ": not applied (" + e.what() + ")");
  }
  return state;
}

RunState Engine::report_post_merge(const std::string& run_id, const json& report, const std::string& principal) {
  if (!report.is_object() || report.value("text", "").empty()) {
    throw Error(ErrorCode::invalid_argument, "post-merge report needs text");
  }
  RunState state = load_state(run_id);
  if (state.phase != Phase::done) throw Error(ErrorCode::state_mismatch, "run " + run_id + " is not merged");
  commit(run_id, state,
         {EventKind::human_decision, {{"ticket_kind", "post_merge_report"}, {"report", report}, {"principal", principal}}});
  return state;
}

}  // namespace harness::engine
