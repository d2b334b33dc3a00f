#include "harness/pipeline.hpp"

#include <algorithm>
#include <deque>
#include <set>

#include "harness/error.hpp"
#include "harness/util.hpp"

namespace harness::pipeline {

using nlohmann::json;

namespace {

constexpr std::pair<EventKind, std::string_view> kEventKinds[] = {
    {EventKind::issue_submitted, "issue_submitted"},
    {EventKind::contract_compiled_p1, "contract_compiled_p1"},
    {EventKind::contract_refined_p2, "contract_refined_p2"},
    {EventKind::gate_recorded, "gate_recorded"},
    {EventKind::job_dispatched, "job_dispatched"},
    {EventKind::response_received, "response_received"},
    {EventKind::ci_completed, "ci_completed"},
    {EventKind::failure_classified, "failure_classified"},
    {EventKind::corrective_action, "corrective_action"},
    {EventKind::regression_promoted, "regression_promoted"},
    {EventKind::retro_completed, "retro_completed"},
    {EventKind::human_decision, "human_decision"},
    {EventKind::run_done, "run_done"},
    {EventKind::run_halted, "run_halted"},
};

int parse_target(const std::string& s, const std::map<int, std::string>& steps) {
  if (s == "same") return kSame;
  if (s == "done") return kDone;
  if (s == "halted") return kHalted;
  try {
    std::size_t used = 0;
    const int n = std::stoi(s, &used);
    if (used == s.size() && steps.count(n)) return n;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::parse_error, "transition table: unknown target '" + s + "'");
}

[[noreturn]] void illegal(const RunState& s, const RunEvent& e, const std::string& why) {
  throw Error(ErrorCode::illegal_transition, "step " + s.step_key() + " does not accept " +
                                                 event_labels(e.kind, e.payload).front() + ": " + why);
}

json clause_findings_json(const std::vector<compiler::AmbiguityFinding>& findings) {
  json arr = json::array();
  for (const auto& f : findings) arr.push_back(compiler::to_json(f));
  return arr;
}

json findings_json(const std::vector<verification::ReviewFinding>& findings) {
  json arr = json::array();
  for (const auto& f : findings) arr.push_back(verification::to_json(f));
  return arr;
}

std::vector<verification::ReviewFinding> findings_from(const json& arr) {
  std::vector<verification::ReviewFinding> out;
  for (const auto& f : arr) out.push_back(verification::finding_from_json(f));
  return out;
}

contract::Contract with_status(contract::Contract c, contract::Status s) {
  c.status = s;
  return c;
}

std::string bump_version(const std::string& version, bool minor) {
  int major = 0, mid = 0, patch = 0;
  if (std::sscanf(version.c_str(), "%d.%d.%d", &major, &mid, &patch) != 3) return version;
  if (minor) {
    ++mid;
    patch = 0;
  } else {
    ++patch;
  }
  return std::to_string(major) + "." + std::to_string(mid) + "." + std::to_string(patch);
}

void require_fields(const RunState& s, const RunEvent& e, std::initializer_list<const char*> fields) {
  for (const char* f : fields) {
    if (!e.payload.contains(f)) illegal(s, e, std::string("payload lacks ") + f);
  }
}

void resolve_ticket(RunState& s, const RunEvent& e) {
  const std::string id = e.payload.at("ticket_id").get<std::string>();
  auto it = std::find_if(s.tickets.begin(), s.tickets.end(), [&](const HumanTicket& t) { return t.ticket_id == id; });
  if (it == s.tickets.end()) throw Error(ErrorCode::not_found, "ticket " + id);
  if (it->resolved) throw Error(ErrorCode::already_resolved, "ticket " + id);
  const std::string decision = e.payload.at("decision").get<std::string>();
  if (!decision_fits(it->kind, decision)) {
    throw Error(ErrorCode::shape_mismatch, std::string(to_string(it->kind)) + " does not accept '" + decision + "'");
  }
  const std::string principal = e.payload.value("principal", "");
  if (principal.empty()) throw Error(ErrorCode::shape_mismatch, "decision without principal");
  it->resolved = true;
  it->resolution = Resolution{decision, principal, e.timestamp, e.payload.value("note", "")};
  if (s.pending_human == id) s.pending_human.reset();
}

HumanTicket* ticket_by_id(RunState& s, const std::string& id) {
  for (auto& t : s.tickets) {
    if (t.ticket_id == id) return &t;
  }
  return nullptr;
}

void add_suite(RunState& s, verification::TestSuite suite, int attempt) {
  const auto taken = [&](const std::string& id) {
    return std::any_of(s.suites.begin(), s.suites.end(),
                       [&](const verification::TestSuite& t) { return t.suite_id == id; });
  };
  if (taken(suite.suite_id)) suite.suite_id += "-" + std::to_string(attempt);
  s.suites.push_back(std::move(suite));
}

}  // namespace

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::pre_pipeline: return "pre_pipeline";
    case Phase::pipeline: return "pipeline";
    case Phase::post_pipeline: return "post_pipeline";
    case Phase::done: return "done";
    case Phase::halted: return "halted";
  }
  return "?";
}

std::string_view to_string(EventKind k) {
  for (const auto& [v, n] : kEventKinds) {
    if (v == k) return n;
  }
  return "?";
}

std::optional<EventKind> parse_event_kind(std::string_view s) {
  for (const auto& [v, n] : kEventKinds) {
    if (n == s) return v;
  }
  return std::nullopt;
}

json to_json(const RunEvent& e) {
  return {{"seq", e.seq}, {"run_id", e.run_id}, {"timestamp", e.timestamp}, {"kind", to_string(e.kind)}, {"payload", e.payload}};
}

RunEvent event_from_json(const json& j) {
  RunEvent e;
  try {
    e.seq = j.at("seq").get<std::int64_t>();
    e.run_id = j.at("run_id").get<std::string>();
    e.timestamp = j.at("timestamp").get<std::string>();
    const auto kind = parse_event_kind(j.at("kind").get<std::string>());
    if (!kind) throw Error(ErrorCode::parse_error, "unknown event kind " + j.at("kind").dump());
    e.kind = *kind;
    e.payload = j.at("payload");
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::parse_error, std::string("event: ") + ex.what());
  }
  return e;
}

std::vector<std::string> event_labels(EventKind kind, const json& p) {
  const std::string k(to_string(kind));
  const auto str = [&](const char* key) { return p.is_object() ? p.value(key, std::string()) : std::string(); };
  std::vector<std::string> labels;
  switch (kind) {
    case EventKind::job_dispatched:
    case EventKind::response_received: {
      std::string route = str("route");
      if (route.empty() && p.is_object() && p.contains("payload")) route = p["payload"].value("route", "");
      if (!route.empty()) labels.push_back(k + ":" + route);
      break;
    }
    case EventKind::gate_recorded:
      labels.push_back(k + ":" + str("gate") + ":" + str("verdict"));
      labels.push_back(k + ":" + str("gate"));
      break;
    case EventKind::human_decision:
      if (!str("decision").empty()) labels.push_back(k + ":" + str("ticket_kind") + ":" + str("decision"));
      labels.push_back(k + ":" + str("ticket_kind"));
      break;
    case EventKind::ci_completed:
      labels.push_back(k + ":" + str("status"));
      break;
    case EventKind::failure_classified:
      if (str("origin") == "post_merge") {
        labels.push_back(k + ":post_merge");
      } else {
        labels.push_back(k + (p.value("final", false) ? ":last" : ":more"));
      }
      break;
    case EventKind::corrective_action:
      labels.push_back(k + ":" + (str("origin") == "post_merge" ? std::string("post_merge") : str("class")));
      break;
    case EventKind::run_halted:
      labels.push_back(k + (p.is_object() && p.contains("ticket") ? ":paused" : ":terminal"));
      break;
    default:
      break;
  }
  labels.push_back(k);
  return labels;
}

// ---- transition table -----------------------------------------------------

TransitionTable TransitionTable::parse(std::string_view text) {
  TransitionTable t;
  json doc;
  try {
    doc = json::parse(text);
    for (const auto& [key, name] : doc.at("steps").items()) t.step_names_[std::stoi(key)] = name.get<std::string>();
    for (const auto& s : doc.value("transient", json::array())) t.transient_.push_back(std::stoi(s.get<std::string>()));
  } catch (const std::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("transition table: ") + e.what());
  }
  for (const auto& row : doc.at("transitions")) {
    const std::string from = row.at("from").get<std::string>();
    const std::string on = row.at("on").get<std::string>();
    const int to = parse_target(row.at("to").get<std::string>(), t.step_names_);
    if (from != "*" && from != "done" && from != "halted" && !t.step_names_.count(std::atoi(from.c_str()))) {
      throw Error(ErrorCode::parse_error, "transition table: unknown step '" + from + "'");
    }
    if (!parse_event_kind(on.substr(0, on.find(':')))) {
      throw Error(ErrorCode::parse_error, "transition table: unknown event kind in '" + on + "'");
    }
    if (!t.rows_[from].emplace(on, to).second) {
      throw Error(ErrorCode::parse_error, "transition table: duplicate entry " + from + " x " + on);
    }
  }

  // Reachability over the step graph.
  const auto successors = [&](const std::string& from) {
    std::set<std::string> out;
    for (const auto& r : {from, std::string("*")}) {
      auto it = t.rows_.find(r);
      if (it == t.rows_.end()) continue;
      for (const auto& [_, to] : it->second) {
        if (to == kSame) continue;
        out.insert(to == kDone ? "done" : to == kHalted ? "halted" : std::to_string(to));
      }
    }
    return out;
  };
  std::set<std::string> seen = {"1"};
  std::deque<std::string> queue = {"1"};
  while (!queue.empty()) {
    const std::string cur = queue.front();
    queue.pop_front();
    if (cur == "done" || cur == "halted") continue;
    for (const auto& n : successors(cur)) {
      if (seen.insert(n).second) queue.push_back(n);
    }
  }
  for (const auto& [step, _] : t.step_names_) {
    if (std::find(t.transient_.begin(), t.transient_.end(), step) != t.transient_.end()) continue;
    const std::string key = std::to_string(step);
    if (!seen.count(key)) throw Error(ErrorCode::parse_error, "transition table: step " + key + " unreachable");
    if (!t.rows_.count(key)) throw Error(ErrorCode::parse_error, "transition table: step " + key + " has no exits");
    // Every live step must be able to finish.
    std::set<std::string> reach = {key};
    std::deque<std::string> q = {key};
    while (!q.empty()) {
      const std::string cur = q.front();
      q.pop_front();
      if (cur == "done" || cur == "halted") continue;
      for (const auto& n : successors(cur)) {
        if (reach.insert(n).second) q.push_back(n);
      }
    }
    if (!reach.count("done")) throw Error(ErrorCode::parse_error, "transition table: step " + key + " cannot reach done");
  }
  if (!seen.count("done")) throw Error(ErrorCode::parse_error, "transition table: done unreachable");
  const auto& wildcard = t.rows_["*"];
  if (!wildcard.count("run_halted:paused") || !wildcard.count("run_halted:terminal")) {
    throw Error(ErrorCode::parse_error, "transition table: run_halted must be accepted from every step");
  }
  return t;
}

const TransitionTable& TransitionTable::builtin() {
  static const TransitionTable kTable = parse(builtin_transition_table());
  return kTable;
}

std::optional<int> TransitionTable::lookup(const std::string& from, const std::vector<std::string>& labels) const {
  auto row = rows_.find(from);
  for (const auto& label : labels) {
    if (row != rows_.end()) {
      if (auto it = row->second.find(label); it != row->second.end()) return it->second;
    }
    if (from != "done" && from != "halted") {
      auto wild = rows_.find("*");
      if (auto it = wild->second.find(label); it != wild->second.end()) return it->second;
    }
  }
  return std::nullopt;
}

std::vector<std::string> TransitionTable::labels_from(const std::string& from) const {
  std::vector<std::string> out;
  if (auto row = rows_.find(from); row != rows_.end()) {
    for (const auto& [label, _] : row->second) out.push_back(label);
  }
  return out;
}

// ---- state ----------------------------------------------------------------

json to_json(const Proposal& p) {
  return {{"id", p.id},         {"kind", p.kind},     {"target", p.target},       {"diff", p.diff},
          {"evidence_runs", p.evidence_runs}, {"status", p.status}, {"ticket_id", p.ticket_id}};
}

Proposal proposal_from_json(const json& j) {
  Proposal p;
  p.id = j.value("id", "");
  p.kind = j.at("kind").get<std::string>();
  p.target = j.value("target", "");
  p.diff = j.value("diff", "");
  p.evidence_runs = j.value("evidence_runs", std::vector<std::string>{});
  p.status = j.value("status", "pending");
  p.ticket_id = j.value("ticket_id", "");
  return p;
}

const contract::Contract* RunState::current_contract() const {
  return contract_lineage.empty() ? nullptr : &contract_lineage.back();
}

const contract::Contract* RunState::final_contract() const {
  for (auto it = contract_lineage.rbegin(); it != contract_lineage.rend(); ++it) {
    if (it->status == contract::Status::final) return &*it;
  }
  return nullptr;
}

const JobRecord* RunState::find_job(std::string_view job_id) const {
  for (const auto& j : jobs) {
    if (j.job_id == job_id) return &j;
  }
  return nullptr;
}

std::vector<const JobRecord*> RunState::outstanding_jobs() const {
  std::vector<const JobRecord*> out;
  for (const auto& j : jobs) {
    if (!j.answered) out.push_back(&j);
  }
  return out;
}

int RunState::role_attempts(agents::Role role) const {
  return static_cast<int>(std::count_if(jobs.begin(), jobs.end(), [&](const JobRecord& j) { return j.role == role; }));
}

std::string RunState::module_name() const {
  if (!contract_lineage.empty()) return contract_lineage.front().module_name;
  return issue.id;
}

std::string RunState::step_key() const {
  if (phase == Phase::done) return "done";
  if (phase == Phase::halted) return "halted";
  return std::to_string(step);
}

Phase phase_for_step(int step) {
  if (step <= 6) return Phase::pre_pipeline;
  if (step <= 13) return Phase::pipeline;
  return Phase::post_pipeline;
}

json to_json(const RunState& s) {
  json lineage = json::array();
  for (const auto& c : s.contract_lineage) lineage.push_back(contract::to_json(c));
  json gates = json::object();
  for (const auto& [name, g] : s.gates) {
    json jg{{"gate", g.gate}, {"verdict", verification::to_string(g.verdict)}, {"findings", findings_json(g.findings)}};
    if (g.principal) jg["principal"] = *g.principal;
    jg["recorded_seq"] = g.recorded_seq;
    gates[name] = jg;
  }
  json tickets = json::array();
  for (const auto& t : s.tickets) tickets.push_back(to_json(t));
  json jobs = json::array();
  for (const auto& j : s.jobs) {
    jobs.push_back({{"job_id", j.job_id},
                    {"role", agents::to_string(j.role)},
                    {"attempt", j.attempt},
                    {"step", j.step},
                    {"route", j.route},
                    {"answered", j.answered},
                    {"kind", j.answered ? json(agents::to_string(j.kind)) : json(nullptr)},
                    {"transcript_digest", j.transcript_digest},
                    {"discarded", j.discarded},
                    {"dispatched_seq", j.dispatched_seq}});
  }
  json suites = json::array();
  for (const auto& t : s.suites) {
    suites.push_back({{"suite_id", t.suite_id}, {"origin", verification::to_string(t.origin)}, {"tests", t.clause_links}});
  }
  json rc = json::array();
  for (const auto& c : s.round_classifications) rc.push_back(arbiter::to_json(c));
  json history = json::array();
  for (const auto& c : s.classifications) {
    history.push_back({{"group_key", c.group_key},
                       {"origin", c.origin},
                       {"section", c.section},
                       {"classification", arbiter::to_json(c.classification)}});
  }
  json removals = json::array();
  for (const auto& r : s.removals) removals.push_back({{"id", r.id}, {"reason", r.reason}});
  json proposals = json::array();
  for (const auto& p : s.proposals) proposals.push_back(to_json(p));

  return {{"run_id", s.run_id},
          {"issue", to_json(s.issue)},
          {"scenario_id", s.scenario_id},
          {"ground_truth_labels", s.ground_truth_labels},
          {"contract_lineage", lineage},
          {"phase", to_string(s.phase)},
          {"step", s.step},
          {"implementation_cycles", s.implementation_cycles},
          {"cycle_grants", s.cycle_grants},
          {"gates", gates},
          {"pending_human", s.pending_human ? json(*s.pending_human) : json(nullptr)},
          {"tickets", tickets},
          {"jobs", jobs},
          {"specializations", s.specializations},
          {"checklists", s.checklists},
          {"ambiguity_findings", clause_findings_json(s.ambiguity_findings)},
          {"removals", removals},
          {"route", s.route},
          {"artifact_job", s.artifact_job ? json(*s.artifact_job) : json(nullptr)},
          {"suites", suites},
          {"noise_mode", s.noise_mode},
          {"calibration_done", s.calibration_done},
          {"noise_groups", s.noise_groups},
          {"noise_rounds", s.noise_rounds},
          {"ci_rounds", s.ci_rounds},
          {"round", s.round},
          {"round_classifications", rc},
          {"round_jobs", s.round_jobs},
          {"round_human", s.round_human},
          {"classifications", history},
          {"last_findings", findings_json(s.last_findings)},
          {"pending_regressions", s.pending_regressions},
          {"promoted_regressions", s.promoted_regressions},
          {"post_merge_reports", s.post_merge_reports},
          {"proposals", proposals},
          {"retro_rounds", s.retro_rounds},
          {"post_merge_actions", s.post_merge_actions},
          {"post_merge_retro_done", s.post_merge_retro_done},
          {"halt_reason", s.halt_reason},
          {"entered_seq", s.entered_seq},
          {"last_seq", s.last_seq},
          {"event_count", s.event_count},
          {"last_timestamp", s.last_timestamp}};
}

// ---- fold -----------------------------------------------------------------

RunState advance(const RunState& state, const RunEvent& event, const TransitionTable& table) {
  if (state.event_count > 0 && event.seq <= state.last_seq) illegal(state, event, "sequence not increasing");
  if (state.event_count > 0 && event.run_id != state.run_id) illegal(state, event, "event for another run");
  if (state.event_count == 0 && event.kind != EventKind::issue_submitted) illegal(state, event, "run not started");

  const auto labels = event_labels(event.kind, event.payload);
  const auto target = table.lookup(state.step_key(), labels);
  if (!target) illegal(state, event, "no transition");

  const bool is_resolution = event.kind == EventKind::human_decision && event.payload.contains("ticket_id") &&
                             state.pending_human == event.payload.value("ticket_id", "");
  if (state.pending_human && !is_resolution &&
      !(event.kind == EventKind::run_halted && !event.payload.contains("ticket")) &&
      event.kind != EventKind::human_decision) {
    illegal(state, event, "awaiting operator decision on " + *state.pending_human);
  }

  RunState s = state;
  const json& p = event.payload;
  try {
    switch (event.kind) {
      case EventKind::issue_submitted: {
        require_fields(s, event, {"issue"});
        s.run_id = event.run_id;
        s.issue = issue_from_json(p.at("issue"));
        s.scenario_id = p.value("scenario_id", "");
        s.ground_truth_labels = p.value("ground_truth_labels", json::object());
        s.interface_description = p.value("interface", "");
        break;
      }
      case EventKind::job_dispatched: {
        require_fields(s, event, {"payload"});
        const agents::JobPayload jp = agents::payload_from_json(p.at("payload"));
        if (s.find_job(jp.job_id)) illegal(s, event, "job " + jp.job_id + " already dispatched");
        if (!agents::role_permitted_at(jp.role, state.step)) {
          illegal(s, event, std::string(agents::to_string(jp.role)) + " not permitted here");
        }
        JobRecord rec;
        rec.job_id = jp.job_id;
        rec.role = jp.role;
        rec.attempt = jp.attempt;
        rec.step = jp.step;
        rec.route = jp.route;
        rec.payload = p.at("payload");
        rec.dispatched_seq = event.seq;
        if (jp.role == agents::Role::implementer) {
          if (!s.final_contract()) illegal(s, event, "no final contract");
          ++s.implementation_cycles;
        }
        if (jp.role == agents::Role::arbiter) {
          for (const auto& in : jp.inputs) {
            if (in.kind == "failure_evidence") s.round_jobs[in.ref] = jp.job_id;
          }
        }
        s.jobs.push_back(std::move(rec));
        break;
      }
      case EventKind::response_received: {
        require_fields(s, event, {"job_id", "kind", "body"});
        const std::string id = p.at("job_id").get<std::string>();
        auto it = std::find_if(s.jobs.begin(), s.jobs.end(), [&](const JobRecord& j) { return j.job_id == id; });
        if (it == s.jobs.end() || it->answered) illegal(s, event, "no outstanding job " + id);
        const auto kind = agents::parse_response_kind(p.at("kind").get<std::string>());
        if (!kind || !agents::kind_allowed(it->role, *kind)) illegal(s, event, "response kind not allowed for role");
        it->answered = true;
        it->kind = *kind;
        it->body = p.at("body");
        it->transcript_digest = p.value("transcript_digest", "");
        if (it->role == agents::Role::implementer) s.artifact_job = it->job_id;
        if (it->role == agents::Role::test_author) {
          const bool calibration = it->route == "test_author_calibration";
          verification::TestSuite suite = verification::suite_from_body(
              it->body, calibration ? verification::SuiteOrigin::calibration : verification::SuiteOrigin::test_author);
          if (!calibration) {
            std::erase_if(s.suites, [](const verification::TestSuite& t) {
              return t.origin == verification::SuiteOrigin::test_author;
            });
          } else {
            s.calibration_done = true;
          }
          add_suite(s, std::move(suite), it->attempt);
        }
        break;
      }
      case EventKind::contract_compiled_p1: {
        require_fields(s, event, {"contract"});
        s.contract_lineage.push_back(contract::from_json(p.at("contract")));
        s.specializations = p.value("specializations", std::vector<json>{});
        s.checklists = p.value("checklists", std::vector<std::string>{});
        s.ambiguity_findings.clear();
        for (const auto& f : p.value("findings", json::array())) s.ambiguity_findings.push_back(compiler::finding_from_json(f));
        break;
      }
      case EventKind::contract_refined_p2: {
        require_fields(s, event, {"contract"});
        const auto* draft = s.current_contract();
        if (!draft || draft->status != contract::Status::draft_pass1) illegal(s, event, "no pass-1 draft");
        contract::Contract refined = contract::from_json(p.at("contract"));
        const auto ids = contract::clause_ids(refined);
        const auto before = contract::clause_ids(*draft);
        for (const auto& id : ids) {
          if (std::find(before.begin(), before.end(), id) == before.end()) {
            throw Error(ErrorCode::monotonicity_violation, "refinement introduces " + id);
          }
        }
        s.contract_lineage.push_back(std::move(refined));
        s.ambiguity_findings.clear();
        for (const auto& f : p.value("findings", json::array())) s.ambiguity_findings.push_back(compiler::finding_from_json(f));
        s.gates.erase("product_review");
        s.gates.erase("engineering_review");
        for (const auto& r : p.value("removals", json::array())) {
          s.removals.push_back({r.at("id").get<std::string>(), r.value("reason", "")});
        }
        break;
      }
      case EventKind::gate_recorded: {
        require_fields(s, event, {"gate", "verdict"});
        GateResult g;
        g.gate = p.at("gate").get<std::string>();
        const auto verdict = verification::parse_verdict(p.at("verdict").get<std::string>());
        if (!verdict || *verdict == verification::Verdict::waived) illegal(s, event, "gate verdict must be pass or fail");
        g.verdict = *verdict;
        g.findings = findings_from(p.value("findings", json::array()));
        g.recorded_seq = event.seq;
        if ((g.verdict == verification::Verdict::fail) != (verification::gate_verdict(g.findings) == verification::Verdict::fail)) {
          illegal(s, event, "verdict disagrees with blocker findings");
        }
        s.gates[g.gate] = g;
        if (g.verdict == verification::Verdict::pass) {
          if (g.gate == "product_review") {
            s.contract_lineage.push_back(with_status(*s.current_contract(), contract::Status::product_approved));
          } else if (g.gate == "engineering_review") {
            s.contract_lineage.push_back(with_status(*s.current_contract(), contract::Status::eng_approved));
            s.contract_lineage.push_back(with_status(*s.current_contract(), contract::Status::final));
          }
        } else if (g.gate == "structural_review" || g.gate == "qa" || g.gate == "shipping") {
          s.route = "implementer_retry";
          s.last_findings = g.findings;
        }
        break;
      }
      case EventKind::ci_completed: {
        require_fields(s, event, {"status"});
        ++s.ci_rounds;
        s.last_results = p.value("results", json::array());
        s.round = p.value("groups", std::vector<json>{});
        s.round_classifications.clear();
        s.round_jobs.clear();
        s.round_human.clear();
        s.noise_mode.clear();
        s.calibration_done = false;
        if (p.at("status") == "fail" && s.round.empty()) illegal(s, event, "failing CI without failure groups");
        break;
      }
      case EventKind::failure_classified: {
        require_fields(s, event, {"group_key", "classification"});
        ClassificationRecord rec;
        rec.group_key = p.at("group_key").get<std::string>();
        rec.origin = p.value("origin", "ci");
        rec.section = p.value("section", "uncovered");
        rec.classification = arbiter::classification_from_json(p.at("classification"));
        if (rec.origin == "ci") {
          const std::size_t idx = s.round_classifications.size();
          if (idx >= s.round.size() || s.round[idx].value("group_key", "") != rec.group_key) {
            illegal(s, event, "group " + rec.group_key + " is not next in the round");
          }
          if (p.value("final", false) != (idx + 1 == s.round.size())) illegal(s, event, "final flag mismatch");
          s.round_classifications.push_back(rec.classification);
        }
        s.classifications.push_back(std::move(rec));
        break;
      }
      case EventKind::corrective_action: {
        require_fields(s, event, {"class"});
        const auto cls = arbiter::parse_failure_class(p.at("class").get<std::string>());
        if (!cls) illegal(s, event, "unknown class");
        if (p.value("origin", "ci") == "post_merge") {
          if (p.contains("revision")) s.contract_lineage.push_back(contract::from_json(p["revision"]));
          ++s.post_merge_actions;
          break;
        }
        if (s.round_classifications.size() != s.round.size()) illegal(s, event, "round not fully classified");
        switch (*cls) {
          case arbiter::FailureClass::bug:
            s.route = "implementer_retry";
            s.last_findings.clear();
            for (const auto& c : p.value("regression_candidates", json::array())) s.pending_regressions.push_back(c);
            break;
          case arbiter::FailureClass::spec_gap:
          case arbiter::FailureClass::contract_ambiguity:
            require_fields(s, event, {"draft"});
            s.contract_lineage.push_back(contract::from_json(p.at("draft")));
            s.route = "implementer";
            s.last_findings.clear();
            if (p.value("discard_artifact", false) && s.artifact_job) {
              for (auto& j : s.jobs) {
                if (j.job_id == *s.artifact_job) j.discarded = true;
              }
              s.artifact_job.reset();
            }
            break;
          case arbiter::FailureClass::noise:
            s.noise_mode = p.value("calibrate", "ci");
            s.calibration_done = false;
            s.noise_groups = p.value("noisy_groups", std::vector<json>{});
            ++s.noise_rounds;
            break;
        }
        s.round.clear();
        s.round_classifications.clear();
        s.round_jobs.clear();
        s.round_human.clear();
        break;
      }
      case EventKind::regression_promoted: {
        require_fields(s, event, {"suite"});
        const std::string id = p.at("suite").at("suite_id").get<std::string>();
        if (std::find(s.promoted_regressions.begin(), s.promoted_regressions.end(), id) == s.promoted_regressions.end()) {
          s.promoted_regressions.push_back(id);
        }
        const std::string test = p.value("test_id", "");
        std::erase_if(s.pending_regressions, [&](const json& c) { return c.value("test_id", "") == test; });
        break;
      }
      case EventKind::retro_completed: {
        ++s.retro_rounds;
        if (state.phase == Phase::done) s.post_merge_retro_done = true;
        for (const auto& jp : p.value("proposals", json::array())) {
          Proposal prop = proposal_from_json(jp);
          HumanTicket t;
          t.ticket_id = s.run_id + "/t" + std::to_string(s.tickets.size() + 1);
          t.run_id = s.run_id;
          t.kind = prop.kind == "memory_promotion" ? TicketKind::memory_promotion : TicketKind::proposal_approval;
          t.payload = to_json(prop);
          prop.ticket_id = t.ticket_id;
          s.tickets.push_back(std::move(t));
          s.proposals.push_back(std::move(prop));
        }
        break;
      }
      case EventKind::human_decision: {
        const std::string kind = p.value("ticket_kind", "");
        if (p.contains("ticket_id")) {
          const std::string id = p.at("ticket_id").get<std::string>();
          const HumanTicket* t = ticket_by_id(s, id);
          if (!t) throw Error(ErrorCode::not_found, "ticket " + id);
          if (kind != to_string(t->kind)) illegal(s, event, "ticket kind mismatch");
          if (state.pending_human && state.pending_human != id && t->kind != TicketKind::proposal_approval &&
              t->kind != TicketKind::memory_promotion) {
            illegal(s, event, "awaiting operator decision on " + *state.pending_human);
          }
          resolve_ticket(s, event);
          t = ticket_by_id(s, id);
          const std::string decision = p.at("decision").get<std::string>();
          if (t->kind == TicketKind::contract_approval && decision == "approve") {
            const std::string gate = t->payload.value("gate", "");
            GateResult& g = s.gates[gate];
            g.gate = gate;
            g.verdict = verification::Verdict::waived;
            g.principal = p.at("principal").get<std::string>();
            g.recorded_seq = event.seq;
            if (gate == "product_review") {
              s.contract_lineage.push_back(with_status(*s.current_contract(), contract::Status::product_approved));
            } else {
              s.contract_lineage.push_back(with_status(*s.current_contract(), contract::Status::eng_approved));
              s.contract_lineage.push_back(with_status(*s.current_contract(), contract::Status::final));
            }
          } else if (t->kind == TicketKind::contract_approval || t->kind == TicketKind::run_halt) {
            if (decision == "continue") {
              ++s.cycle_grants;
            } else {
              s.halt_reason = "operator " + p.at("principal").get<std::string>() + " chose " + decision;
            }
          } else if (t->kind == TicketKind::arbiter_escalation) {
            s.round_human[t->payload.at("evidence").value("group_key", "")] = decision;
          } else if (t->kind == TicketKind::proposal_approval || t->kind == TicketKind::memory_promotion) {
            for (auto& prop : s.proposals) {
              if (prop.ticket_id == id) prop.status = decision == "approve" ? "approved" : "rejected";
            }
          }
        } else if (kind == "post_merge_report") {
          require_fields(s, event, {"report"});
          s.post_merge_reports.push_back(p.at("report"));
          s.post_merge_retro_done = false;
        } else if (kind != "finding_adjudication" && kind != "rollback_report") {
          illegal(s, event, "decision without ticket");
        }
        break;
      }
      case EventKind::run_done: {
        static const char* kGates[] = {"product_review", "engineering_review", "structural_review", "qa", "shipping"};
        for (const char* g : kGates) {
          auto it = s.gates.find(g);
          if (it == s.gates.end() || it->second.verdict == verification::Verdict::fail) {
            illegal(s, event, std::string("gate ") + g + " not passed");
          }
        }
        break;
      }
      case EventKind::run_halted: {
        if (p.contains("ticket")) {
          HumanTicket t;
          t.ticket_id = s.run_id + "/t" + std::to_string(s.tickets.size() + 1);
          t.run_id = s.run_id;
          const auto kind = parse_ticket_kind(p["ticket"].value("kind", ""));
          if (!kind) illegal(s, event, "unknown ticket kind");
          t.kind = *kind;
          t.payload = p["ticket"].value("payload", json::object());
          s.pending_human = t.ticket_id;
          s.tickets.push_back(std::move(t));
        } else {
          s.halt_reason = p.value("reason", "halted");
        }
        break;
      }
    }
  } catch (const json::exception& ex) {
    illegal(state, event, std::string("malformed payload: ") + ex.what());
  }

  if (*target == kDone) {
    s.phase = Phase::done;
  } else if (*target == kHalted) {
    s.phase = Phase::halted;
  } else if (*target != kSame) {
    s.step = *target;
    s.phase = phase_for_step(s.step);
    s.entered_seq = event.seq;
  }
  s.last_seq = event.seq;
  s.last_timestamp = event.timestamp;
  ++s.event_count;
  return s;
}

RunState fold(const std::vector<RunEvent>& events, const TransitionTable& table) {
  RunState s;
  for (const auto& e : events) s = advance(s, e, table);
  return s;
}

// ---- arbiter outcome ------------------------------------------------------

json corrective_payload(const RunState& state, const arbiter::FailureClassification& classification) {
  const auto& route = arbiter::route_for(classification.cls);
  json p{{"class", arbiter::to_string(classification.cls)},
         {"action", route.action},
         {"decided_by", arbiter::to_string(classification.decided_by)}};

  if (state.phase == Phase::done) {
    p["origin"] = "post_merge";
    if (state.post_merge_reports.empty()) throw Error(ErrorCode::state_mismatch, "no post-merge report to act on");
    const json& report = state.post_merge_reports.back();
    const auto* final = state.final_contract();
    if (final && classification.cls == arbiter::FailureClass::spec_gap) {
      contract::Contract revision = *final;
      revision.known_gaps.push_back({contract::fresh_clause_id(state.contract_lineage, "GAP"),
                                     report.value("text", ""), contract::Origin::calibration});
      p["revision"] = contract::to_json(revision);
    }
    p["section"] = report.value("section", "uncovered");
    return p;
  }

  if (state.step != 13) throw Error(ErrorCode::illegal_transition, "step " + state.step_key() + " is not awaiting arbitration");
  p["next_step"] = route.next_step;

  // Tests behind the groups that carry this class.
  std::vector<arbiter::FailureEvidence> groups;
  for (std::size_t i = 0; i < state.round.size() && i < state.round_classifications.size(); ++i) {
    if (state.round_classifications[i].cls == classification.cls) groups.push_back(arbiter::evidence_from_json(state.round[i]));
  }

  const contract::Contract* final = state.final_contract();
  switch (classification.cls) {
    case arbiter::FailureClass::bug: {
      json candidates = json::array();
      for (const auto& g : groups) {
        for (const auto& t : g.failing_tests) candidates.push_back({{"suite_id", g.suite_id}, {"test_id", t.test_id}});
      }
      p["route"] = "implementer_retry";
      p["regression_candidates"] = candidates;
      break;
    }
    case arbiter::FailureClass::spec_gap:
    case arbiter::FailureClass::contract_ambiguity: {
      if (!final) throw Error(ErrorCode::state_mismatch, "no final contract to revise");
      contract::Contract draft = *final;
      draft.status = contract::Status::draft_pass1;
      draft.version = bump_version(final->version, classification.cls == arbiter::FailureClass::spec_gap);
      if (classification.cls == arbiter::FailureClass::spec_gap) {
        std::vector<contract::Contract> lineage = state.contract_lineage;
        std::set<std::string> seen;
        for (const auto& g : groups) {
          for (const auto& t : g.failing_tests) {
            if (t.contract_coverage == true) continue;
            const std::string text = arbiter::root_assertion(t.assertion);
            if (text.empty() || !seen.insert(util::normalize_words(text)).second) continue;
            lineage.push_back(draft);
            draft.business_rules.push_back({contract::fresh_clause_id(lineage, "BR"), text,
                                            compiler::default_severity(text), contract::Origin::calibration});
          }
        }
      }
      p["draft"] = contract::to_json(draft);
      p["route"] = "implementer";
      p["discard_artifact"] = classification.cls == arbiter::FailureClass::contract_ambiguity;
      if (classification.cls == arbiter::FailureClass::spec_gap) {
        json domains = json::array();
        for (const auto& sp : state.specializations) domains.push_back(sp.value("domain", ""));
        p["template_targets"] = domains;
      }
      break;
    }
    case arbiter::FailureClass::noise: {
      bool test_level = false;
      for (const auto& g : groups) {
        for (const auto& f : g.environment_flags) test_level = test_level || util::starts_with(f, "test-error:");
      }
      p["calibrate"] = test_level ? "verifier" : "ci";
      json noisy = json::array();
      for (const auto& g : groups) noisy.push_back(arbiter::to_json(g));
      p["noisy_groups"] = noisy;
      break;
    }
  }
  return p;
}

ArbiterOutcome apply_arbiter_outcome(const RunState& state, const arbiter::FailureClassification& classification) {
  ArbiterOutcome out;
  out.event.kind = EventKind::corrective_action;
  out.event.payload = corrective_payload(state, classification);
  RunEvent e;
  e.seq = state.last_seq + 1;
  e.run_id = state.run_id;
  e.timestamp = state.last_timestamp;
  e.kind = out.event.kind;
  e.payload = out.event.payload;
  out.state = advance(state, e);
  return out;
}

namespace {

json failure_history(const RunState& state) {
  json history = json::array();
  for (const auto& c : state.classifications) {
    history.push_back({{"group_key", c.group_key}, {"section", c.section}, {"classification", arbiter::to_json(c.classification)}});
  }
  return history;
}

}  // namespace

std::optional<HumanTicket> noise_rounds_guard(const RunState& state, int limit) {
  const int allowed = limit * (1 + state.cycle_grants);
  if (state.noise_rounds <= allowed) return std::nullopt;
  HumanTicket t;
  t.run_id = state.run_id;
  t.kind = TicketKind::run_halt;
  t.payload = {{"reason", "noise rounds " + std::to_string(state.noise_rounds) + " exceed limit " + std::to_string(allowed)},
               {"noise_rounds", state.noise_rounds},
               {"noise_groups", state.noise_groups},
               {"failure_history", failure_history(state)}};
  return t;
}

std::optional<HumanTicket> max_cycles_guard(const RunState& state, int limit) {
  if (state.implementation_cycles <= limit * (1 + state.cycle_grants)) return std::nullopt;
  HumanTicket t;
  t.run_id = state.run_id;
  t.kind = TicketKind::run_halt;
  t.payload = {{"reason", "implementation cycles " + std::to_string(state.implementation_cycles) + " exceed limit " +
                              std::to_string(limit * (1 + state.cycle_grants))},
               {"implementation_cycles", state.implementation_cycles},
               {"failure_history", failure_history(state)},
               {"last_findings", findings_json(state.last_findings)}};
  return t;
}

}  // namespace harness::pipeline
