#include "harness/calibration.hpp"

#include <algorithm>
#include <iomanip>
#include <set>
#include <sstream>

#include "harness/error.hpp"
#include "harness/memory.hpp"
#include "harness/util.hpp"

namespace harness::calibration {

using nlohmann::json;
using pipeline::EventKind;
using pipeline::RunEvent;

namespace {

bool post_pipeline_gate(const std::string& gate) {
  return gate == "structural_review" || gate == "qa" || gate == "shipping";
}

std::string origin_of(const RunEvent& e) { return e.payload.value("origin", "ci"); }

std::string class_of(const RunEvent& e) {
  return e.payload.contains("classification") ? e.payload["classification"].value("class", "") : "";
}

std::optional<double> ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += sep;
    out += p;
  }
  return out;
}

std::vector<std::string> nonempty_lines(const std::string& text) {
  std::vector<std::string> out;
  for (const auto& l : util::split_lines(text)) {
    const std::string t = util::trim(l);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

struct RunFacts {
  std::string module;
  std::string domain;
};

std::map<std::string, RunFacts> run_facts(const std::vector<RunEvent>& events) {
  std::map<std::string, RunFacts> facts;
  for (const auto& e : events) {
    if (e.kind == EventKind::issue_submitted) {
      facts[e.run_id].module = e.payload.at("issue").value("id", "");
    } else if (e.kind == EventKind::contract_compiled_p1) {
      auto& f = facts[e.run_id];
      f.module = e.payload.at("contract").value("module_name", f.module);
      const auto specs = e.payload.value("specializations", json::array());
      if (!specs.empty()) f.domain = specs.front().value("domain", "");
    }
  }
  return facts;
}

}  // namespace

const std::vector<std::string>& proposal_kinds() {
  static const std::vector<std::string> kKinds = {"regression_promotion", "contract_template_update",
                                                  "review_checklist_item", "compiler_rule", "memory_promotion"};
  return kKinds;
}

TimeWindow TimeWindow::parse(std::string_view text) {
  TimeWindow w;
  const std::string t = util::trim(text);
  if (t.empty() || t == "all" || t == "..") return w;
  const auto dots = t.find("..");
  if (dots == std::string::npos) throw Error(ErrorCode::invalid_argument, "window must look like FROM..TO");
  const std::string from = t.substr(0, dots);
  const std::string to = t.substr(dots + 2);
  try {
    if (!from.empty()) w.from = util::parse_iso8601_utc(from);
    if (!to.empty()) w.to = util::parse_iso8601_utc(to);
  } catch (const Error& e) {
    throw Error(ErrorCode::invalid_argument, std::string("window: ") + e.what());
  }
  if (w.from && w.to && *w.from > *w.to) throw Error(ErrorCode::invalid_argument, "window ends before it starts");
  return w;
}

bool TimeWindow::contains(const std::string& timestamp) const {
  if (!from && !to) return true;
  const std::int64_t t = util::parse_iso8601_utc(timestamp);
  return (!from || t >= *from) && (!to || t <= *to);
}

std::string TimeWindow::to_string() const {
  return (from ? util::iso8601_utc(*from) : std::string()) + ".." + (to ? util::iso8601_utc(*to) : std::string());
}

// ---- retrospectives -------------------------------------------------------

std::vector<RetroProposal> run_retro(const std::vector<RunEvent>& events, const RetroPolicy& policy) {
  struct Bucket {
    int count = 0;
    std::set<std::string> runs;
    std::vector<std::string> texts;
    json tests = json::array();
  };
  const auto facts = run_facts(events);
  std::map<std::pair<std::string, std::string>, Bucket> failures;
  std::map<std::string, Bucket> reviews;

  for (const auto& e : events) {
    if (e.kind == EventKind::failure_classified) {
      const std::string cls = class_of(e);
      if (cls.empty() || cls == "noise") continue;
      Bucket& b = failures[{cls, e.payload.value("section", "uncovered")}];
      ++b.count;
      b.runs.insert(e.run_id);
      const std::string summary = e.payload.value("summary", "");
      if (!summary.empty() && std::find(b.texts.begin(), b.texts.end(), summary) == b.texts.end()) {
        b.texts.push_back(summary);
      }
      for (const auto& t : e.payload.value("tests", json::array())) b.tests.push_back(t);
    } else if (e.kind == EventKind::gate_recorded && e.payload.value("verdict", "") == "fail" &&
               post_pipeline_gate(e.payload.value("gate", ""))) {
      Bucket& b = reviews[e.payload.value("gate", "")];
      ++b.count;
      b.runs.insert(e.run_id);
      for (const auto& f : e.payload.value("findings", json::array())) {
        if (f.value("severity", "") == "blocker") b.texts.push_back(f.value("text", ""));
      }
    }
  }

  const auto target_for = [&](const std::set<std::string>& runs) {
    for (const auto& r : runs) {
      auto it = facts.find(r);
      if (it != facts.end() && !it->second.domain.empty()) return it->second.domain;
    }
    for (const auto& r : runs) {
      auto it = facts.find(r);
      if (it != facts.end() && !it->second.module.empty()) return it->second.module;
    }
    return std::string("default");
  };

  std::vector<RetroProposal> out;
  for (const auto& [key, b] : failures) {
    if (b.count < policy.recurrence_threshold) continue;
    const auto& [cls, section] = key;
    RetroProposal p;
    p.target = target_for(b.runs);
    p.evidence_runs.assign(b.runs.begin(), b.runs.end());
    if (cls == "bug") {
      p.kind = "regression_promotion";
      p.diff = json{{"module", target_for(b.runs)}, {"section", section}, {"tests", b.tests}}.dump();
    } else if (cls == "spec_gap") {
      p.kind = "contract_template_update";
      p.diff = join(b.texts, "\n");
    } else {
      p.kind = "compiler_rule";
      p.diff = join(b.texts, "\n");
    }
    out.push_back(std::move(p));
  }
  for (const auto& [gate, b] : reviews) {
    if (b.count < policy.recurrence_threshold) continue;
    RetroProposal p;
    p.kind = "review_checklist_item";
    p.target = target_for(b.runs);
    p.evidence_runs.assign(b.runs.begin(), b.runs.end());
    p.diff = join(b.texts, "\n");
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<RetroProposal> proposals_from_body(const json& body, const std::string& run_id) {
  if (!body.is_object() || !body.contains("proposals") || !body["proposals"].is_array()) {
    throw Error(ErrorCode::agent_response_invalid, "retro body lacks a proposals list");
  }
  std::vector<RetroProposal> out;
  for (const auto& item : body["proposals"]) {
    RetroProposal p;
    p.kind = item.value("kind", "");
    if (std::find(proposal_kinds().begin(), proposal_kinds().end(), p.kind) == proposal_kinds().end()) {
      throw Error(ErrorCode::agent_response_invalid, "unknown proposal kind '" + p.kind + "'");
    }
    p.target = item.value("target", "");
    p.diff = item.value("diff", "");
    if (p.target.empty() || p.diff.empty()) throw Error(ErrorCode::agent_response_invalid, "proposal needs target and diff");
    p.evidence_runs = item.value("evidence_runs", std::vector<std::string>{run_id});
    if (p.evidence_runs.empty()) p.evidence_runs.push_back(run_id);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<compiler::LintRule> load_lint_rules(const std::filesystem::path& file) {
  std::vector<compiler::LintRule> out;
  if (!std::filesystem::exists(file)) return out;
  try {
    for (const auto& r : json::parse(util::read_file(file))) out.push_back(compiler::lint_rule_from_json(r));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, file.string() + ": " + e.what());
  }
  return out;
}

AppliedChange apply_proposal(const RetroProposal& proposal, const Approval& approval, const HarnessStores& stores) {
  if (!approval.approved || approval.principal.empty() || proposal.status != "approved") {
    throw Error(ErrorCode::not_approved, "proposal " + proposal.id + " is " + proposal.status);
  }
  AppliedChange change;
  const auto lines = nonempty_lines(proposal.diff);

  if (proposal.kind == "contract_template_update" || proposal.kind == "review_checklist_item") {
    auto registry = memory::load_registry(stores.specializations_dir);
    auto it = std::find_if(registry.begin(), registry.end(),
                           [&](const memory::SpecializationRecord& r) { return r.domain == proposal.target; });
    if (it == registry.end()) throw Error(ErrorCode::not_found, "specialization " + proposal.target);
    int added = 0;
    for (const auto& line : lines) {
      if (proposal.kind == "review_checklist_item") {
        if (std::find(it->review_checklist_items.begin(), it->review_checklist_items.end(), line) ==
            it->review_checklist_items.end()) {
          it->review_checklist_items.push_back(line);
          ++added;
        }
        continue;
      }
      const bool present = std::any_of(it->injected_clauses.begin(), it->injected_clauses.end(),
                                       [&](const contract::InvariantClause& c) { return c.text == line; });
      if (present) continue;
      it->injected_clauses.push_back({"tpl-" + std::to_string(it->injected_clauses.size() + 1), line,
                                      compiler::default_severity(line), contract::Origin::specialization});
      ++added;
    }
    memory::save_specialization(stores.specializations_dir, *it);
    change.description = "specialization " + proposal.target + ": " + std::to_string(added) +
                         (proposal.kind == "review_checklist_item" ? " checklist item(s)" : " template clause(s)");
  } else if (proposal.kind == "compiler_rule") {
    auto rules = load_lint_rules(stores.lint_rules_file);
    compiler::LintRule rule;
    try {
      rule = compiler::lint_rule_from_json(json::parse(proposal.diff));
    } catch (const std::exception&) {
      rule.id = "calibrated-" + std::to_string(rules.size() + 1);
      for (const auto& line : lines) rule.phrases.push_back(util::to_lower(line));
      rule.interpretations = {"the phrase as the author meant it", "the phrase as an implementer might read it"};
      rule.suggestion = "state the intended behavior explicitly";
    }
    if (rule.phrases.empty()) throw Error(ErrorCode::invalid_argument, "compiler rule without phrases");
    rules.push_back(rule);
    json arr = json::array();
    for (const auto& r : rules) arr.push_back(compiler::to_json(r));
    util::write_file_atomic(stores.lint_rules_file, arr.dump(2) + "\n");
    change.description = "lint rule " + rule.id;
  } else if (proposal.kind == "memory_promotion") {
    memory::MemoryDocument doc;
    if (std::filesystem::exists(stores.memory_file)) doc = memory::parse_memory(util::read_file(stores.memory_file));
    auto request = memory::propose_promotion(doc, proposal.target, memory::Proposer::retro_agent);
    request = memory::decide_promotion(request, true, approval.principal);
    doc = memory::apply_promotion(std::move(doc), request);
    util::write_file_atomic(stores.memory_file, memory::serialize_memory(doc));
    change.description = "memory entry " + proposal.target + " promoted";
  } else if (proposal.kind == "regression_promotion") {
    json diff;
    try {
      diff = json::parse(proposal.diff);
    } catch (const json::exception&) {
      throw Error(ErrorCode::invalid_argument, "regression proposal diff must be JSON");
    }
    const std::string module = diff.value("module", proposal.target);
    verification::RegressionRegistry registry;
    for (const auto& t : diff.value("tests", json::array())) {
      const std::string suite_id = t.value("suite_id", "");
      const std::string test_id = t.value("test_id", "");
      const auto suite = stores.find_suite ? stores.find_suite(suite_id) : std::nullopt;
      if (!suite) throw Error(ErrorCode::unknown_test, "suite " + suite_id + " not found");
      const std::size_t before = registry.size();
      registry = verification::promote_regression(test_id, *suite, module, registry);
      if (registry.size() == before) continue;
      change.events.push_back({EventKind::regression_promoted,
                               {{"module", module},
                                {"test_id", test_id},
                                {"suite", verification::to_json(registry.by_module[module].back())},
                                {"proposal", proposal.id}}});
    }
    change.description = std::to_string(change.events.size()) + " regression test(s) for " + module;
  } else {
    throw Error(ErrorCode::invalid_argument, "unknown proposal kind " + proposal.kind);
  }
  return change;
}

// ---- metrics --------------------------------------------------------------

MetricsReport compute_metrics(const std::vector<RunEvent>& events, const TimeWindow& window) {
  MetricsReport m;
  m.window = window;

  std::map<std::string, std::string> started;           // run -> issue timestamp
  std::map<std::string, bool> ambiguous_label;           // run -> label
  std::map<std::string, int> implementer_jobs;           // run -> count so far
  std::map<std::string, int> human_so_far;               // run -> decisions so far
  std::map<std::string, bool> routed_to_refinement;      // run -> ambiguity corrective seen in window
  std::set<std::string> labeled_in_window;
  std::set<std::string> gap_sections;
  std::vector<double> cycle_times;
  std::vector<int> cycles_at_done;
  std::int64_t ci_pass = 0, ci_total = 0;
  std::int64_t pre_bug = 0, pre_spec = 0, pre_noise = 0, pre_total = 0, post_bug = 0;
  std::int64_t qa_fail = 0, qa_total = 0, rollbacks = 0, adjudicated = 0, true_issues = 0, approvals = 0;

  for (const auto& e : events) {
    const bool in = window.contains(e.timestamp);
    switch (e.kind) {
      case EventKind::issue_submitted: {
        started[e.run_id] = e.timestamp;
        const json labels = e.payload.value("ground_truth_labels", json::object());
        if (labels.is_object() && labels.contains("ambiguous") && labels["ambiguous"].is_boolean()) {
          ambiguous_label[e.run_id] = labels["ambiguous"].get<bool>();
          if (in) labeled_in_window.insert(e.run_id);
        }
        break;
      }
      case EventKind::job_dispatched: {
        const json& p = e.payload.at("payload");
        const std::string role = p.value("role", "");
        if (role == "implementer") ++implementer_jobs[e.run_id];
        if (in) ++m.jobs_dispatched;
        break;
      }
      case EventKind::response_received: {
        if (!in) break;
        const std::string route = e.payload.value("route", "");
        if (e.payload.value("kind", "") != "test_suite") break;
        if (route == "test_author") ++m.suites_generated;
        if (route == "test_author_calibration") ++m.calibration_suites;
        break;
      }
      case EventKind::ci_completed:
        if (!in) break;
        ++ci_total;
        if (e.payload.value("status", "") == "pass") ++ci_pass;
        break;
      case EventKind::failure_classified: {
        if (!in) break;
        const std::string cls = class_of(e);
        ++m.recurring_failure_classes[cls];
        if (cls == "spec_gap") gap_sections.insert(e.payload.value("section", "uncovered"));
        if (cls == "bug") ++m.agents_with_failures["implementer"];
        if (cls == "spec_gap" || cls == "contract_ambiguity") ++m.agents_with_failures["contract_compiler"];
        if (cls == "noise") ++m.agents_with_failures["test_author"];
        if (origin_of(e) == "post_merge") {
          if (cls == "bug") ++post_bug;
        } else {
          ++pre_total;
          if (cls == "bug") ++pre_bug;
          if (cls == "spec_gap") ++pre_spec;
          if (cls == "noise") ++pre_noise;
        }
        break;
      }
      case EventKind::corrective_action:
        if (in && origin_of(e) == "ci" && e.payload.value("class", "") == "contract_ambiguity") {
          routed_to_refinement[e.run_id] = true;
        }
        break;
      case EventKind::gate_recorded: {
        if (!in) break;
        const std::string gate = e.payload.value("gate", "");
        const bool failed = e.payload.value("verdict", "") == "fail";
        const json findings = e.payload.value("findings", json::array());
        if (gate == "qa") {
          ++qa_total;
          if (failed) ++qa_fail;
        }
        if (gate == "structural_review") m.structural_review_findings += static_cast<std::int64_t>(findings.size());
        for (const auto& f : findings) {
          if (f.value("gate_role", "") == "security_reviewer") ++m.trust_boundary_findings;
        }
        if (failed && post_pipeline_gate(gate)) {
          ++m.agents_with_failures["implementer"];
          for (const auto& f : findings) {
            if (f.value("severity", "") == "blocker") ++m.bugs_caught_pre_merge;
          }
        }
        break;
      }
      case EventKind::regression_promoted:
        if (in) ++m.regressions_promoted;
        break;
      case EventKind::human_decision: {
        const std::string kind = e.payload.value("ticket_kind", "");
        if (!in) {
          ++human_so_far[e.run_id];
          break;
        }
        ++m.human_interventions;
        ++human_so_far[e.run_id];
        if (kind == "rollback_report") ++rollbacks;
        if (kind == "finding_adjudication") {
          ++adjudicated;
          if (e.payload.value("adjudication", "") == "true_issue") ++true_issues;
        }
        if ((kind == "proposal_approval" || kind == "memory_promotion") && e.payload.value("decision", "") == "approve") {
          ++approvals;
          if (kind == "memory_promotion" || e.payload.value("proposal_kind", "") == "memory_promotion") {
            ++m.memory_promotions;
          } else if (e.payload.value("proposal_kind", "") == "contract_template_update" ||
                     e.payload.value("proposal_kind", "") == "review_checklist_item") {
            ++m.specialization_updates;
          }
        }
        break;
      }
      case EventKind::run_done: {
        if (!in) break;
        ++m.features_completed;
        cycles_at_done.push_back(implementer_jobs[e.run_id]);
        if (auto it = started.find(e.run_id); it != started.end()) {
          cycle_times.push_back(static_cast<double>(util::parse_iso8601_utc(e.timestamp) -
                                                    util::parse_iso8601_utc(it->second)));
        }
        if (human_so_far[e.run_id] == 0) ++m.autonomous_commits;
        break;
      }
      default:
        break;
    }
  }

  m.bugs_caught_pre_merge += pre_bug;
  if (!cycle_times.empty()) {
    double sum = 0;
    for (double t : cycle_times) sum += t;
    m.cycle_time_mean_seconds = sum / static_cast<double>(cycle_times.size());
    m.cycle_time_max_seconds = *std::max_element(cycle_times.begin(), cycle_times.end());
  }
  if (!cycles_at_done.empty()) {
    double sum = 0;
    for (int c : cycles_at_done) sum += c;
    m.avg_implementation_cycles = sum / static_cast<double>(cycles_at_done.size());
  }
  m.pass_fail_rate = ratio(ci_pass, ci_total);
  m.spec_gap_rate = ratio(pre_spec, pre_total);
  m.verifier_noise_rate = ratio(pre_noise, pre_total);

  std::int64_t ambiguous = 0, routed = 0;
  for (const auto& run : labeled_in_window) {
    if (!ambiguous_label[run]) continue;
    ++ambiguous;
    if (routed_to_refinement[run]) ++routed;
  }
  m.ambiguity_detection_rate = ratio(routed, ambiguous);

  m.post_merge_bug_rate = ratio(post_bug, m.features_completed);
  m.rollback_rate = ratio(rollbacks, m.features_completed);
  m.qa_failure_rate = ratio(qa_fail, qa_total);
  m.contract_sections_with_gaps.assign(gap_sections.begin(), gap_sections.end());
  m.failures_converted_to_improvements = m.regressions_promoted + approvals;
  m.contract_violation_detection_rate = ratio(pre_bug, pre_bug + post_bug);
  m.review_gate_precision = ratio(true_issues, adjudicated);
  return m;
}

json to_json(const MetricsReport& m) {
  const auto put = [](json& obj, const char* key, const std::optional<double>& v) {
    if (v) obj[key] = *v;
  };
  json productivity{{"features_completed", m.features_completed},
                    {"autonomous_commits", m.autonomous_commits},
                    {"human_interventions", m.human_interventions},
                    {"jobs_dispatched", m.jobs_dispatched}};
  put(productivity, "cycle_time_mean_seconds", m.cycle_time_mean_seconds);
  put(productivity, "cycle_time_max_seconds", m.cycle_time_max_seconds);
  put(productivity, "avg_implementation_cycles", m.avg_implementation_cycles);

  json verification{{"suites_generated", m.suites_generated},
                    {"calibration_suites", m.calibration_suites},
                    {"bugs_caught_pre_merge", m.bugs_caught_pre_merge},
                    {"regressions_promoted", m.regressions_promoted}};
  put(verification, "pass_fail_rate", m.pass_fail_rate);
  put(verification, "spec_gap_rate", m.spec_gap_rate);
  put(verification, "verifier_noise_rate", m.verifier_noise_rate);
  put(verification, "ambiguity_detection_rate", m.ambiguity_detection_rate);

  json quality{{"structural_review_findings", m.structural_review_findings},
               {"trust_boundary_findings", m.trust_boundary_findings}};
  put(quality, "post_merge_bug_rate", m.post_merge_bug_rate);
  put(quality, "rollback_rate", m.rollback_rate);
  put(quality, "qa_failure_rate", m.qa_failure_rate);

  json calibration{{"recurring_failure_classes", m.recurring_failure_classes},
                   {"contract_sections_with_gaps", m.contract_sections_with_gaps},
                   {"agents_with_failures", m.agents_with_failures},
                   {"specialization_updates", m.specialization_updates},
                   {"memory_promotions", m.memory_promotions},
                   {"failures_converted_to_improvements", m.failures_converted_to_improvements}};

  json diagnostics = json::object();
  put(diagnostics, "contract_violation_detection_rate", m.contract_violation_detection_rate);
  put(diagnostics, "review_gate_precision", m.review_gate_precision);
  put(diagnostics, "avg_implementation_cycles", m.avg_implementation_cycles);
  put(diagnostics, "ambiguity_detection_rate", m.ambiguity_detection_rate);

  return {{"window", m.window.to_string()},
          {"productivity", productivity},
          {"verification", verification},
          {"quality", quality},
          {"calibration", calibration},
          {"diagnostics", diagnostics}};
}

std::string to_table(const MetricsReport& m) {
  const json j = to_json(m);
  std::ostringstream out;
  out << "window " << j["window"].get<std::string>() << "\n";
  for (const char* section : {"productivity", "verification", "quality", "calibration", "diagnostics"}) {
    out << "\n" << section << "\n";
    for (const auto& [key, value] : j[section].items()) {
      out << "  " << std::left << std::setw(36) << key;
      if (value.is_number_float()) {
        out << std::fixed << std::setprecision(4) << value.get<double>();
      } else {
        out << value.dump();
      }
      out << "\n";
    }
  }
  return out.str();
}

}  // namespace harness::calibration
