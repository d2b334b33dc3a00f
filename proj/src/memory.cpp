#include "harness/memory.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "harness/error.hpp"
#include "harness/util.hpp"

namespace harness::memory {

using nlohmann::json;

namespace {

constexpr std::pair<EntryKind, std::string_view> kKinds[] = {
    {EntryKind::decision, "decision"},
    {EntryKind::constraint, "constraint"},
    {EntryKind::failure_pattern, "failure_pattern"},
    {EntryKind::observation, "observation"}};

bool protected_kind(EntryKind k) { return k == EntryKind::decision || k == EntryKind::constraint; }

void write_section(std::string& out, std::string_view heading, const std::vector<MemoryEntry>& entries) {
  out += heading;
  out += "\n";
  for (const auto& e : entries) {
    out += "\n## " + e.id + "\n";
    out += "```\n";
    out += "created_at: " + e.created_at + "\n";
    out += "kind: " + std::string(to_string(e.kind)) + "\n";
    if (e.source_run) out += "source_run: " + *e.source_run + "\n";
    out += "```\n";
    if (!e.text.empty()) out += e.text + "\n";
  }
}

std::string strip_trailing_newlines(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

// Oldest first; ties keep document order.
std::vector<std::size_t> age_order(const std::vector<MemoryEntry>& entries, EntryKind kind) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].kind == kind) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return entries[a].created_at < entries[b].created_at; });
  return idx;
}

void merge_into(std::vector<MemoryEntry>& rolling, std::size_t keep, std::size_t drop, CompressionReport& report) {
  auto& kept = rolling[keep];
  const auto& other = rolling[drop];
  if (util::normalize_words(kept.text) != util::normalize_words(other.text)) {
    kept.text += "\n\n" + other.text;
  }
  report.merged.push_back({kept.id, other.id});
  rolling.erase(rolling.begin() + static_cast<std::ptrdiff_t>(drop));
}

}  // namespace

std::string_view to_string(EntryKind k) {
  for (const auto& [v, n] : kKinds) {
    if (v == k) return n;
  }
  return "?";
}

std::optional<EntryKind> parse_entry_kind(std::string_view s) {
  for (const auto& [v, n] : kKinds) {
    if (n == s) return v;
  }
  return std::nullopt;
}

std::string_view to_string(Proposer p) { return p == Proposer::retro_agent ? "retro_agent" : "operator"; }

std::string_view to_string(PromotionStatus s) {
  switch (s) {
    case PromotionStatus::pending: return "pending";
    case PromotionStatus::approved: return "approved";
    case PromotionStatus::rejected: return "rejected";
  }
  return "?";
}

const MemoryEntry* find_entry(const MemoryDocument& doc, std::string_view id) {
  for (const auto* section : {&doc.permanent, &doc.rolling}) {
    for (const auto& e : *section) {
      if (e.id == id) return &e;
    }
  }
  return nullptr;
}

MemoryDocument append_rolling(MemoryDocument doc, MemoryEntry entry) {
  if (entry.id.empty()) throw Error(ErrorCode::invalid_argument, "memory entry id must be non-empty");
  if (find_entry(doc, entry.id)) throw Error(ErrorCode::duplicate_id, "memory entry '" + entry.id + "' exists");
  entry.text = strip_trailing_newlines(std::move(entry.text));
  doc.rolling.push_back(std::move(entry));
  ++doc.revision;
  return doc;
}

std::pair<MemoryDocument, CompressionReport> compress_rolling(MemoryDocument doc, const CompressionPolicy& policy) {
  CompressionReport report;
  auto& rolling = doc.rolling;

  // Exact duplicates collapse into their first occurrence.
  std::map<std::pair<EntryKind, std::string>, std::size_t> first_seen;
  for (std::size_t i = 0; i < rolling.size();) {
    const auto key = std::make_pair(rolling[i].kind, util::normalize_words(rolling[i].text));
    const auto [it, inserted] = first_seen.emplace(key, i);
    if (inserted) {
      ++i;
    } else {
      merge_into(rolling, it->second, i, report);
    }
  }

  while (rolling.size() > policy.cap) {
    if (auto obs = age_order(rolling, EntryKind::observation); !obs.empty()) {
      report.deleted.push_back(rolling[obs.front()].id);
      rolling.erase(rolling.begin() + static_cast<std::ptrdiff_t>(obs.front()));
      continue;
    }
    if (auto fps = age_order(rolling, EntryKind::failure_pattern); fps.size() >= 2) {
      merge_into(rolling, std::min(fps[0], fps[1]), std::max(fps[0], fps[1]), report);
      continue;
    }
    // Only protected kinds (plus at most one failure pattern) remain; fold the
    // two oldest entries together so no text is lost.
    if (rolling.size() < 2) break;
    std::vector<std::size_t> all(rolling.size());
    std::iota(all.begin(), all.end(), 0);
    std::stable_sort(all.begin(), all.end(),
                     [&](std::size_t a, std::size_t b) { return rolling[a].created_at < rolling[b].created_at; });
    std::size_t keep = all[0];
    std::size_t drop = all[1];
    if (protected_kind(rolling[drop].kind) && !protected_kind(rolling[keep].kind)) std::swap(keep, drop);
    merge_into(rolling, keep, drop, report);
  }

  if (!report.empty()) ++doc.revision;
  return {std::move(doc), std::move(report)};
}

PromotionRequest propose_promotion(const MemoryDocument& doc, std::string_view entry_id, Proposer proposer) {
  for (const auto& e : doc.rolling) {
    if (e.id == entry_id) return PromotionRequest{e.id, e.text, proposer, PromotionStatus::pending, std::nullopt};
  }
  throw Error(ErrorCode::entry_missing, "no rolling entry '" + std::string(entry_id) + "'");
}

PromotionRequest decide_promotion(PromotionRequest request, bool approve, std::string principal) {
  if (request.status != PromotionStatus::pending) {
    throw Error(ErrorCode::already_resolved, "promotion for '" + request.entry_id + "' already decided");
  }
  if (principal.empty()) throw Error(ErrorCode::invalid_argument, "a promotion decision needs a principal");
  request.status = approve ? PromotionStatus::approved : PromotionStatus::rejected;
  request.decided_by = std::move(principal);
  return request;
}

MemoryDocument apply_promotion(MemoryDocument doc, const PromotionRequest& request) {
  if (request.status == PromotionStatus::rejected) return doc;
  if (request.status != PromotionStatus::approved || !request.decided_by || request.decided_by->empty()) {
    throw Error(ErrorCode::not_approved, "promotion for '" + request.entry_id + "' is not approved");
  }
  const auto it = std::find_if(doc.rolling.begin(), doc.rolling.end(),
                               [&](const MemoryEntry& e) { return e.id == request.entry_id; });
  if (it == doc.rolling.end()) {
    throw Error(ErrorCode::entry_missing, "no rolling entry '" + request.entry_id + "'");
  }
  doc.permanent.push_back(*it);
  doc.rolling.erase(it);
  ++doc.revision;
  return doc;
}

std::string serialize_memory(const MemoryDocument& doc) {
  std::string out;
  write_section(out, "# PERMANENT", doc.permanent);
  out += "\n";
  write_section(out, "# ROLLING", doc.rolling);
  return out;
}

std::string serialize_permanent(const MemoryDocument& doc) {
  std::string out;
  write_section(out, "# PERMANENT", doc.permanent);
  return out;
}

MemoryDocument parse_memory(std::string_view text) {
  MemoryDocument doc;
  const auto lines = util::split_lines(text);
  std::vector<MemoryEntry>* section = nullptr;
  bool saw_permanent = false;
  bool saw_rolling = false;
  std::size_t i = 0;
  auto fail = [&](const std::string& what) -> void {
    throw Error(ErrorCode::parse_error, "memory line " + std::to_string(i + 1) + ": " + what);
  };
  auto finish_body = [&]() {
    if (section && !section->empty()) section->back().text = strip_trailing_newlines(section->back().text);
  };

  for (; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line == "# PERMANENT") {
      if (saw_permanent || saw_rolling) fail("unexpected # PERMANENT");
      saw_permanent = true;
      section = &doc.permanent;
      continue;
    }
    if (line == "# ROLLING") {
      if (!saw_permanent || saw_rolling) fail("# ROLLING must follow # PERMANENT");
      finish_body();
      saw_rolling = true;
      section = &doc.rolling;
      continue;
    }
    const bool heading = util::starts_with(line, "## ") && i + 1 < lines.size() && lines[i + 1] == "```";
    if (heading) {
      if (!section) fail("entry before section heading");
      finish_body();
      MemoryEntry e;
      e.id = line.substr(3);
      i += 2;
      bool have_kind = false;
      for (; i < lines.size() && lines[i] != "```"; ++i) {
        const auto colon = lines[i].find(": ");
        if (colon == std::string::npos) fail("malformed metadata line");
        const std::string key = lines[i].substr(0, colon);
        const std::string value = lines[i].substr(colon + 2);
        if (key == "created_at") {
          e.created_at = value;
        } else if (key == "kind") {
          const auto k = parse_entry_kind(value);
          if (!k) fail("unknown kind '" + value + "'");
          e.kind = *k;
          have_kind = true;
        } else if (key == "source_run") {
          e.source_run = value;
        } else {
          fail("unknown metadata key '" + key + "'");
        }
      }
      if (i >= lines.size()) fail("unterminated metadata block");
      if (!have_kind) fail("entry '" + e.id + "' has no kind");
      if (find_entry(doc, e.id)) fail("duplicate entry id '" + e.id + "'");
      section->push_back(std::move(e));
      continue;
    }
    if (section && !section->empty()) {
      auto& body = section->back().text;
      if (!body.empty() || !line.empty()) {
        if (!body.empty()) body += "\n";
        body += line;
      }
    } else if (!line.empty()) {
      fail("text outside an entry");
    }
  }
  finish_body();
  if (!saw_permanent || !saw_rolling) {
    throw Error(ErrorCode::parse_error, "memory document needs # PERMANENT and # ROLLING sections");
  }
  return doc;
}

std::vector<MemoryEntry> select_excerpts(const MemoryDocument& doc, std::string_view module_name) {
  std::vector<MemoryEntry> out;
  for (const auto& e : doc.permanent) {
    if (protected_kind(e.kind)) out.push_back(e);
  }
  const std::string needle = util::to_lower(module_name);
  if (needle.empty()) return out;
  for (const auto& e : doc.rolling) {
    if (e.kind == EntryKind::failure_pattern && util::to_lower(e.text).find(needle) != std::string::npos) {
      out.push_back(e);
    }
  }
  return out;
}

// ---- specializations -------------------------------------------------------

json to_json(const SpecializationRecord& r) {
  json terms = json::array();
  for (const auto& t : r.trigger_terms) terms.push_back({{"term", t.term}, {"weight", t.weight}});
  contract::Contract carrier;
  carrier.invariants = r.injected_clauses;
  return {{"domain", r.domain},
          {"trigger_terms", terms},
          {"injected_clauses", contract::to_json(carrier)["invariants"]},
          {"review_checklist_items", r.review_checklist_items},
          {"min_confidence", r.min_confidence}};
}

SpecializationRecord specialization_from_json(const json& j) {
  SpecializationRecord r;
  try {
    r.domain = j.at("domain").get<std::string>();
    for (const auto& t : j.at("trigger_terms")) {
      r.trigger_terms.push_back({t.at("term").get<std::string>(), t.at("weight").get<double>()});
    }
    json carrier{{"module_name", "x"}, {"version", "0.0.0"}, {"status", "draft_pass1"},
                 {"invariants", j.at("injected_clauses")}};
    r.injected_clauses = contract::from_json(carrier).invariants;
    r.review_checklist_items = j.value("review_checklist_items", std::vector<std::string>{});
    r.min_confidence = j.value("min_confidence", 0.0);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("specialization record: ") + e.what());
  }
  if (auto problem = specialization_problem(r); !problem.empty()) {
    throw Error(ErrorCode::parse_error, "specialization record '" + r.domain + "': " + problem);
  }
  return r;
}

std::string specialization_problem(const SpecializationRecord& r) {
  if (r.domain.empty()) return "domain must be non-empty";
  if (r.trigger_terms.empty()) return "trigger_terms must be non-empty";
  for (const auto& t : r.trigger_terms) {
    if (util::trim(t.term).empty()) return "trigger terms must be non-empty";
    if (t.weight < 0) return "trigger term weights must be >= 0";
  }
  if (r.injected_clauses.empty()) return "injected_clauses must be non-empty";
  if (r.min_confidence < 0 || r.min_confidence > 1) return "min_confidence must be in [0,1]";
  return {};
}

std::vector<ScoredSpecialization> match_specializations(const RawIssue& issue,
                                                        const std::vector<SpecializationRecord>& registry) {
  std::string haystack = issue.title + "\n" + issue.body;
  for (const auto& label : issue.labels) haystack += "\n" + label;
  const std::string normalized = util::normalize_words(haystack);

  std::vector<ScoredSpecialization> out;
  for (const auto& record : registry) {
    double total = 0;
    double hit = 0;
    for (const auto& t : record.trigger_terms) {
      total += t.weight;
      const std::string needle = util::normalize_words(t.term);
      if (needle.size() > 1 && normalized.find(needle) != std::string::npos) hit += t.weight;
    }
    const double confidence = total > 0 ? std::min(1.0, hit / total) : 0.0;
    out.push_back({record, confidence});
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.record.domain < b.record.domain;
  });
  return out;
}

std::vector<SpecializationRecord> load_registry(const std::filesystem::path& dir) {
  std::vector<SpecializationRecord> out;
  if (!std::filesystem::exists(dir)) return out;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.size() > 10 && name.substr(name.size() - 10) == ".spec.json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    try {
      out.push_back(specialization_from_json(json::parse(util::read_file(f))));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::parse_error, f.string() + ": " + e.what());
    }
  }
  return out;
}

void save_specialization(const std::filesystem::path& dir, const SpecializationRecord& record) {
  util::write_file_atomic(dir / (record.domain + ".spec.json"), to_json(record).dump(2) + "\n");
}

}  // namespace harness::memory
