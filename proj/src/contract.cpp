#include "harness/contract.hpp"

#include <algorithm>
#include <map>
#include <regex>
#include <set>

#include "harness/error.hpp"

namespace harness::contract {

using nlohmann::json;

namespace {

template <typename E, std::size_t N>
std::optional<E> lookup(const std::pair<E, std::string_view> (&table)[N], std::string_view s) {
  for (const auto& [value, name] : table) {
    if (name == s) return value;
  }
  return std::nullopt;
}

template <typename E, std::size_t N>
std::string_view name_of(const std::pair<E, std::string_view> (&table)[N], E value) {
  for (const auto& [v, name] : table) {
    if (v == value) return name;
  }
  return "?";
}

constexpr std::pair<Status, std::string_view> kStatus[] = {
    {Status::draft_pass1, "draft_pass1"},   {Status::refined_pass2, "refined_pass2"},
    {Status::product_approved, "product_approved"}, {Status::eng_approved, "eng_approved"},
    {Status::final, "final"},               {Status::superseded, "superseded"}};
constexpr std::pair<SurfaceKind, std::string_view> kSurfaceKind[] = {
    {SurfaceKind::api_endpoint, "api_endpoint"}, {SurfaceKind::ui_flow, "ui_flow"},
    {SurfaceKind::job, "job"}, {SurfaceKind::integration, "integration"}};
constexpr std::pair<Severity, std::string_view> kSeverity[] = {{Severity::must, "must"},
                                                               {Severity::should, "should"}};
constexpr std::pair<Origin, std::string_view> kOrigin[] = {
    {Origin::issue, "issue"}, {Origin::pass1_inferred, "pass1_inferred"},
    {Origin::specialization, "specialization"}, {Origin::calibration, "calibration"}};

// ---- strict JSON reading -------------------------------------------------

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "expected an object");
  }

  void allow(std::initializer_list<std::string_view> keys) const {
    for (const auto& [key, _] : j_.items()) {
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) fail(key, "unknown field");
    }
  }

  std::string str(std::string_view key, bool required = true) const {
    const auto it = j_.find(key);
    if (it == j_.end()) {
      if (required) fail(key, "missing required field");
      return {};
    }
    if (!it->is_string()) fail(key, "expected a string");
    return it->get<std::string>();
  }

  std::vector<std::string> strings(std::string_view key) const {
    std::vector<std::string> out;
    const auto it = j_.find(key);
    if (it == j_.end()) return out;
    if (!it->is_array()) fail(key, "expected an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      if (!(*it)[i].is_string()) fail(std::string(key) + "/" + std::to_string(i), "expected a string");
      out.push_back((*it)[i].get<std::string>());
    }
    return out;
  }

  template <typename T, typename F>
  std::vector<T> objects(std::string_view key, F&& read_one) const {
    std::vector<T> out;
    const auto it = j_.find(key);
    if (it == j_.end()) return out;
    if (!it->is_array()) fail(key, "expected an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      out.push_back(read_one(Reader((*it)[i], path_ + "/" + std::string(key) + "/" + std::to_string(i))));
    }
    return out;
  }

  template <typename E, std::size_t N>
  E enumeration(std::string_view key, const std::pair<E, std::string_view> (&table)[N]) const {
    const std::string s = str(key);
    const auto v = lookup(table, s);
    if (!v) fail(key, "invalid value '" + s + "'");
    return *v;
  }

  [[noreturn]] void fail(std::string_view key, const std::string& what) const {
    std::string where = path_;
    if (!key.empty()) where += "/" + std::string(key);
    if (where.empty()) where = "/";
    throw Error(ErrorCode::parse_error, "field " + where + ": " + what);
  }

 private:
  const json& j_;
  std::string path_;
};

std::string clause_id(const Reader& r) {
  std::string id = r.str("id");
  if (id.empty()) r.fail("id", "clause id must be non-empty");
  return id;
}

TextClause read_text(const Reader& r) {
  r.allow({"id", "text", "origin"});
  return TextClause{clause_id(r), r.str("text"), r.enumeration("origin", kOrigin)};
}

InvariantClause read_invariant(const Reader& r) {
  r.allow({"id", "text", "severity", "origin"});
  return InvariantClause{clause_id(r), r.str("text"), r.enumeration("severity", kSeverity),
                         r.enumeration("origin", kOrigin)};
}

json write(const TextClause& c) {
  return json{{"id", c.id}, {"text", c.text}, {"origin", to_string(c.origin)}};
}

json write(const InvariantClause& c) {
  return json{{"id", c.id}, {"text", c.text}, {"severity", to_string(c.severity)},
              {"origin", to_string(c.origin)}};
}

template <typename T>
json write_list(const std::vector<T>& items) {
  json arr = json::array();
  for (const auto& item : items) arr.push_back(write(item));
  return arr;
}

std::string clause_fingerprint(const std::string& section, const json& clause) {
  return section + "\n" + clause.dump();
}

std::map<ClauseId, std::string> fingerprints(const Contract& c) {
  std::map<ClauseId, std::string> out;
  auto put = [&](const std::string& section, const ClauseId& id, const json& body) {
    out[id] = clause_fingerprint(section, body);
  };
  for (const auto& s : c.surfaces) {
    json body{{"kind", to_string(s.kind)}, {"method_or_trigger", s.method_or_trigger},
              {"path_or_name", s.path_or_name}, {"returns", s.returns}, {"errors", s.errors},
              {"origin", to_string(s.origin)}};
    put("surfaces", s.id, body);
    for (const auto& se : s.side_effects) put("surfaces." + s.id + ".side_effects", se.id, write(se));
  }
  for (const auto& x : c.invariants) put("invariants", x.id, write(x));
  for (const auto& x : c.error_taxonomy) {
    put("error_taxonomy", x.id,
        json{{"code", x.code}, {"meaning", x.meaning}, {"origin", to_string(x.origin)}});
  }
  for (const auto& x : c.auth_rules) put("auth_rules", x.id, write(x));
  for (const auto& x : c.business_rules) put("business_rules", x.id, write(x));
  for (const auto& x : c.out_of_scope) put("out_of_scope", x.id, write(x));
  for (const auto& x : c.qa_targets) put("qa_targets", x.id, write(x));
  for (const auto& x : c.regression_risks) put("regression_risks", x.id, write(x));
  for (const auto& x : c.acceptance_criteria) {
    put("acceptance_criteria", x.id,
        json{{"text", x.text}, {"linked_invariants", x.linked_invariants},
             {"origin", to_string(x.origin)}});
  }
  for (const auto& x : c.known_gaps) put("known_gaps", x.id, write(x));
  return out;
}

}  // namespace

std::string_view to_string(Status s) { return name_of(kStatus, s); }
std::string_view to_string(SurfaceKind k) { return name_of(kSurfaceKind, k); }
std::string_view to_string(Severity s) { return name_of(kSeverity, s); }
std::string_view to_string(Origin o) { return name_of(kOrigin, o); }
std::optional<Status> parse_status(std::string_view s) { return lookup(kStatus, s); }
std::optional<Origin> parse_origin(std::string_view s) { return lookup(kOrigin, s); }
std::optional<Severity> parse_severity(std::string_view s) { return lookup(kSeverity, s); }

std::vector<ClauseRef> all_clauses(const Contract& c) {
  std::vector<ClauseRef> out;
  for (const auto& s : c.surfaces) {
    out.push_back({s.id, "surfaces", s.method_or_trigger + " " + s.path_or_name, s.origin});
    for (const auto& se : s.side_effects) out.push_back({se.id, "surfaces.side_effects", se.text, se.origin});
  }
  for (const auto& x : c.invariants) out.push_back({x.id, "invariants", x.text, x.origin});
  for (const auto& x : c.error_taxonomy) out.push_back({x.id, "error_taxonomy", x.code + " " + x.meaning, x.origin});
  for (const auto& x : c.auth_rules) out.push_back({x.id, "auth_rules", x.text, x.origin});
  for (const auto& x : c.business_rules) out.push_back({x.id, "business_rules", x.text, x.origin});
  for (const auto& x : c.out_of_scope) out.push_back({x.id, "out_of_scope", x.text, x.origin});
  for (const auto& x : c.qa_targets) out.push_back({x.id, "qa_targets", x.text, x.origin});
  for (const auto& x : c.regression_risks) out.push_back({x.id, "regression_risks", x.text, x.origin});
  for (const auto& x : c.acceptance_criteria) out.push_back({x.id, "acceptance_criteria", x.text, x.origin});
  for (const auto& x : c.known_gaps) out.push_back({x.id, "known_gaps", x.text, x.origin});
  return out;
}

std::vector<ClauseId> clause_ids(const Contract& c) {
  std::vector<ClauseId> ids;
  for (auto& ref : all_clauses(c)) ids.push_back(std::move(ref.id));
  return ids;
}

const InvariantClause* find_invariant(const Contract& c, std::string_view id) {
  for (const auto& x : c.invariants) {
    if (x.id == id) return &x;
  }
  for (const auto& x : c.business_rules) {
    if (x.id == id) return &x;
  }
  return nullptr;
}

std::optional<ClauseRef> find_clause(const Contract& c, std::string_view id) {
  for (auto& ref : all_clauses(c)) {
    if (ref.id == id) return ref;
  }
  return std::nullopt;
}

bool is_semver(std::string_view version) {
  static const std::regex kSemver(
      R"(^(0|[1-9]\d*)\.(0|[1-9]\d*)\.(0|[1-9]\d*)(-[0-9A-Za-z-]+(\.[0-9A-Za-z-]+)*)?(\+[0-9A-Za-z-]+(\.[0-9A-Za-z-]+)*)?$)");
  return std::regex_match(version.begin(), version.end(), kSemver);
}

ValidationReport validate_contract(const Contract& c) {
  ValidationReport report;
  auto add = [&](std::string field, std::string rule) { report.push_back({std::move(field), std::move(rule)}); };

  static const std::regex kIdentifier(R"(^[A-Za-z_][A-Za-z0-9_.-]*$)");
  if (c.module_name.empty()) {
    add("module_name", "non-empty");
  } else if (!std::regex_match(c.module_name, kIdentifier)) {
    add("module_name", "identifier");
  }
  if (!is_semver(c.version)) add("version", "semver");

  std::set<ClauseId> seen;
  auto check_id = [&](const std::string& field, const ClauseId& id) {
    if (id.empty()) {
      add(field + ".id", "non-empty");
    } else if (!seen.insert(id).second) {
      add(field + ".id", "unique-id");
    }
  };
  auto check_text = [&](const std::string& field, const std::string& text) {
    if (text.empty()) add(field + ".text", "non-empty");
  };
  auto text_list = [&](const std::string& name, const std::vector<TextClause>& items) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      const std::string field = name + "[" + std::to_string(i) + "]";
      check_id(field, items[i].id);
      check_text(field, items[i].text);
    }
  };
  auto invariant_list = [&](const std::string& name, const std::vector<InvariantClause>& items) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      const std::string field = name + "[" + std::to_string(i) + "]";
      check_id(field, items[i].id);
      check_text(field, items[i].text);
    }
  };

  for (std::size_t i = 0; i < c.surfaces.size(); ++i) {
    const auto& s = c.surfaces[i];
    const std::string field = "surfaces[" + std::to_string(i) + "]";
    check_id(field, s.id);
    if (s.kind == SurfaceKind::api_endpoint) {
      if (s.method_or_trigger.empty()) add(field + ".method_or_trigger", "api-endpoint-non-empty");
      if (s.path_or_name.empty()) add(field + ".path_or_name", "api-endpoint-non-empty");
    }
    text_list(field + ".side_effects", s.side_effects);
  }
  invariant_list("invariants", c.invariants);
  for (std::size_t i = 0; i < c.error_taxonomy.size(); ++i) {
    const std::string field = "error_taxonomy[" + std::to_string(i) + "]";
    check_id(field, c.error_taxonomy[i].id);
    if (c.error_taxonomy[i].code.empty()) add(field + ".code", "non-empty");
  }
  text_list("auth_rules", c.auth_rules);
  invariant_list("business_rules", c.business_rules);
  text_list("out_of_scope", c.out_of_scope);
  text_list("qa_targets", c.qa_targets);
  text_list("regression_risks", c.regression_risks);
  for (std::size_t i = 0; i < c.acceptance_criteria.size(); ++i) {
    const auto& ac = c.acceptance_criteria[i];
    const std::string field = "acceptance_criteria[" + std::to_string(i) + "]";
    check_id(field, ac.id);
    check_text(field, ac.text);
  }
  text_list("known_gaps", c.known_gaps);

  // Referential integrity runs after all ids are known.
  for (std::size_t i = 0; i < c.acceptance_criteria.size(); ++i) {
    const auto& links = c.acceptance_criteria[i].linked_invariants;
    for (std::size_t k = 0; k < links.size(); ++k) {
      if (find_invariant(c, links[k]) == nullptr) {
        add("acceptance_criteria[" + std::to_string(i) + "].linked_invariants[" + std::to_string(k) + "]",
            "dangling-reference");
      }
    }
  }

  if (c.status == Status::final) {
    if (c.surfaces.empty()) add("surfaces", "final-requires-surface");
    if (c.invariants.empty()) add("invariants", "final-requires-invariant");
    if (c.acceptance_criteria.empty()) add("acceptance_criteria", "final-requires-acceptance-criterion");
  }
  if (!c.known_gaps.empty() && c.status != Status::final && c.status != Status::superseded) {
    add("known_gaps", "known-gaps-after-final");
  }
  return report;
}

ClauseDiff diff_contracts(const Contract& old_contract, const Contract& new_contract) {
  const auto before = fingerprints(old_contract);
  const auto after = fingerprints(new_contract);
  ClauseDiff d;
  for (const auto& [id, fp] : before) {
    const auto it = after.find(id);
    if (it == after.end()) {
      d.removed.push_back(id);
    } else if (it->second == fp) {
      d.unchanged.push_back(id);
    } else {
      d.rewritten.push_back(id);
    }
  }
  for (const auto& [id, _] : after) {
    if (!before.count(id)) d.added.push_back(id);
  }
  return d;
}

json to_json(const Contract& c) {
  json surfaces = json::array();
  for (const auto& s : c.surfaces) {
    surfaces.push_back(json{{"id", s.id},
                            {"kind", to_string(s.kind)},
                            {"method_or_trigger", s.method_or_trigger},
                            {"path_or_name", s.path_or_name},
                            {"returns", s.returns},
                            {"side_effects", write_list(s.side_effects)},
                            {"errors", s.errors},
                            {"origin", to_string(s.origin)}});
  }
  json errors = json::array();
  for (const auto& e : c.error_taxonomy) {
    errors.push_back(json{{"id", e.id}, {"code", e.code}, {"meaning", e.meaning}, {"origin", to_string(e.origin)}});
  }
  json criteria = json::array();
  for (const auto& a : c.acceptance_criteria) {
    criteria.push_back(json{{"id", a.id}, {"text", a.text}, {"linked_invariants", a.linked_invariants},
                            {"origin", to_string(a.origin)}});
  }
  return json{{"module_name", c.module_name},
              {"version", c.version},
              {"status", to_string(c.status)},
              {"surfaces", surfaces},
              {"invariants", write_list(c.invariants)},
              {"error_taxonomy", errors},
              {"auth_rules", write_list(c.auth_rules)},
              {"business_rules", write_list(c.business_rules)},
              {"out_of_scope", write_list(c.out_of_scope)},
              {"qa_targets", write_list(c.qa_targets)},
              {"regression_risks", write_list(c.regression_risks)},
              {"acceptance_criteria", criteria},
              {"known_gaps", write_list(c.known_gaps)}};
}

Contract from_json(const json& j) {
  const Reader r(j, "");
  r.allow({"module_name", "version", "status", "surfaces", "invariants", "error_taxonomy", "auth_rules",
           "business_rules", "out_of_scope", "qa_targets", "regression_risks", "acceptance_criteria",
           "known_gaps"});
  Contract c;
  c.module_name = r.str("module_name");
  c.version = r.str("version");
  c.status = r.enumeration("status", kStatus);
  c.surfaces = r.objects<Surface>("surfaces", [](const Reader& s) {
    s.allow({"id", "kind", "method_or_trigger", "path_or_name", "returns", "side_effects", "errors", "origin"});
    Surface out;
    out.id = clause_id(s);
    out.kind = s.enumeration("kind", kSurfaceKind);
    out.method_or_trigger = s.str("method_or_trigger", false);
    out.path_or_name = s.str("path_or_name", false);
    out.returns = s.strings("returns");
    out.side_effects = s.objects<TextClause>("side_effects", read_text);
    out.errors = s.strings("errors");
    out.origin = s.enumeration("origin", kOrigin);
    return out;
  });
  c.invariants = r.objects<InvariantClause>("invariants", read_invariant);
  c.error_taxonomy = r.objects<ErrorEntry>("error_taxonomy", [](const Reader& e) {
    e.allow({"id", "code", "meaning", "origin"});
    return ErrorEntry{clause_id(e), e.str("code"), e.str("meaning", false), e.enumeration("origin", kOrigin)};
  });
  c.auth_rules = r.objects<TextClause>("auth_rules", read_text);
  c.business_rules = r.objects<InvariantClause>("business_rules", read_invariant);
  c.out_of_scope = r.objects<TextClause>("out_of_scope", read_text);
  c.qa_targets = r.objects<TextClause>("qa_targets", read_text);
  c.regression_risks = r.objects<TextClause>("regression_risks", read_text);
  c.acceptance_criteria = r.objects<AcceptanceCriterion>("acceptance_criteria", [](const Reader& a) {
    a.allow({"id", "text", "linked_invariants", "origin"});
    return AcceptanceCriterion{clause_id(a), a.str("text"), a.strings("linked_invariants"),
                               a.enumeration("origin", kOrigin)};
  });
  c.known_gaps = r.objects<TextClause>("known_gaps", read_text);
  return c;
}

std::string serialize_contract(const Contract& c) { return to_json(c).dump(2) + "\n"; }

Contract parse_contract(std::string_view text) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    throw Error(ErrorCode::parse_error, "line 1: empty document");
  }
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    const std::size_t offset = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n');
    throw Error(ErrorCode::parse_error, "line " + std::to_string(line) + ": malformed JSON");
  }
  return from_json(j);
}

std::string contract_file_name(const Contract& c) {
  return c.module_name + "-v" + c.version + ".contract.json";
}

ClauseId fresh_clause_id(const std::vector<Contract>& lineage, std::string_view prefix) {
  const std::string head = std::string(prefix) + "-";
  long highest = 0;
  for (const auto& c : lineage) {
    for (const auto& id : clause_ids(c)) {
      if (id.rfind(head, 0) != 0) continue;
      const std::string tail = id.substr(head.size());
      if (tail.empty() || !std::all_of(tail.begin(), tail.end(), ::isdigit)) continue;
      highest = std::max(highest, std::stol(tail));
    }
  }
  return head + std::to_string(highest + 1);
}

}  // namespace harness::contract
