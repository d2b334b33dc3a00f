#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness/contract.hpp"
#include "harness/issue.hpp"

namespace harness::memory {

enum class EntryKind { decision, constraint, failure_pattern, observation };
std::string_view to_string(EntryKind k);
std::optional<EntryKind> parse_entry_kind(std::string_view s);

struct MemoryEntry {
  std::string id;
  std::string created_at;  // ISO-8601
  EntryKind kind = EntryKind::observation;
  std::string text;
  std::optional<std::string> source_run;
  bool operator==(const MemoryEntry&) const = default;
};

// Two-section project memory. Automated operations only ever touch
// `rolling`; `permanent` grows solely through apply_promotion.
struct MemoryDocument {
  std::vector<MemoryEntry> permanent;
  std::vector<MemoryEntry> rolling;
  std::int64_t revision = 0;
};

const MemoryEntry* find_entry(const MemoryDocument& doc, std::string_view id);

MemoryDocument append_rolling(MemoryDocument doc, MemoryEntry entry);

struct CompressionPolicy {
  std::size_t cap = 64;
};

struct MergeRecord {
  std::string kept;
  std::string merged;
  bool operator==(const MergeRecord&) const = default;
};

struct CompressionReport {
  std::vector<MergeRecord> merged;
  std::vector<std::string> deleted;
  bool empty() const { return merged.empty() && deleted.empty(); }
};

// Collapses duplicates (same kind, same normalized text), then evicts the
// oldest observations, then folds failure patterns together, until the
// rolling section fits the cap. Decisions and constraints are only ever
// merged, never dropped.
std::pair<MemoryDocument, CompressionReport> compress_rolling(MemoryDocument doc, const CompressionPolicy& policy);

enum class Proposer { retro_agent, operator_ };
enum class PromotionStatus { pending, approved, rejected };
std::string_view to_string(Proposer p);
std::string_view to_string(PromotionStatus s);

struct PromotionRequest {
  std::string entry_id;
  std::string proposed_text;
  Proposer proposer = Proposer::retro_agent;
  PromotionStatus status = PromotionStatus::pending;
  std::optional<std::string> decided_by;
};

PromotionRequest propose_promotion(const MemoryDocument& doc, std::string_view entry_id, Proposer proposer);
// pending -> approved | rejected; anything else is already_resolved.
PromotionRequest decide_promotion(PromotionRequest request, bool approve, std::string principal);
// Moves an approved entry rolling -> permanent verbatim. A rejected request
// returns the document unchanged; a pending one is not_approved.
MemoryDocument apply_promotion(MemoryDocument doc, const PromotionRequest& request);

// Markdown form: `# PERMANENT`, then `# ROLLING`; each entry is a `## <id>`
// heading, a fenced metadata block, then the body.
std::string serialize_memory(const MemoryDocument& doc);
std::string serialize_permanent(const MemoryDocument& doc);
MemoryDocument parse_memory(std::string_view text);

// Rule-based excerpt selection for job payloads: every permanent decision or
// constraint, plus rolling failure patterns that mention the module.
std::vector<MemoryEntry> select_excerpts(const MemoryDocument& doc, std::string_view module_name);

// ---- specialization registry ---------------------------------------------

struct TriggerTerm {
  std::string term;
  double weight = 1.0;
  bool operator==(const TriggerTerm&) const = default;
};

struct SpecializationRecord {
  std::string domain;
  std::vector<TriggerTerm> trigger_terms;
  std::vector<contract::InvariantClause> injected_clauses;
  std::vector<std::string> review_checklist_items;
  double min_confidence = 0.0;
  bool operator==(const SpecializationRecord&) const = default;
};

nlohmann::json to_json(const SpecializationRecord& r);
SpecializationRecord specialization_from_json(const nlohmann::json& j);
std::string specialization_problem(const SpecializationRecord& r);

struct ScoredSpecialization {
  SpecializationRecord record;
  double confidence = 0.0;
};

// confidence = min(1, sum of weights of terms present / sum of all weights),
// sorted by descending confidence then domain.
std::vector<ScoredSpecialization> match_specializations(const RawIssue& issue,
                                                        const std::vector<SpecializationRecord>& registry);

// File layout: `<domain>.spec.json` per record.
std::vector<SpecializationRecord> load_registry(const std::filesystem::path& dir);
void save_specialization(const std::filesystem::path& dir, const SpecializationRecord& record);

}  // namespace harness::memory
