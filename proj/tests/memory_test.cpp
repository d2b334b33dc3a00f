#include <gtest/gtest.h>

#include "harness/error.hpp"
#include "harness/memory.hpp"
#include "support.hpp"

using namespace harness;
using namespace harness::memory;

namespace {

MemoryEntry entry(std::string id, EntryKind kind, std::string text, std::string at = "2026-01-01T00:00:00Z") {
  return {std::move(id), std::move(at), kind, std::move(text), std::nullopt};
}

MemoryDocument with_rolling(std::vector<MemoryEntry> entries) {
  MemoryDocument doc;
  for (auto& e : entries) doc = append_rolling(std::move(doc), std::move(e));
  return doc;
}

std::vector<std::string> ids(const std::vector<MemoryEntry>& entries) {
  std::vector<std::string> out;
  for (const auto& e : entries) out.push_back(e.id);
  return out;
}

}  // namespace

TEST(Memory, AppendRejectsDuplicatesAndEmptyIds) {
  MemoryDocument doc = with_rolling({entry("a", EntryKind::observation, "x")});
  EXPECT_EQ(doc.revision, 1);
  EXPECT_THROW(append_rolling(doc, entry("a", EntryKind::decision, "y")), Error);
  EXPECT_THROW(append_rolling(doc, entry("", EntryKind::decision, "y")), Error);
}

TEST(Memory, MarkdownRoundTrip) {
  MemoryDocument doc = with_rolling({entry("d1", EntryKind::decision, "use integer cents\nacross services"),
                                     entry("o1", EntryKind::observation, "CI runner is slow on Mondays",
                                           "2026-02-03T04:05:06Z")});
  doc.rolling[1].source_run = "run-0003";
  auto req = decide_promotion(propose_promotion(doc, "d1", Proposer::operator_), true, "lead");
  doc = apply_promotion(doc, req);

  const std::string text = serialize_memory(doc);
  EXPECT_NE(text.find("# PERMANENT"), std::string::npos);
  EXPECT_LT(text.find("# PERMANENT"), text.find("# ROLLING"));
  const MemoryDocument back = parse_memory(text);
  EXPECT_EQ(back.permanent, doc.permanent);
  EXPECT_EQ(back.rolling, doc.rolling);
  EXPECT_EQ(serialize_memory(back), text);
}

TEST(Memory, ParseRequiresBothSections) {
  EXPECT_THROW(parse_memory("# ROLLING\n"), Error);
  EXPECT_NO_THROW(parse_memory("# PERMANENT\n\n# ROLLING\n"));
}

TEST(Memory, CompressionMergesDuplicatesFirst) {
  MemoryDocument doc = with_rolling({entry("f1", EntryKind::failure_pattern, "Flaky clock in CI"),
                                     entry("o1", EntryKind::observation, "unrelated"),
                                     entry("f2", EntryKind::failure_pattern, "flaky   clock in ci!")});
  const auto [out, report] = compress_rolling(doc, {10});
  EXPECT_EQ(ids(out.rolling), (std::vector<std::string>{"f1", "o1"}));
  ASSERT_EQ(report.merged.size(), 1u);
  EXPECT_EQ(report.merged[0], (MergeRecord{"f1", "f2"}));
  EXPECT_TRUE(report.deleted.empty());
}

TEST(Memory, CompressionEvictsOldestObservationsBeforeTouchingDecisions) {
  MemoryDocument doc = with_rolling({entry("d1", EntryKind::decision, "d", "2026-01-01T00:00:00Z"),
                                     entry("o-new", EntryKind::observation, "n", "2026-03-01T00:00:00Z"),
                                     entry("o-old", EntryKind::observation, "o", "2026-01-02T00:00:00Z"),
                                     entry("c1", EntryKind::constraint, "c", "2026-01-03T00:00:00Z")});
  const auto [out, report] = compress_rolling(doc, {2});
  EXPECT_EQ(report.deleted, (std::vector<std::string>{"o-old", "o-new"}));
  EXPECT_EQ(ids(out.rolling), (std::vector<std::string>{"d1", "c1"}));
}

TEST(Memory, ProtectedEntriesAreMergedNeverDropped) {
  MemoryDocument doc = with_rolling({entry("d1", EntryKind::decision, "alpha", "2026-01-01T00:00:00Z"),
                                     entry("d2", EntryKind::decision, "beta", "2026-01-02T00:00:00Z"),
                                     entry("c1", EntryKind::constraint, "gamma", "2026-01-03T00:00:00Z")});
  const auto [out, report] = compress_rolling(doc, {1});
  ASSERT_EQ(out.rolling.size(), 1u);
  EXPECT_TRUE(report.deleted.empty());
  for (const char* word : {"alpha", "beta", "gamma"}) {
    EXPECT_NE(out.rolling[0].text.find(word), std::string::npos) << word;
  }
}

TEST(Memory, CompressionWithinCapIsANoOp) {
  MemoryDocument doc = with_rolling({entry("o1", EntryKind::observation, "x")});
  const auto [out, report] = compress_rolling(doc, {4});
  EXPECT_TRUE(report.empty());
  EXPECT_EQ(out.revision, doc.revision);
}

TEST(Promotion, LifecycleNeedsAnApprovingPrincipal) {
  MemoryDocument doc = with_rolling({entry("c1", EntryKind::constraint, "never log card numbers")});
  PromotionRequest req = propose_promotion(doc, "c1", Proposer::retro_agent);
  EXPECT_EQ(req.status, PromotionStatus::pending);
  EXPECT_EQ(req.proposed_text, "never log card numbers");

  try {
    apply_promotion(doc, req);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::not_approved);
  }
  EXPECT_THROW(decide_promotion(req, true, ""), Error);

  const PromotionRequest approved = decide_promotion(req, true, "lead@example.com");
  EXPECT_EQ(approved.decided_by, "lead@example.com");
  try {
    decide_promotion(approved, false, "someone");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::already_resolved);
  }

  const MemoryDocument after = apply_promotion(doc, approved);
  ASSERT_EQ(after.permanent.size(), 1u);
  EXPECT_EQ(after.permanent[0], doc.rolling[0]);
  EXPECT_TRUE(after.rolling.empty());
}

TEST(Promotion, RejectedRequestLeavesDocumentUnchanged) {
  MemoryDocument doc = with_rolling({entry("o1", EntryKind::observation, "x")});
  const auto rejected = decide_promotion(propose_promotion(doc, "o1", Proposer::operator_), false, "lead");
  const MemoryDocument after = apply_promotion(doc, rejected);
  EXPECT_EQ(serialize_memory(after), serialize_memory(doc));
  EXPECT_THROW(propose_promotion(doc, "missing", Proposer::operator_), Error);
}

TEST(Promotion, AutomatedOperationsNeverTouchPermanentBytes) {
  MemoryDocument doc = with_rolling({entry("d0", EntryKind::decision, "keep APIs versioned")});
  doc = apply_promotion(doc, decide_promotion(propose_promotion(doc, "d0", Proposer::operator_), true, "lead"));
  const std::string permanent = serialize_permanent(doc);
  std::mt19937 rng(7);
  for (int i = 0; i < 200; ++i) {
    const auto kind = static_cast<EntryKind>(rng() % 4);
    doc = append_rolling(doc, entry("e" + std::to_string(i), kind, "text " + std::to_string(rng() % 20)));
    if (i % 7 == 0) doc = compress_rolling(doc, {static_cast<std::size_t>(1 + rng() % 8)}).first;
    if (i % 11 == 0) doc = parse_memory(serialize_memory(doc));
    ASSERT_EQ(serialize_permanent(doc), permanent) << "after op " << i;
  }
}

TEST(Excerpts, PermanentRulesPlusModuleFailurePatterns) {
  MemoryDocument doc = with_rolling({entry("d1", EntryKind::decision, "cents everywhere"),
                                     entry("o1", EntryKind::observation, "Payments flaky"),
                                     entry("f1", EntryKind::failure_pattern, "NGPayments confirm wrote early"),
                                     entry("f2", EntryKind::failure_pattern, "Scheduling DST bug")});
  doc = apply_promotion(doc, decide_promotion(propose_promotion(doc, "d1", Proposer::operator_), true, "lead"));
  EXPECT_EQ(ids(select_excerpts(doc, "ngpayments")), (std::vector<std::string>{"d1", "f1"}));
  EXPECT_EQ(ids(select_excerpts(doc, "")), (std::vector<std::string>{"d1"}));
}

TEST(Registry, LoadsBundledRecordsAndRoundTrips) {
  testing_support::TempDir dir("registry");
  const auto registry = load_registry(testing_support::bundled_data() / "specializations");
  ASSERT_GE(registry.size(), 3u);
  for (const auto& r : registry) {
    EXPECT_TRUE(specialization_problem(r).empty()) << r.domain;
    save_specialization(dir.path(), r);
  }
  EXPECT_EQ(load_registry(dir.path()), registry);
}

TEST(Registry, RejectsMalformedRecords) {
  nlohmann::json j = to_json(load_registry(testing_support::bundled_data() / "specializations").front());
  j["trigger_terms"] = nlohmann::json::array();
  EXPECT_THROW(specialization_from_json(j), Error);
  j.erase("trigger_terms");
  EXPECT_THROW(specialization_from_json(j), Error);
}
