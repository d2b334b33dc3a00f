#include <gtest/gtest.h>

#include "harness/contract.hpp"
#include "harness/error.hpp"
#include "support.hpp"

using namespace harness::contract;
using harness::Error;
using harness::ErrorCode;
using testing_support::sample_contract;

namespace {

bool has_violation(const ValidationReport& r, const std::string& field, const std::string& rule) {
  return std::any_of(r.begin(), r.end(), [&](const Violation& v) { return v.field == field && v.rule == rule; });
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an exception";
  return ErrorCode::io_error;
}

}  // namespace

TEST(Contract, SampleIsValidInEveryStatus) {
  for (Status s : {Status::draft_pass1, Status::refined_pass2, Status::product_approved, Status::eng_approved,
                   Status::final, Status::superseded}) {
    Contract c = sample_contract();
    c.status = s;
    EXPECT_TRUE(validate_contract(c).empty()) << to_string(s);
  }
}

TEST(Contract, SerializationRoundTripsExactly) {
  const Contract c = sample_contract();
  const std::string text = serialize_contract(c);
  EXPECT_EQ(parse_contract(text), c);
  EXPECT_EQ(serialize_contract(parse_contract(text)), text);
  EXPECT_EQ(text.back(), '\n');
}

TEST(Contract, DuplicateIdsAcrossSectionsAreReported) {
  Contract c = sample_contract();
  c.business_rules[0].id = "INV-1";
  EXPECT_TRUE(has_violation(validate_contract(c), "business_rules[0].id", "unique-id"));
}

TEST(Contract, DanglingAcceptanceLinkIsReported) {
  Contract c = sample_contract();
  c.acceptance_criteria[0].linked_invariants.push_back("INV-99");
  EXPECT_TRUE(has_violation(validate_contract(c), "acceptance_criteria[0].linked_invariants[1]", "dangling-reference"));
}

TEST(Contract, FinalNeedsSurfaceInvariantAndCriterion) {
  Contract c = sample_contract();
  c.status = Status::final;
  c.surfaces.clear();
  c.acceptance_criteria.clear();
  c.invariants.clear();
  const auto r = validate_contract(c);
  EXPECT_TRUE(has_violation(r, "surfaces", "final-requires-surface"));
  EXPECT_TRUE(has_violation(r, "invariants", "final-requires-invariant"));
  EXPECT_TRUE(has_violation(r, "acceptance_criteria", "final-requires-acceptance-criterion"));

  c.status = Status::draft_pass1;
  EXPECT_TRUE(validate_contract(c).empty());
}

TEST(Contract, KnownGapsOnlyAfterFinal) {
  Contract c = sample_contract();
  c.known_gaps.push_back({"GAP-1", "deposits are not modelled", Origin::calibration});
  EXPECT_TRUE(has_violation(validate_contract(c), "known_gaps", "known-gaps-after-final"));
  c.status = Status::final;
  EXPECT_TRUE(validate_contract(c).empty());
  c.status = Status::superseded;
  EXPECT_TRUE(validate_contract(c).empty());
}

TEST(Contract, ModuleNameAndVersionShapes) {
  Contract c = sample_contract();
  c.module_name = "9 lives";
  c.version = "1.0";
  const auto r = validate_contract(c);
  EXPECT_TRUE(has_violation(r, "module_name", "identifier"));
  EXPECT_TRUE(has_violation(r, "version", "semver"));

  EXPECT_TRUE(is_semver("0.1.0-rc.1+build.7"));
  EXPECT_FALSE(is_semver("01.1.0"));
  EXPECT_FALSE(is_semver("1.0.0-"));
}

TEST(Contract, ApiEndpointNeedsMethodAndPath) {
  Contract c = sample_contract();
  c.surfaces[0].path_or_name.clear();
  EXPECT_TRUE(has_violation(validate_contract(c), "surfaces[0].path_or_name", "api-endpoint-non-empty"));
  c.surfaces[0].kind = SurfaceKind::job;
  EXPECT_TRUE(validate_contract(c).empty());
}

TEST(Contract, ParseErrorsNameLineOrField) {
  try {
    parse_contract("{\n  \"module_name\": \"X\",\n  oops\n}");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::parse_error);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  nlohmann::json j = to_json(sample_contract());
  j["invariants"][0]["severity"] = "sometimes";
  try {
    from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("invariants"), std::string::npos) << e.what();
  }
  j = to_json(sample_contract());
  j["color"] = "blue";
  EXPECT_EQ(code_of([&] { from_json(j); }), ErrorCode::parse_error);
  EXPECT_EQ(code_of([] { parse_contract("   "); }), ErrorCode::parse_error);
}

TEST(Contract, ClauseEnumerationCoversEveryList) {
  const Contract c = sample_contract();
  const std::vector<std::string> expected = {"AC-1",  "AUTH-1",     "BR-1", "ERR-1",  "INV-1", "INV-2",
                                             "INV-3", "OOS-1",      "QA-1", "RISK-1", "SURF-1", "SURF-1-SE1"};
  EXPECT_EQ(testing_support::sorted_ids(c), expected);
  ASSERT_TRUE(find_clause(c, "SURF-1-SE1"));
  EXPECT_EQ(find_clause(c, "SURF-1-SE1")->section, "surfaces.side_effects");
  EXPECT_FALSE(find_clause(c, "INV-9"));
}

TEST(Contract, DiffPartitionsTheUnionOfIds) {
  const Contract before = sample_contract();
  Contract after = before;
  after.invariants.erase(after.invariants.begin() + 2);         // INV-3 removed
  after.invariants[0].text = "an order total is at least zero";  // INV-1 rewritten
  after.business_rules.push_back({"BR-2", "tax is added once", Severity::must, Origin::calibration});
  const ClauseDiff d = diff_contracts(before, after);
  EXPECT_EQ(d.removed, std::vector<ClauseId>{"INV-3"});
  EXPECT_EQ(d.rewritten, std::vector<ClauseId>{"INV-1"});
  EXPECT_EQ(d.added, std::vector<ClauseId>{"BR-2"});
  EXPECT_EQ(d.unchanged.size() + d.removed.size() + d.rewritten.size(), clause_ids(before).size());
  EXPECT_EQ(d.unchanged.size() + d.added.size() + d.rewritten.size(), clause_ids(after).size());
}

TEST(Contract, FreshIdsNeverReuseLineageIds) {
  Contract old = sample_contract();
  Contract now = old;
  now.invariants.pop_back();  // INV-3 gone from the latest revision
  EXPECT_EQ(fresh_clause_id({old, now}, "INV"), "INV-4");
  EXPECT_EQ(fresh_clause_id({now}, "INV"), "INV-3");
  EXPECT_EQ(fresh_clause_id({now}, "GAP"), "GAP-1");
}

TEST(Contract, FileNameCarriesModuleAndVersion) {
  EXPECT_EQ(contract_file_name(sample_contract()), "Orders-v1.0.0.contract.json");
}
