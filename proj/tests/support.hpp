#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness/config.hpp"
#include "harness/contract.hpp"
#include "harness/pipeline.hpp"
#include "harness/service.hpp"
#include "harness/util.hpp"

namespace testing_support {

namespace fs = std::filesystem;
using nlohmann::json;

inline fs::path source_dir() { return fs::path(HARNESS_SOURCE_DIR); }
inline fs::path bundled_data() { return source_dir() / "data"; }
inline fs::path scenario_path(const std::string& rel) { return bundled_data() / "scenarios" / rel; }

// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("harness-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

inline harness::Config test_config(const fs::path& data_dir) {
  harness::Config c;
  c.data_dir = data_dir;
  c.clock = "logical";
  return c;
}

// Initialized data directory with the bundled registry and prompts.
inline harness::Config seeded_config(const fs::path& data_dir) {
  harness::Config c = test_config(data_dir);
  harness::service::init_data_dir(c, bundled_data());
  return c;
}

inline std::vector<fs::path> scenario_files(const std::string& subdir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(scenario_path(subdir))) {
    if (e.path().extension() == ".json") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline json load_json(const fs::path& p) { return json::parse(harness::util::read_file(p)); }

// A small contract that validates in every status.
inline harness::contract::Contract sample_contract() {
  using namespace harness::contract;
  Contract c;
  c.module_name = "Orders";
  c.version = "1.0.0";
  c.status = Status::draft_pass1;
  Surface s;
  s.id = "SURF-1";
  s.kind = SurfaceKind::api_endpoint;
  s.method_or_trigger = "POST";
  s.path_or_name = "/orders";
  s.returns = {"order_id"};
  s.side_effects = {{"SURF-1-SE1", "insert one order row", Origin::issue}};
  s.errors = {"422"};
  c.surfaces.push_back(s);
  c.invariants = {{"INV-1", "an order total is never negative", Severity::must, Origin::issue},
                  {"INV-2", "orders are created once per idempotency key", Severity::must, Origin::issue},
                  {"INV-3", "a confirmation email is sent", Severity::should, Origin::pass1_inferred}};
  c.error_taxonomy = {{"ERR-1", "422", "total below zero", Origin::issue}};
  c.auth_rules = {{"AUTH-1", "only the signed-in customer may create orders", Origin::issue}};
  c.business_rules = {{"BR-1", "totals are integer cents", Severity::must, Origin::issue}};
  c.out_of_scope = {{"OOS-1", "refunds", Origin::issue}};
  c.qa_targets = {{"QA-1", "double submit creates one order", Origin::issue}};
  c.regression_risks = {{"RISK-1", "duplicate orders under retries", Origin::issue}};
  c.acceptance_criteria = {{"AC-1", "a retried request returns the first order", {"INV-2"}, Origin::issue}};
  return c;
}

inline std::vector<std::string> sorted_ids(const harness::contract::Contract& c) {
  auto ids = harness::contract::clause_ids(c);
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline json events_json(const std::vector<harness::pipeline::RunEvent>& events) {
  json arr = json::array();
  for (const auto& e : events) arr.push_back(harness::pipeline::to_json(e));
  return arr;
}

}  // namespace testing_support
