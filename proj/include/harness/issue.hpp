#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace harness {

struct RawIssue {
  std::string id;
  std::string title;
  std::string body;
  std::vector<std::string> labels;
  std::string requester;
  bool operator==(const RawIssue&) const = default;
};

nlohmann::json to_json(const RawIssue& issue);
// Throws parse_error on wrong shapes; does not check invariants.
RawIssue issue_from_json(const nlohmann::json& j);
// Returns the first violated invariant, or empty when the issue is valid.
std::string issue_problem(const RawIssue& issue);

}  // namespace harness
