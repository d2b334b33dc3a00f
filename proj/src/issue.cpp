#include "harness/issue.hpp"

#include "harness/error.hpp"
#include "harness/util.hpp"

namespace harness {

nlohmann::json to_json(const RawIssue& issue) {
  return {{"id", issue.id},       {"title", issue.title},         {"body", issue.body},
          {"labels", issue.labels}, {"requester", issue.requester}};
}

RawIssue issue_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::parse_error, "issue: expected an object");
  RawIssue issue;
  try {
    issue.id = j.value("id", "");
    issue.title = j.value("title", "");
    issue.body = j.value("body", "");
    issue.labels = j.value("labels", std::vector<std::string>{});
    issue.requester = j.value("requester", "");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("issue: ") + e.what());
  }
  return issue;
}

std::string issue_problem(const RawIssue& issue) {
  if (util::trim(issue.body).empty()) return "body must be non-empty";
  if (issue.id.empty()) return "id must be non-empty";
  return {};
}

}  // namespace harness
