#include "harness/util.hpp"

#include <array>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "harness/error.hpp"

namespace harness {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::parse_error: return "parse-error";
    case ErrorCode::io_error: return "io-error";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::empty_issue: return "empty-issue";
    case ErrorCode::invalid_issue: return "invalid-issue";
    case ErrorCode::agent_response_invalid: return "agent-response-invalid";
    case ErrorCode::monotonicity_violation: return "monotonicity-violation";
    case ErrorCode::duplicate_id: return "duplicate-id";
    case ErrorCode::not_approved: return "not-approved";
    case ErrorCode::entry_missing: return "entry-missing";
    case ErrorCode::state_mismatch: return "state-mismatch";
    case ErrorCode::scenario_incomplete: return "scenario-incomplete";
    case ErrorCode::backend_unreachable: return "backend-unreachable";
    case ErrorCode::malformed_output: return "malformed-output";
    case ErrorCode::malformed_after_retries: return "malformed-after-retries";
    case ErrorCode::role_violation: return "role-violation";
    case ErrorCode::illegal_transition: return "illegal-transition";
    case ErrorCode::timeout: return "timeout";
    case ErrorCode::sandbox_violation: return "sandbox-violation";
    case ErrorCode::unknown_test: return "unknown-test";
    case ErrorCode::already_resolved: return "already-resolved";
    case ErrorCode::shape_mismatch: return "shape-mismatch";
    case ErrorCode::not_found: return "not-found";
    case ErrorCode::unauthorized: return "unauthorized";
  }
  return "unknown";
}

}  // namespace harness

namespace harness::util {

std::string normalize_words(std::string_view text) {
  std::string out;
  out.reserve(text.size() + 2);
  out.push_back(' ');
  bool last_space = true;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      out.push_back(static_cast<char>(std::tolower(c)));
      last_space = false;
    } else if (!last_space) {
      out.push_back(' ');
      last_space = true;
    }
  }
  if (!last_space) out.push_back(' ');
  return out;
}

bool contains_phrase(std::string_view text, std::string_view phrase) {
  const std::string needle = normalize_words(phrase);
  if (needle.size() <= 1) return false;
  return normalize_words(text).find(needle) != std::string::npos;
}

std::string to_lower(std::string_view text) {
  std::string out(text);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    if (end == std::string_view::npos) {
      if (start < text.size()) lines.emplace_back(text.substr(start));
      break;
    }
    lines.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

bool starts_with(std::string_view text, std::string_view prefix) {
  return text.substr(0, prefix.size()) == prefix;
}

std::string fnv1a_hex(std::string_view data) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  std::array<char, 17> buf{};
  std::snprintf(buf.data(), buf.size(), "%016llx", static_cast<unsigned long long>(hash));
  return std::string(buf.data());
}

std::string iso8601_utc(std::int64_t unix_seconds) {
  const std::time_t t = static_cast<std::time_t>(unix_seconds);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::array<char, 32> buf{};
  std::strftime(buf.data(), buf.size(), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return std::string(buf.data());
}

std::int64_t parse_iso8601_utc(std::string_view text) {
  std::tm tm{};
  const std::string s(text);
  std::istringstream in(s);
  in >> std::get_time(&tm, "%Y-%m-%dT%H:%M:%S");
  if (in.fail()) {
    throw Error(ErrorCode::parse_error, "bad ISO-8601 timestamp '" + s + "'");
  }
  return static_cast<std::int64_t>(timegm(&tm));
}

std::int64_t now_unix_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io_error, "cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::io_error, "short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

std::string safe_file_name(std::string_view id) {
  std::string out;
  for (char c : id) {
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

}  // namespace harness::util
