#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace harness::util {

// Lowercases and replaces every non-alphanumeric byte with a single space,
// padded with one space on each side so phrase lookups can match on word
// boundaries with a plain substring search.
std::string normalize_words(std::string_view text);

// True when `phrase` occurs in `text` on word boundaries (case-insensitive).
bool contains_phrase(std::string_view text, std::string_view phrase);

std::string to_lower(std::string_view text);
std::string trim(std::string_view text);
std::vector<std::string> split_lines(std::string_view text);
bool starts_with(std::string_view text, std::string_view prefix);
// Maps an identifier such as "run-0001/j3" to a single safe path component.
std::string safe_file_name(std::string_view id);

// 64-bit FNV-1a, rendered as 16 hex digits. Stable across platforms.
std::string fnv1a_hex(std::string_view data);

// UTC ISO-8601 with second precision, e.g. 2026-01-01T00:00:00Z.
std::string iso8601_utc(std::int64_t unix_seconds);
std::int64_t parse_iso8601_utc(std::string_view text);
std::int64_t now_unix_seconds();

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames it over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace harness::util
