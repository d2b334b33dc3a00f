#include "harness/event_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "harness/error.hpp"
#include "harness/util.hpp"

namespace harness::store {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::int64_t kLogicalEpoch = 1767225600;  // 2026-01-01T00:00:00Z

void append_durably(const fs::path& file, const std::string& bytes) {
  const int fd = ::open(file.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw Error(ErrorCode::io_error, "cannot open " + file.string());
  std::size_t written = 0;
  while (written < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + written, bytes.size() - written);
    if (n < 0) {
      ::close(fd);
      throw Error(ErrorCode::io_error, "write failed on " + file.string());
    }
    written += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
}

// Keeps every complete, parseable line; truncates anything after the last
// good one.
std::vector<json> read_lines_repairing(const fs::path& file, bool repair) {
  std::vector<json> out;
  if (!fs::exists(file)) return out;
  const std::string text = util::read_file(file);
  std::size_t good_end = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) break;
    const std::string line = text.substr(pos, nl - pos);
    if (!line.empty()) {
      try {
        out.push_back(json::parse(line));
      } catch (const json::parse_error&) {
        break;
      }
    }
    pos = nl + 1;
    good_end = pos;
  }
  if (repair && good_end < text.size()) fs::resize_file(file, good_end);
  return out;
}

}  // namespace

EventStore::EventStore(fs::path data_dir, ClockMode clock) : dir_(std::move(data_dir)), clock_(clock) {
  fs::create_directories(dir_ / "events");
  fs::create_directories(dir_ / "runs");
  for (const auto& rec : read_lines_repairing(dir_ / "events" / "index.jsonl", true)) {
    runs_.push_back(rec.at("run_id").get<std::string>());
  }
  for (const auto& entry : fs::directory_iterator(dir_ / "events")) {
    if (entry.path().filename() == "index.jsonl" || entry.path().extension() != ".jsonl") continue;
    const auto lines = read_lines_repairing(entry.path(), true);
    for (const auto& l : lines) seq_ = std::max(seq_, l.at("seq").get<std::int64_t>());
    const std::string run = entry.path().stem().string();
    if (!lines.empty() && std::find(runs_.begin(), runs_.end(), run) == runs_.end()) {
      // Index line lost in a crash; the event file is authoritative.
      append_durably(dir_ / "events" / "index.jsonl", json{{"run_id", run}}.dump() + "\n");
      runs_.push_back(run);
    }
  }
}

fs::path EventStore::event_file(const std::string& run_id) const {
  if (run_id.empty() || run_id.find('/') != std::string::npos || run_id.find("..") != std::string::npos) {
    throw Error(ErrorCode::invalid_argument, "bad run id '" + run_id + "'");
  }
  return dir_ / "events" / (run_id + ".jsonl");
}

std::string EventStore::timestamp_for(std::int64_t seq) const {
  return util::iso8601_utc(clock_ == ClockMode::logical ? kLogicalEpoch + seq : util::now_unix_seconds());
}

pipeline::RunEvent EventStore::append(const std::string& run_id, const pipeline::EventDraft& draft,
                                      const std::function<void(const pipeline::RunEvent&)>& validate) {
  std::lock_guard lock(mu_);
  pipeline::RunEvent e;
  e.seq = seq_ + 1;
  e.run_id = run_id;
  e.timestamp = timestamp_for(e.seq);
  e.kind = draft.kind;
  e.payload = draft.payload;
  if (validate) validate(e);

  const std::string line = pipeline::to_json(e).dump() + "\n";
  if (fail_after_) {
    if (*fail_after_ == 0) {
      fail_after_.reset();
      if (torn_) append_durably(event_file(run_id), line.substr(0, line.size() / 2));
      throw SimulatedCrash();
    }
    --*fail_after_;
  }
  const bool fresh = std::find(runs_.begin(), runs_.end(), run_id) == runs_.end();
  append_durably(event_file(run_id), line);
  if (fresh) {
    append_durably(dir_ / "events" / "index.jsonl", json{{"run_id", run_id}}.dump() + "\n");
    runs_.push_back(run_id);
    if (reserved_ > 0) --reserved_;
  }
  seq_ = e.seq;
  return e;
}

std::vector<pipeline::RunEvent> EventStore::load(const std::string& run_id) const {
  std::lock_guard lock(mu_);
  std::vector<pipeline::RunEvent> out;
  for (const auto& j : read_lines_repairing(event_file(run_id), false)) out.push_back(pipeline::event_from_json(j));
  return out;
}

std::vector<std::string> EventStore::run_ids() const {
  std::lock_guard lock(mu_);
  return runs_;
}

bool EventStore::has_run(const std::string& run_id) const {
  std::lock_guard lock(mu_);
  return std::find(runs_.begin(), runs_.end(), run_id) != runs_.end();
}

std::vector<pipeline::RunEvent> EventStore::all_events() const {
  std::vector<pipeline::RunEvent> out;
  for (const auto& id : run_ids()) {
    auto events = load(id);
    out.insert(out.end(), events.begin(), events.end());
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.seq < b.seq; });
  return out;
}

std::string EventStore::allocate_run_id() {
  std::lock_guard lock(mu_);
  ++reserved_;
  char buf[32];
  std::snprintf(buf, sizeof buf, "run-%04zu", runs_.size() + static_cast<std::size_t>(reserved_));
  return buf;
}

std::int64_t EventStore::last_seq() const {
  std::lock_guard lock(mu_);
  return seq_;
}

void EventStore::write_snapshot(const std::string& run_id, const std::string& bytes) const {
  util::write_file_atomic(dir_ / "runs" / (run_id + ".state.json"), bytes);
}

std::optional<std::string> EventStore::read_snapshot(const std::string& run_id) const {
  const fs::path p = dir_ / "runs" / (run_id + ".state.json");
  if (!fs::exists(p)) return std::nullopt;
  return util::read_file(p);
}

void EventStore::fail_after(int appends, bool torn) {
  std::lock_guard lock(mu_);
  fail_after_ = appends;
  torn_ = torn;
}

void EventStore::clear_failure() {
  std::lock_guard lock(mu_);
  fail_after_.reset();
}

}  // namespace harness::store
