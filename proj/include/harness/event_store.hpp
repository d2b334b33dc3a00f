#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "harness/pipeline.hpp"

namespace harness::store {

enum class ClockMode { wall, logical };

// Thrown by the crash-simulation hook in place of an append.
class SimulatedCrash : public std::runtime_error {
 public:
  SimulatedCrash() : std::runtime_error("simulated crash") {}
};

// Append-only JSONL log, one file per run under <dir>/events/, plus an index
// of runs in creation order. Sequence numbers are global across runs. A
// torn final line (crash mid-write) is discarded when the store is opened.
class EventStore {
 public:
  explicit EventStore(std::filesystem::path data_dir, ClockMode clock = ClockMode::wall);

  // `validate` sees the numbered event before anything is written; if it
  // throws, nothing is persisted.
  pipeline::RunEvent append(const std::string& run_id, const pipeline::EventDraft& draft,
                            const std::function<void(const pipeline::RunEvent&)>& validate = {});

  std::vector<pipeline::RunEvent> load(const std::string& run_id) const;
  std::vector<std::string> run_ids() const;
  std::vector<pipeline::RunEvent> all_events() const;
  bool has_run(const std::string& run_id) const;
  std::string allocate_run_id();
  std::int64_t last_seq() const;
  const std::filesystem::path& dir() const { return dir_; }

  void write_snapshot(const std::string& run_id, const std::string& bytes) const;
  std::optional<std::string> read_snapshot(const std::string& run_id) const;

  // Crash simulation: after `appends` more successful appends, the next one
  // throws SimulatedCrash. With `torn`, half of its line reaches the disk.
  void fail_after(int appends, bool torn = false);
  void clear_failure();

 private:
  std::filesystem::path event_file(const std::string& run_id) const;
  std::string timestamp_for(std::int64_t seq) const;

  std::filesystem::path dir_;
  ClockMode clock_;
  mutable std::mutex mu_;
  std::int64_t seq_ = 0;
  std::vector<std::string> runs_;
  int reserved_ = 0;
  std::optional<int> fail_after_;
  bool torn_ = false;
};

}  // namespace harness::store
