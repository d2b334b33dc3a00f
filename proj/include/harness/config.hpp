#pragma once

#include <filesystem>
#include <string>

namespace harness {

// Deployment thresholds. Loaded from a `key = value` file; `#` starts a
// comment. HARNESS_DATA_DIR, HARNESS_LISTEN and HARNESS_TOKEN override the
// corresponding keys.
struct Config {
  double specialization_confidence = 0.7;
  double escalation_confidence = 0.6;
  double noise_threshold = 0.2;
  int noise_reruns = 5;
  int max_cycles = 5;
  int rolling_cap = 64;
  int malformed_retries = 2;
  int recurrence_threshold = 2;
  int suite_timeout_seconds = 30;
  std::string project = "default";
  std::filesystem::path data_dir = "harness-data";
  std::string listen = "127.0.0.1:8787";
  std::string operator_token;
  // "logical" timestamps are derived from the global event sequence so
  // replays are byte-identical; "wall" uses the system clock.
  std::string clock = "wall";
  // Agent backend for runs not bound to a scripted scenario. Empty URL means
  // such runs halt with backend-unreachable.
  std::string backend_url;
  std::string backend_model = "default";

  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);
  void apply_env_overrides();
  std::string to_text() const;
};

}  // namespace harness
