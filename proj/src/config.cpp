#include "harness/config.hpp"

#include <cstdlib>
#include <sstream>

#include "harness/error.hpp"
#include "harness/util.hpp"

namespace harness {

namespace {

double parse_fraction(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size() || v < 0.0 || v > 1.0) {
    throw Error(ErrorCode::parse_error, "config key '" + key + "' expects a fraction in [0,1]");
  }
  return v;
}

int parse_count(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  int v = -1;
  try {
    v = std::stoi(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size() || v < 0) {
    throw Error(ErrorCode::parse_error, "config key '" + key + "' expects a non-negative integer");
  }
  return v;
}

}  // namespace

Config Config::parse(std::string_view text) {
  Config cfg;
  int line_no = 0;
  for (const auto& raw : util::split_lines(text)) {
    ++line_no;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = util::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::parse_error, "config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = util::trim(line.substr(0, eq));
    const std::string value = util::trim(line.substr(eq + 1));
    if (key == "specialization_confidence") cfg.specialization_confidence = parse_fraction(key, value);
    else if (key == "escalation_confidence") cfg.escalation_confidence = parse_fraction(key, value);
    else if (key == "noise_threshold") cfg.noise_threshold = parse_fraction(key, value);
    else if (key == "noise_reruns") cfg.noise_reruns = parse_count(key, value);
    else if (key == "max_cycles") cfg.max_cycles = parse_count(key, value);
    else if (key == "rolling_cap") cfg.rolling_cap = parse_count(key, value);
    else if (key == "malformed_retries") cfg.malformed_retries = parse_count(key, value);
    else if (key == "recurrence_threshold") cfg.recurrence_threshold = parse_count(key, value);
    else if (key == "suite_timeout_seconds") cfg.suite_timeout_seconds = parse_count(key, value);
    else if (key == "project") cfg.project = value;
    else if (key == "data_dir") cfg.data_dir = value;
    else if (key == "listen") cfg.listen = value;
    else if (key == "operator_token") cfg.operator_token = value;
    else if (key == "backend_url") cfg.backend_url = value;
    else if (key == "backend_model") cfg.backend_model = value;
    else if (key == "clock") {
      if (value != "wall" && value != "logical") {
        throw Error(ErrorCode::parse_error, "config key 'clock' expects wall or logical");
      }
      cfg.clock = value;
    } else {
      throw Error(ErrorCode::parse_error, "config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  if (cfg.noise_reruns < 1) throw Error(ErrorCode::parse_error, "noise_reruns must be >= 1");
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  return parse(util::read_file(path));
}

void Config::apply_env_overrides() {
  if (const char* v = std::getenv("HARNESS_DATA_DIR"); v && *v) data_dir = v;
  if (const char* v = std::getenv("HARNESS_LISTEN"); v && *v) listen = v;
  if (const char* v = std::getenv("HARNESS_TOKEN"); v && *v) operator_token = v;
}

std::string Config::to_text() const {
  std::ostringstream out;
  out << "# harness configuration\n"
      << "specialization_confidence = " << specialization_confidence << "\n"
      << "escalation_confidence = " << escalation_confidence << "\n"
      << "noise_threshold = " << noise_threshold << "\n"
      << "noise_reruns = " << noise_reruns << "\n"
      << "max_cycles = " << max_cycles << "\n"
      << "rolling_cap = " << rolling_cap << "\n"
      << "malformed_retries = " << malformed_retries << "\n"
      << "recurrence_threshold = " << recurrence_threshold << "\n"
      << "suite_timeout_seconds = " << suite_timeout_seconds << "\n"
      << "project = " << project << "\n"
      << "data_dir = " << data_dir.string() << "\n"
      << "listen = " << listen << "\n"
      << "clock = " << clock << "\n";
  if (!operator_token.empty()) out << "operator_token = " << operator_token << "\n";
  if (!backend_url.empty()) out << "backend_url = " << backend_url << "\n";
  out << "backend_model = " << backend_model << "\n";
  return out.str();
}

}  // namespace harness
