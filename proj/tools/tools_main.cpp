// Command-line entry point: `harness <verb> ...`. Every verb goes through
// service::Service, the same layer the HTTP API uses.

#include <CLI11.hpp>

#include <algorithm>
#include <csignal>
#include <filesystem>
#include <iostream>

#include "harness/error.hpp"
#include "harness/http_api.hpp"
#include "harness/service.hpp"
#include "harness/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

harness::http::Api* g_api = nullptr;

void on_signal(int) {
  if (g_api) g_api->stop();
}

int exit_code_for(harness::engine::Outcome o) {
  switch (o) {
    case harness::engine::Outcome::done: return 0;
    case harness::engine::Outcome::awaiting_operator: return 3;
    case harness::engine::Outcome::halted: return 4;
  }
  return 1;
}

void print_outcome(const std::string& run_id, const harness::engine::DriveResult& r) {
  std::cout << run_id << " " << harness::engine::to_string(r.outcome) << " step=" << r.state.step_key()
            << " cycles=" << r.state.implementation_cycles;
  if (!r.detail.empty() && r.outcome != harness::engine::Outcome::done) std::cout << " (" << r.detail << ")";
  std::cout << "\n";
}

std::vector<fs::path> scenario_files(const fs::path& target) {
  std::vector<fs::path> files;
  if (fs::is_directory(target)) {
    for (const auto& e : fs::directory_iterator(target)) {
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(target);
  }
  if (files.empty()) throw harness::Error(harness::ErrorCode::not_found, "no scenarios in " + target.string());
  return files;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contract-driven orchestration harness for coding agents"};
  app.require_subcommand(1);

  std::string config_file;
  std::string data_dir;
  app.add_option("-c,--config", config_file, "key = value configuration file");
  app.add_option("-d,--data-dir", data_dir, "data directory (overrides the config file)");

  auto* init = app.add_subcommand("init", "create the data directory and seed the registry");

  auto* issue = app.add_subcommand("issue", "issue operations");
  issue->require_subcommand(1);
  auto* submit = issue->add_subcommand("submit", "submit an issue and drive its run");
  std::string issue_file;
  bool no_drive = false;
  submit->add_option("file", issue_file, "JSON request: {issue, scenario?, ground_truth_labels?, interface?}")
      ->required()
      ->check(CLI::ExistingFile);
  submit->add_flag("--no-drive", no_drive, "only record the issue");

  auto* run = app.add_subcommand("run", "run one scripted scenario");
  std::string scenario_file;
  run->add_option("--scenario", scenario_file, "scenario file")->required()->check(CLI::ExistingFile);

  auto* status = app.add_subcommand("status", "show a run");
  std::string status_run;
  bool status_events = false;
  status->add_option("run", status_run, "run id")->required();
  status->add_flag("--events", status_events, "print the full run detail as JSON");

  auto* drive = app.add_subcommand("drive", "resume a run");
  std::string drive_run;
  drive->add_option("run", drive_run, "run id")->required();

  app.add_subcommand("tickets", "list pending operator tickets");

  auto* resolve = app.add_subcommand("resolve", "resolve an operator ticket");
  std::string ticket_id, decision, principal, note;
  resolve->add_option("ticket", ticket_id, "ticket id")->required();
  resolve->add_option("--decision", decision, "class, approve/reject or continue/abandon")->required();
  resolve->add_option("--principal", principal, "who decides")->required();
  resolve->add_option("--note", note, "free text kept with the decision");

  auto* report = app.add_subcommand("report", "file a post-merge report against a merged run");
  std::string report_run, report_text, report_section, report_by = "operator";
  std::vector<std::string> report_clauses;
  report->add_option("run", report_run, "run id")->required();
  report->add_option("--text", report_text, "what went wrong")->required();
  report->add_option("--section", report_section, "contract section concerned");
  report->add_option("--clause", report_clauses, "clause ids the report concerns");
  report->add_option("--by", report_by, "reporter");

  auto* metrics = app.add_subcommand("metrics", "print the metrics report");
  std::string window, format = "table";
  metrics->add_option("--window", window, "FROM..TO in ISO-8601, either side optional");
  metrics->add_option("--format", format, "json or table")->check(CLI::IsMember({"json", "table"}));

  auto* replay = app.add_subcommand("replay", "run a scenario file or every scenario in a directory");
  std::string replay_target;
  std::string replay_format = "table";
  replay->add_option("target", replay_target, "scenario file or directory")->required()->check(CLI::ExistingPath);
  replay->add_option("--format", replay_format, "metrics format")->check(CLI::IsMember({"json", "table"}));

  auto* serve = app.add_subcommand("serve", "serve the HTTP API");
  std::string listen;
  serve->add_option("--listen", listen, "host:port");

  CLI11_PARSE(app, argc, argv);

  try {
    harness::Config config = config_file.empty() ? harness::Config{} : harness::Config::load(config_file);
    if (config_file.empty()) {
      const fs::path base = data_dir.empty() ? config.data_dir : fs::path(data_dir);
      if (fs::exists(base / "harness.conf")) config = harness::Config::load(base / "harness.conf");
    }
    config.apply_env_overrides();
    if (!data_dir.empty()) config.data_dir = data_dir;

    if (*init) {
      harness::service::init_data_dir(config);
      std::cout << "initialized " << config.data_dir.string() << "\n";
      return 0;
    }

    harness::service::Service svc(config);

    if (*submit) {
      const json request = json::parse(harness::util::read_file(issue_file));
      const std::string run_id = svc.submit_issue(request);
      if (no_drive) {
        std::cout << run_id << "\n";
        return 0;
      }
      const auto r = svc.drive(run_id);
      print_outcome(run_id, r);
      return exit_code_for(r.outcome);
    }
    if (*run) {
      const auto r = svc.run_scenario(fs::path(scenario_file));
      print_outcome(r.run_id, r.result);
      return exit_code_for(r.result.outcome);
    }
    if (*status) {
      const json detail = svc.run_detail(status_run);
      if (status_events) {
        std::cout << detail.dump(2) << "\n";
        return 0;
      }
      std::cout << detail["run_id"].get<std::string>() << "  " << detail["title"].get<std::string>() << "\n"
                << "  phase " << detail["phase"].get<std::string>() << ", step " << detail["step"].get<std::string>()
                << ", " << detail["implementation_cycles"].get<int>() << " implementation cycle(s)\n";
      if (detail.contains("pending_ticket")) std::cout << "  waiting on " << detail["pending_ticket"].get<std::string>() << "\n";
      if (detail.contains("halt_reason")) std::cout << "  halted: " << detail["halt_reason"].get<std::string>() << "\n";
      for (const auto& [gate, g] : detail["gates"].items()) {
        std::cout << "  gate " << gate << ": " << g["verdict"].get<std::string>() << "\n";
      }
      std::cout << "  " << detail["events"].size() << " events\n";
      return 0;
    }
    if (*drive) {
      const auto r = svc.drive(drive_run);
      print_outcome(drive_run, r);
      return exit_code_for(r.outcome);
    }
    if (app.got_subcommand("tickets")) {
      const json tickets = svc.pending_tickets();
      if (tickets.empty()) std::cout << "no pending tickets\n";
      for (const auto& t : tickets) {
        std::cout << t["ticket_id"].get<std::string>() << "  " << t["kind"].get<std::string>() << "  "
                  << t["payload"].dump() << "\n";
      }
      return 0;
    }
    if (*resolve) {
      json body{{"decision", decision}, {"principal", principal}};
      if (!note.empty()) body["note"] = note;
      std::cout << svc.resolve_ticket(ticket_id, body).dump(2) << "\n";
      return 0;
    }
    if (*report) {
      json body{{"text", report_text}, {"reporter", report_by}, {"clause_ids", report_clauses}};
      if (!report_section.empty()) body["section"] = report_section;
      std::cout << svc.report_post_merge(report_run, body).dump(2) << "\n";
      return 0;
    }
    if (*metrics) {
      const auto m = svc.metrics(harness::calibration::TimeWindow::parse(window));
      std::cout << (format == "json" ? harness::calibration::to_json(m).dump(2) + "\n" : harness::calibration::to_table(m));
      return 0;
    }
    if (*replay) {
      int worst = 0;
      for (const auto& file : scenario_files(replay_target)) {
        const auto r = svc.run_scenario(file);
        print_outcome(r.run_id, r.result);
        worst = std::max(worst, exit_code_for(r.result.outcome));
      }
      const auto m = svc.metrics({});
      std::cout << "\n"
                << (replay_format == "json" ? harness::calibration::to_json(m).dump(2) + "\n"
                                            : harness::calibration::to_table(m));
      return worst;
    }
    if (*serve) {
      const auto [host, port] = harness::http::parse_listen(listen.empty() ? config.listen : listen);
      harness::http::Api api(svc, config.operator_token);
      g_api = &api;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on " << host << ":" << port << "\n" << std::flush;
      if (!api.listen(host, port)) {
        std::cerr << "cannot listen on " << host << ":" << port << "\n";
        return 1;
      }
      return 0;
    }
  } catch (const harness::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
