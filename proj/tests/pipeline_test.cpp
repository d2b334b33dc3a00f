#include <gtest/gtest.h>

#include "harness/error.hpp"
#include "harness/pipeline.hpp"
#include "harness/service.hpp"
#include "support.hpp"

using namespace harness;
using namespace harness::pipeline;
using nlohmann::json;
using testing_support::TempDir;

namespace {

// Events and final snapshot of one scripted payments run, computed once.
struct PaymentsRun {
  std::vector<RunEvent> events;
  std::string snapshot;
};

const PaymentsRun& payments_run() {
  static const PaymentsRun run = [] {
    TempDir dir("pipeline");
    service::Service svc(testing_support::seeded_config(dir.path()));
    const auto r = svc.run_scenario(testing_support::scenario_path("payments-replay.json"));
    return PaymentsRun{svc.store().load(r.run_id), svc.store().read_snapshot(r.run_id).value_or("")};
  }();
  return run;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an exception";
  return ErrorCode::io_error;
}

json table_json() { return json::parse(builtin_transition_table()); }

}  // namespace

TEST(Transitions, BuiltinTableValidates) {
  const TransitionTable& t = TransitionTable::builtin();
  EXPECT_EQ(t.step_names().size(), 18u);
  EXPECT_EQ(t.lookup("11", {"ci_completed:pass", "ci_completed"}), 14);
  EXPECT_EQ(t.lookup("11", {"ci_completed:fail", "ci_completed"}), 12);
  EXPECT_EQ(t.lookup("13", {"corrective_action:noise", "corrective_action"}), 11);
  EXPECT_EQ(t.lookup("18", {"run_done"}), kDone);
  EXPECT_EQ(t.lookup("9", {"run_halted:terminal", "run_halted"}), kHalted);
  EXPECT_EQ(t.lookup("2", {"ci_completed:pass", "ci_completed"}), std::nullopt);
  EXPECT_EQ(t.lookup("done", {"run_halted:terminal", "run_halted"}), std::nullopt);
}

TEST(Transitions, LabelsRunFromSpecificToGeneral) {
  EXPECT_EQ(event_labels(EventKind::gate_recorded, json{{"gate", "qa"}, {"verdict", "pass"}}),
            (std::vector<std::string>{"gate_recorded:qa:pass", "gate_recorded:qa", "gate_recorded"}));
  EXPECT_EQ(event_labels(EventKind::failure_classified, json{{"final", true}}),
            (std::vector<std::string>{"failure_classified:last", "failure_classified"}));
  EXPECT_EQ(event_labels(EventKind::job_dispatched, json{{"payload", {{"route", "implementer_retry"}}}}),
            (std::vector<std::string>{"job_dispatched:implementer_retry", "job_dispatched"}));
}

TEST(Transitions, MalformedTablesAreRejected) {
  json dup = table_json();
  dup["transitions"].push_back(dup["transitions"][0]);
  EXPECT_EQ(code_of([&] { TransitionTable::parse(dup.dump()); }), ErrorCode::parse_error);

  json unknown = table_json();
  unknown["transitions"].push_back({{"from", "99"}, {"on", "run_done"}, {"to", "done"}});
  EXPECT_EQ(code_of([&] { TransitionTable::parse(unknown.dump()); }), ErrorCode::parse_error);

  json bad_event = table_json();
  bad_event["transitions"].push_back({{"from", "1"}, {"on", "teleported"}, {"to", "done"}});
  EXPECT_EQ(code_of([&] { TransitionTable::parse(bad_event.dump()); }), ErrorCode::parse_error);

  json no_halt = table_json();
  auto& rows = no_halt["transitions"];
  rows.erase(std::remove_if(rows.begin(), rows.end(),
                            [](const json& r) { return r["on"] == "run_halted:terminal"; }),
             rows.end());
  EXPECT_EQ(code_of([&] { TransitionTable::parse(no_halt.dump()); }), ErrorCode::parse_error);

  json dead_end = table_json();
  auto& rows2 = dead_end["transitions"];
  rows2.erase(std::remove_if(rows2.begin(), rows2.end(), [](const json& r) { return r["from"] == "18"; }),
              rows2.end());
  EXPECT_EQ(code_of([&] { TransitionTable::parse(dead_end.dump()); }), ErrorCode::parse_error);

  EXPECT_EQ(code_of([] { TransitionTable::parse("{"); }), ErrorCode::parse_error);
}

TEST(Fold, ReproducesTheSnapshotExactly) {
  const auto& run = payments_run();
  ASSERT_FALSE(run.events.empty());
  const RunState s = fold(run.events);
  EXPECT_EQ(to_json(s).dump(), run.snapshot);
  EXPECT_EQ(s.phase, Phase::done);
  EXPECT_EQ(s.implementation_cycles, 2);
  EXPECT_EQ(s.event_count, run.events.size());
}

TEST(Fold, EveryEventRoundTripsThroughJson) {
  for (const auto& e : payments_run().events) {
    EXPECT_EQ(to_json(event_from_json(to_json(e))), to_json(e));
  }
}

TEST(Advance, NeverModifiesItsInput) {
  const auto& events = payments_run().events;
  RunState s;
  for (const auto& e : events) {
    const std::string before = to_json(s).dump();
    RunState next = advance(s, e);
    EXPECT_EQ(to_json(s).dump(), before);
    s = std::move(next);
  }
}

TEST(Advance, StepsFollowTheTable) {
  const auto& events = payments_run().events;
  RunState s;
  std::set<int> visited;
  for (const auto& e : events) {
    s = advance(s, e);
    if (s.phase != Phase::done) visited.insert(s.step);
  }
  for (int step : {2, 3, 4, 5, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18}) {
    EXPECT_TRUE(visited.count(step)) << "step " << step;
  }
  EXPECT_FALSE(visited.count(6));
}

TEST(Advance, IllegalEventsNameStepAndEvent) {
  const auto& events = payments_run().events;
  EXPECT_EQ(code_of([&] { advance(RunState{}, events[1]); }), ErrorCode::illegal_transition);

  const RunState started = advance(RunState{}, events[0]);
  RunEvent ci = events[0];
  ci.seq = events[0].seq + 1;
  ci.kind = EventKind::ci_completed;
  ci.payload = {{"status", "pass"}};
  try {
    advance(started, ci);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::illegal_transition);
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("ci_completed:pass"), std::string::npos) << e.what();
  }

  RunEvent stale = events[1];
  stale.seq = events[0].seq;
  EXPECT_EQ(code_of([&] { advance(started, stale); }), ErrorCode::illegal_transition);
  RunEvent foreign = events[1];
  foreign.run_id = "run-9999";
  EXPECT_EQ(code_of([&] { advance(started, foreign); }), ErrorCode::illegal_transition);
}

TEST(Advance, DoneAcceptsNoPipelineEvents) {
  const auto& events = payments_run().events;
  const RunState done = fold(events);
  RunEvent again = events.back();
  again.seq = done.last_seq + 1;
  again.kind = EventKind::run_done;
  again.payload = json::object();
  EXPECT_EQ(code_of([&] { advance(done, again); }), ErrorCode::illegal_transition);
}

TEST(Guard, CycleLimitScalesWithGrants) {
  RunState s;
  s.run_id = "run-0001";
  s.implementation_cycles = 5;
  EXPECT_FALSE(max_cycles_guard(s, 5));
  s.implementation_cycles = 6;
  const auto t = max_cycles_guard(s, 5);
  ASSERT_TRUE(t);
  EXPECT_EQ(t->kind, TicketKind::run_halt);
  EXPECT_EQ(t->payload["implementation_cycles"], 6);
  s.cycle_grants = 1;
  EXPECT_FALSE(max_cycles_guard(s, 5));
}

TEST(Guard, NoiseRoundsShareTheCycleAllowance) {
  RunState s;
  s.run_id = "run-0001";
  s.noise_rounds = 5;
  EXPECT_FALSE(noise_rounds_guard(s, 5));
  s.noise_rounds = 6;
  const auto t = noise_rounds_guard(s, 5);
  ASSERT_TRUE(t);
  EXPECT_EQ(t->kind, TicketKind::run_halt);
  EXPECT_EQ(t->payload["noise_rounds"], 6);
  s.cycle_grants = 1;
  EXPECT_FALSE(noise_rounds_guard(s, 5));
}

TEST(Proposals, JsonRoundTrip) {
  Proposal p{"p1", "contract_template_update", "payments", "a\nb", {"run-0001"}, "pending", "run-0001/t1"};
  const Proposal back = proposal_from_json(to_json(p));
  EXPECT_EQ(to_json(back), to_json(p));
}
