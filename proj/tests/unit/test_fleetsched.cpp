#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "sched_audit.hpp"
#include "shardann/fleetsched.hpp"
#include "testkit.hpp"

using namespace shardann;

namespace {

BuildTask task(std::uint32_t id, std::int64_t est_ms) {
  BuildTask t;
  t.shard_id = id;
  t.size_vectors = std::uint64_t(est_ms);
  t.estimated_ms = est_ms;
  return t;
}

InstanceSpec always_on(const std::string& id) {
  InstanceSpec s;
  s.id = id;
  s.kind = InstanceKind::on_demand;
  s.price_per_hour = 4.6;
  s.lifetime = kForever;
  s.protected_period = 0.0;
  return s;
}

InstanceSpec spot(const std::string& id, double start, double life, double notice = 300.0,
                  double protect = 3600.0) {
  InstanceSpec s;
  s.id = id;
  s.kind = InstanceKind::spot;
  s.price_per_hour = 3.67;
  s.start_time = start;
  s.lifetime = life;
  s.notice_period = notice;
  s.protected_period = protect;
  return s;
}

InstanceStatus idle(std::optional<std::int64_t> remaining = std::nullopt) {
  return InstanceStatus{true, true, remaining};
}

}  // namespace

TEST(Estimator, ExactLine) {
  const RuntimeEstimator e = fit_estimator({{1000, 10}, {2000, 20}});
  EXPECT_NEAR(e.slope, 0.01, 1e-12);
  EXPECT_NEAR(e.intercept, 0.0, 1e-9);
  EXPECT_NEAR(e.predict_seconds(5000), 50.0, 1e-9);
}

TEST(Estimator, InterceptClampAndErrors) {
  const RuntimeEstimator e = fit_estimator({{1000, 1}, {2000, 12}, {3000, 23}});
  EXPECT_EQ(e.intercept, 0.0);
  EXPECT_GT(e.slope, 0.0);
  const RuntimeEstimator pos = fit_estimator({{1000, 15}, {2000, 25}});
  EXPECT_NEAR(pos.intercept, 5.0, 1e-9);
  EXPECT_THROW(fit_estimator({{1000, 1}, {1000, 2}}), InvalidArgument);
  EXPECT_THROW(fit_estimator({{1000, 5}, {2000, 1}}), InvalidArgument);
}

TEST(Estimator, LoadFromSamplesOrLine) {
  testkit::TempDir dir;
  {
    std::ofstream(dir.file("m.json")) << R"({"samples":[{"size":1000,"seconds":10},{"size":2000,"seconds":20}]})";
    std::ofstream(dir.file("l.json")) << R"({"slope":0.5,"intercept":2})";
    std::ofstream(dir.file("bad.json")) << R"({"slope":-1})";
  }
  EXPECT_NEAR(load_estimator(dir.file("m.json")).slope, 0.01, 1e-12);
  EXPECT_EQ(load_estimator(dir.file("l.json")).intercept, 2.0);
  EXPECT_THROW(load_estimator(dir.file("bad.json")), FormatError);
  EXPECT_THROW(load_estimator(dir.file("none.json")), IoError);
}

TEST(MakeTasks, RoundsToMilliseconds) {
  const auto tasks = make_tasks({{0, 1000}, {1, 2500}}, RuntimeEstimator{0.01, 0.0});
  ASSERT_EQ(tasks.size(), 2u);
  EXPECT_EQ(tasks[0].estimated_ms, 10000);
  EXPECT_EQ(tasks[1].estimated_ms, 25000);
  EXPECT_EQ(tasks[1].state, TaskState::pending);
}

TEST(ScheduleStep, TimeBasedRule) {
  const std::vector<BuildTask> tasks = {task(0, 50'000)};
  EXPECT_EQ(schedule_step(0, tasks, {idle(100'000)}), (std::vector<Assignment>{{0, 0}}));
  EXPECT_TRUE(schedule_step(0, tasks, {idle(30'000)}).empty());
  EXPECT_TRUE(schedule_step(0, tasks, {idle(50'000)}).empty());  // must finish strictly before
}

TEST(ScheduleStep, AvailabilityRule) {
  const std::vector<BuildTask> tasks = {task(0, 10), task(1, 20)};
  EXPECT_TRUE(schedule_step(0, tasks, {InstanceStatus{true, false, std::nullopt}}).empty());
  EXPECT_TRUE(schedule_step(0, tasks, {InstanceStatus{false, false, std::nullopt}}).empty());
}

TEST(ScheduleStep, LongestFirstAndNoticedServedFirst) {
  std::vector<BuildTask> tasks = {task(0, 10), task(1, 40), task(2, 30), task(3, 20)};
  tasks[2].state = TaskState::done;
  // Instance 0 is open, instance 1 has 25 ms left: it gets the largest task
  // under 25 (task 3), the open one gets the largest overall (task 1).
  const auto a = schedule_step(0, tasks, {idle(), idle(25)});
  EXPECT_EQ(a, (std::vector<Assignment>{{3, 1}, {1, 0}}));
  // Two open instances take tasks in decreasing estimate order.
  EXPECT_EQ(schedule_step(0, tasks, {idle(), idle()}), (std::vector<Assignment>{{1, 0}, {3, 1}}));
}

TEST(Simulate, SerialSum) {
  const auto r = simulate({task(0, 10'000), task(1, 20'000), task(2, 30'000)}, {always_on("a")});
  EXPECT_EQ(r.makespan_ms, 60'000);
  EXPECT_EQ(r.kills, 0u);
  EXPECT_EQ(r.active_ms[0], 60'000);
}

TEST(Simulate, PerfectPacking) {
  const std::int64_t t = 7'000;
  for (int p : {1, 2, 4}) {
    std::vector<BuildTask> tasks;
    for (std::uint32_t i = 0; i < 16; ++i) tasks.push_back(task(i, t));
    std::vector<InstanceSpec> fleet;
    for (int i = 0; i < p; ++i) fleet.push_back(always_on("i" + std::to_string(i)));
    const auto r = simulate(tasks, fleet);
    EXPECT_EQ(r.makespan_ms, 16 / p * t);
    std::int64_t busy = 0;
    for (auto x : r.active_ms) busy += x;
    EXPECT_EQ(busy, 16 * t);
  }
}

TEST(Simulate, ListSchedulingBound) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<BuildTask> tasks;
    std::int64_t total = 0, longest = 0;
    for (std::uint32_t i = 0; i < 25; ++i) {
      const std::int64_t est = 1000 + std::int64_t(rng() % 50'000);
      tasks.push_back(task(i, est));
      total += est;
      longest = std::max(longest, est);
    }
    const int p = 1 + int(rng() % 5);
    std::vector<InstanceSpec> fleet;
    for (int i = 0; i < p; ++i) fleet.push_back(always_on("i" + std::to_string(i)));
    const auto r = simulate(tasks, fleet);
    EXPECT_LE(r.makespan_ms, total / p + longest + 1);
  }
}

TEST(Simulate, KillAndRequeue) {
  // The spot instance dies at 4000 s while a 5000 s task runs on it.
  const std::vector<BuildTask> tasks = {task(0, 5'000'000), task(1, 1'000'000)};
  const auto r = simulate(tasks, {spot("s", 0, 4000), [] {
                                    auto o = always_on("od");
                                    o.start_time = 100;
                                    return o;
                                  }()});
  EXPECT_EQ(r.kills, 1u);
  EXPECT_EQ(r.attempts[0], 2u);
  const auto audit = testkit::audit_schedule(r.events, tasks);
  EXPECT_EQ(audit.violations, 0u) << audit.summary();
  EXPECT_EQ(audit.kills, 1u);
  EXPECT_EQ(audit.makespan_ms, r.makespan_ms);
}

TEST(Simulate, NoticedInstanceOnlyGetsFittingWork) {
  // The spot's notice lands at 3700 s. Its first task ends at 3750 s with
  // 250 s left: the 250 s task does not fit strictly, the 200 s task does.
  // The 250 s task waits for the on-demand instance at 5000 s.
  const std::vector<BuildTask> tasks = {task(0, 3'750'000), task(1, 200'000), task(2, 250'000)};
  auto od = always_on("od");
  od.start_time = 5000;
  const auto r = simulate(tasks, {spot("s", 0, 4000), od});
  EXPECT_EQ(r.kills, 0u);
  EXPECT_EQ(r.makespan_ms, 5'250'000);
  std::vector<std::pair<std::uint32_t, std::string>> assigns;
  for (const auto& e : r.events) {
    if (e.event == "assign") assigns.push_back({*e.task, e.instance});
  }
  EXPECT_EQ(assigns, (std::vector<std::pair<std::uint32_t, std::string>>{{0, "s"}, {1, "s"}, {2, "od"}}));
  EXPECT_EQ(testkit::audit_schedule(r.events, tasks).violations, 0u);
}

TEST(Simulate, Starvation) {
  EXPECT_THROW(simulate({task(0, 5'000'000)}, {spot("s", 0, 4000)}), StarvationError);
  EXPECT_THROW(simulate({task(0, 1000), task(1, 3'990'000), task(2, 3'990'000)}, {spot("s", 0, 4000)}),
               StarvationError);
}

TEST(Simulate, RandomSpotFleetsPassAudit) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<BuildTask> tasks;
    for (std::uint32_t i = 0; i < 12; ++i) tasks.push_back(task(i, 300'000 + std::int64_t(rng() % 2'400'000)));
    SpotTraceParams tp;
    tp.spot_instances = 4;
    tp.horizon_s = 2 * 3600.0;
    tp.on_demand_start_s = 3 * 3600.0;
    const auto fleet = random_spot_trace(seed, tp);
    SimConfig cfg;
    cfg.seed = seed;
    cfg.noise_jitter = 0.2;
    const auto r = simulate(tasks, fleet, cfg);
    const auto audit = testkit::audit_schedule(r.events, tasks);
    ASSERT_EQ(audit.violations, 0u) << "seed " << seed << '\n' << audit.summary();
    EXPECT_EQ(audit.makespan_ms, r.makespan_ms);
    EXPECT_EQ(audit.kills, r.kills);
    for (std::size_t i = 0; i < fleet.size(); ++i) {
      const auto it = audit.active_ms.find(fleet[i].id);
      EXPECT_EQ(it == audit.active_ms.end() ? 0 : it->second, r.active_ms[i]);
    }
  }
}

TEST(Simulate, Deterministic) {
  std::vector<BuildTask> tasks;
  for (std::uint32_t i = 0; i < 10; ++i) tasks.push_back(task(i, 600'000 + 100'000 * i));
  SimConfig cfg;
  cfg.seed = 9;
  cfg.noise_jitter = 0.3;
  const auto fleet = random_spot_trace(3);
  const auto a = simulate(tasks, fleet, cfg);
  const auto b = simulate(tasks, fleet, cfg);
  ASSERT_EQ(a.events.size(), b.events.size());
  for (std::size_t i = 0; i < a.events.size(); ++i) EXPECT_EQ(to_json(a.events[i]), to_json(b.events[i]));
}

TEST(Fleet, JsonLinesRoundTrip) {
  testkit::TempDir dir;
  const auto fleet = random_spot_trace(11);
  write_fleet(dir.file("f.jsonl"), fleet);
  const auto back = read_fleet(dir.file("f.jsonl"));
  ASSERT_EQ(back.size(), fleet.size());
  for (std::size_t i = 0; i < fleet.size(); ++i) EXPECT_EQ(to_json(back[i]), to_json(fleet[i]));
  EXPECT_EQ(back.back().lifetime, kForever);
  std::ofstream(dir.file("bad.jsonl")) << "{\"id\":\"x\",\"kind\":\"gpu\"}\n";
  EXPECT_THROW(read_fleet(dir.file("bad.jsonl")), FormatError);
  EXPECT_THROW(validate(spot("s", 0, 100)), InvalidArgument);  // dies inside its protected hour
}

TEST(Transfer, Examples) {
  EXPECT_DOUBLE_EQ(transfer_time(100, 16e9, 10e9), 160.0);
  // 160 s is 0.0444 h, quoted upward as 0.045 h.
  EXPECT_GT(transfer_time(100, 16e9, 10e9) / 3600.0, 0.044);
  EXPECT_LE(transfer_time(100, 16e9, 10e9) / 3600.0, 0.045);
  EXPECT_EQ(transfer_time(0, 16e9, 10e9), 0.0);
  EXPECT_DOUBLE_EQ(transfer_time(50, 16e9, 10e9) * 2, transfer_time(100, 16e9, 10e9));
  EXPECT_THROW(transfer_time(1, 1, 0), InvalidArgument);
}

TEST(Cost, Examples) {
  CostInputs cpu;
  cpu.cpu_price_per_hour = 3.9;
  cpu.overall_construction_h = 17.25;
  cpu.cpu_only = true;
  EXPECT_NEAR(cost(cpu).total, 67.275, 1e-9);
  EXPECT_EQ(cost(cpu).gpu_cost, 0.0);

  CostInputs hybrid;
  hybrid.cpu_price_per_hour = 4.6;
  hybrid.gpu_price_per_hour = 3.67;
  hybrid.overall_construction_h = 1.88;
  hybrid.aggregated_gpu_active_h = 0.56;
  hybrid.data_transfer_h = 0.045;
  const CostReport r = cost(hybrid);
  EXPECT_NEAR(r.total, 11.07535, 1e-9);
  EXPECT_NEAR(r.cpu_cost + r.gpu_cost, r.total, 1e-12);

  hybrid.overall_construction_h = hybrid.aggregated_gpu_active_h = hybrid.data_transfer_h = 0.0;
  EXPECT_EQ(cost(hybrid).total, 0.0);
  hybrid.gpu_price_per_hour = -1.0;
  EXPECT_THROW(cost(hybrid), InvalidArgument);
}

TEST(Cost, BillingUsesSummedActiveTime) {
  const Prices prices{4.6, 3.67};
  const auto one = simulate({task(0, 1'800'000), task(1, 1'800'000)}, {always_on("a")});
  CostInputs used;
  pipeline_cost_report(one, 0.0, 0.0, prices, 0.0, &used);
  EXPECT_DOUBLE_EQ(used.aggregated_gpu_active_h, used.overall_construction_h);
  const auto two = simulate({task(0, 1'800'000), task(1, 1'800'000)}, {always_on("a"), always_on("b")});
  pipeline_cost_report(two, 0.0, 0.0, prices, 0.0, &used);
  EXPECT_DOUBLE_EQ(used.overall_construction_h, 0.5);
  EXPECT_DOUBLE_EQ(used.aggregated_gpu_active_h, 1.0);
  EXPECT_THROW(pipeline_cost_report(two, 50'000.0, 0.0, prices, 0.0), InvalidArgument);
}

TEST(Cost, LogReplayIsOrderIndependent) {
  std::vector<BuildTask> tasks;
  for (std::uint32_t i = 0; i < 9; ++i) tasks.push_back(task(i, 900'000 + 250'000 * i));
  const auto r = simulate(tasks, random_spot_trace(21));
  const Prices prices{4.6, 3.67};
  const CostReport want = pipeline_cost_report(r, 0.2, 0.1, prices, 0.045);
  auto events = r.events;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 5; ++i) {
    std::shuffle(events.begin(), events.end(), rng);
    const CostReport got = testkit::cost_from_log(events, 0.2, 0.1, prices, 0.045);
    EXPECT_DOUBLE_EQ(got.total, want.total);
    EXPECT_DOUBLE_EQ(got.gpu_cost, want.gpu_cost);
  }
}
