#include "shardann/fleetsched.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>

#include "shardann/rng.hpp"

namespace shardann {

void validate(const InstanceSpec& s) {
  if (s.id.empty()) throw InvalidArgument("instance id must not be empty");
  if (!(s.price_per_hour >= 0.0)) throw InvalidArgument(s.id + ": price must be >= 0");
  if (!(s.notice_period >= 0.0)) throw InvalidArgument(s.id + ": notice period must be >= 0");
  if (!(s.protected_period >= 0.0)) throw InvalidArgument(s.id + ": protected period must be >= 0");
  if (!(s.start_time >= 0.0) || !std::isfinite(s.start_time)) {
    throw InvalidArgument(s.id + ": start time must be finite and >= 0");
  }
  if (!(s.lifetime > 0.0)) throw InvalidArgument(s.id + ": lifetime must be > 0");
  if (s.kind == InstanceKind::spot) {
    if (!std::isfinite(s.lifetime)) throw InvalidArgument(s.id + ": spot lifetime must be finite");
    if (s.lifetime < s.protected_period) {
      throw InvalidArgument(s.id + ": spot lifetime ends inside its protected period");
    }
  }
}

RuntimeEstimator fit_estimator(const std::vector<std::pair<double, double>>& samples) {
  std::vector<double> sizes;
  for (const auto& s : samples) {
    if (std::find(sizes.begin(), sizes.end(), s.first) == sizes.end()) sizes.push_back(s.first);
  }
  if (sizes.size() < 2) throw InvalidArgument("estimator needs samples at >= 2 distinct sizes");
  const double n = double(samples.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [x, y] : samples) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  RuntimeEstimator e;
  e.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  e.intercept = (sy - e.slope * sx) / n;
  if (e.intercept < 0.0) {
    e.intercept = 0.0;
    e.slope = sxy / sxx;
  }
  if (!(e.slope > 0.0)) throw InvalidArgument("fitted build time does not grow with shard size");
  return e;
}

RuntimeEstimator load_estimator(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open estimator " + path);
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.contains("slope")) {
      RuntimeEstimator e{j.at("slope").get<double>(), j.value("intercept", 0.0)};
      if (!(e.slope > 0.0) || e.intercept < 0.0) throw FormatError(path + ": invalid estimator");
      return e;
    }
    std::vector<std::pair<double, double>> samples;
    for (const auto& s : j.at("samples")) {
      samples.emplace_back(s.at("size").get<double>(), s.at("seconds").get<double>());
    }
    return fit_estimator(samples);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::vector<BuildTask> make_tasks(const std::vector<std::pair<std::uint32_t, std::uint64_t>>& shard_sizes,
                                  const RuntimeEstimator& est) {
  std::vector<BuildTask> tasks;
  for (const auto& [id, size] : shard_sizes) {
    BuildTask t;
    t.shard_id = id;
    t.size_vectors = size;
    t.estimated_ms = std::max<std::int64_t>(1, std::llround(est.predict_seconds(double(size)) * 1000.0));
    tasks.push_back(t);
  }
  return tasks;
}

std::vector<Assignment> schedule_step(std::int64_t /*now_ms*/, const std::vector<BuildTask>& tasks,
                                      const std::vector<InstanceStatus>& instances) {
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].state == TaskState::pending || tasks[i].state == TaskState::killed) pending.push_back(i);
  }
  std::sort(pending.begin(), pending.end(), [&](std::size_t a, std::size_t b) {
    if (tasks[a].estimated_ms != tasks[b].estimated_ms) return tasks[a].estimated_ms > tasks[b].estimated_ms;
    return tasks[a].shard_id < tasks[b].shard_id;
  });

  std::vector<std::size_t> noticed, open;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& s = instances[i];
    if (!s.active || !s.available) continue;
    (s.time_remaining_ms ? noticed : open).push_back(i);
  }
  std::stable_sort(noticed.begin(), noticed.end(), [&](std::size_t a, std::size_t b) {
    return *instances[a].time_remaining_ms < *instances[b].time_remaining_ms;
  });

  std::vector<Assignment> out;
  for (std::size_t inst : noticed) {
    const std::int64_t remaining = *instances[inst].time_remaining_ms;
    const auto it = std::find_if(pending.begin(), pending.end(),
                                 [&](std::size_t t) { return tasks[t].estimated_ms < remaining; });
    if (it == pending.end()) continue;
    out.push_back({*it, inst});
    pending.erase(it);
  }
  for (std::size_t inst : open) {
    if (pending.empty()) break;
    out.push_back({pending.front(), inst});
    pending.erase(pending.begin());
  }
  return out;
}

namespace {

enum EventKind : int { kTerminate = 0, kNotice = 1, kComplete = 2, kStart = 3 };

struct QueuedEvent {
  std::int64_t t;
  int kind;
  std::uint64_t seq;
  std::size_t instance;
  std::uint64_t run;  // completion validity token

  bool operator>(const QueuedEvent& o) const {
    if (t != o.t) return t > o.t;
    if (kind != o.kind) return kind > o.kind;
    return seq > o.seq;
  }
};

struct InstanceRuntime {
  std::int64_t start_ms = 0;
  std::optional<std::int64_t> end_ms;
  bool active = false;
  bool noticed = false;
  std::optional<std::size_t> task;
  std::int64_t run_start = 0;
  std::uint64_t run = 0;
};

std::int64_t to_ms(double s) { return std::llround(s * 1000.0); }

}  // namespace

SimulationResult simulate(std::vector<BuildTask> tasks, const std::vector<InstanceSpec>& fleet,
                          const SimConfig& cfg) {
  for (const auto& s : fleet) validate(s);
  for (const auto& t : tasks) {
    if (t.estimated_ms <= 0) throw InvalidArgument("task estimates must be positive");
  }
  if (!(cfg.noise_factor > 0.0)) throw InvalidArgument("noise_factor must be > 0");

  SimulationResult res;
  res.active_ms.assign(fleet.size(), 0);
  res.attempts.assign(tasks.size(), 0);
  for (const auto& s : fleet) res.instance_ids.push_back(s.id);
  if (tasks.empty()) return res;

  std::mt19937_64 rng(splitmix64(cfg.seed));
  std::vector<std::int64_t> actual(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    double f = cfg.noise_factor;
    if (cfg.noise_jitter > 0.0) f *= 1.0 + cfg.noise_jitter * (2.0 * uniform01(rng) - 1.0);
    actual[i] = std::max<std::int64_t>(1, std::llround(double(tasks[i].estimated_ms) * f));
  }

  double longest_life = 0.0;
  for (const auto& s : fleet) longest_life = std::max(longest_life, s.lifetime);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (double(actual[i]) >= longest_life * 1000.0) {
      throw StarvationError("task for shard " + std::to_string(tasks[i].shard_id) + " needs " +
                            std::to_string(actual[i]) + " ms, longer than any instance can live");
    }
  }

  std::priority_queue<QueuedEvent, std::vector<QueuedEvent>, std::greater<>> queue;
  std::uint64_t seq = 0;
  std::vector<InstanceRuntime> rt(fleet.size());
  for (std::size_t i = 0; i < fleet.size(); ++i) {
    rt[i].start_ms = to_ms(fleet[i].start_time);
    queue.push({rt[i].start_ms, kStart, seq++, i, 0});
    if (std::isfinite(fleet[i].lifetime)) {
      const std::int64_t end = rt[i].start_ms + to_ms(fleet[i].lifetime);
      rt[i].end_ms = end;
      queue.push({end, kTerminate, seq++, i, 0});
      queue.push({std::max(rt[i].start_ms, end - to_ms(fleet[i].notice_period)), kNotice, seq++, i, 0});
    }
  }

  auto log = [&](std::int64_t t, const char* ev, std::size_t inst, std::optional<std::size_t> task,
                 nlohmann::json detail) {
    SimEvent e;
    e.t_ms = t;
    e.event = ev;
    e.instance = fleet[inst].id;
    if (task) e.task = tasks[*task].shard_id;
    e.detail = std::move(detail);
    res.events.push_back(std::move(e));
  };

  std::size_t done = 0;
  while (done < tasks.size()) {
    if (queue.empty()) {
      throw StarvationError(std::to_string(tasks.size() - done) +
                            " build tasks remain but no instance will become available");
    }
    const std::int64_t now = queue.top().t;
    while (!queue.empty() && queue.top().t == now) {
      const QueuedEvent ev = queue.top();
      queue.pop();
      InstanceRuntime& inst = rt[ev.instance];
      switch (ev.kind) {
        case kStart:
          inst.active = true;
          log(now, "start", ev.instance, std::nullopt, {{"kind", fleet[ev.instance].kind == InstanceKind::spot ? "spot" : "on_demand"}});
          break;
        case kNotice:
          if (!inst.active) break;
          inst.noticed = true;
          log(now, "notice", ev.instance, std::nullopt, {{"remaining_ms", *inst.end_ms - now}});
          break;
        case kTerminate:
          if (inst.task) {
            const std::size_t t = *inst.task;
            tasks[t].state = TaskState::killed;
            res.active_ms[ev.instance] += now - inst.run_start;
            res.spans.push_back({tasks[t].shard_id, ev.instance, inst.run_start, now, false});
            ++res.kills;
            log(now, "kill", ev.instance, t, {{"ran_ms", now - inst.run_start}});
            inst.task.reset();
          }
          inst.active = false;
          log(now, "terminate", ev.instance, std::nullopt, nlohmann::json::object());
          break;
        case kComplete:
          if (!inst.task || inst.run != ev.run) break;  // killed before completion
          {
            const std::size_t t = *inst.task;
            tasks[t].state = TaskState::done;
            ++done;
            res.active_ms[ev.instance] += now - inst.run_start;
            res.spans.push_back({tasks[t].shard_id, ev.instance, inst.run_start, now, true});
            res.makespan_ms = std::max(res.makespan_ms, now);
            log(now, "complete", ev.instance, t, {{"ran_ms", now - inst.run_start}});
            inst.task.reset();
          }
          break;
      }
    }

    std::vector<InstanceStatus> status(fleet.size());
    for (std::size_t i = 0; i < fleet.size(); ++i) {
      status[i].active = rt[i].active;
      status[i].available = rt[i].active && !rt[i].task;
      if (rt[i].noticed && rt[i].end_ms) status[i].time_remaining_ms = *rt[i].end_ms - now;
    }
    for (const Assignment& a : schedule_step(now, tasks, status)) {
      InstanceRuntime& inst = rt[a.instance];
      BuildTask& task = tasks[a.task];
      task.state = TaskState::running;
      ++task.attempt_count;
      ++res.attempts[a.task];
      inst.task = a.task;
      inst.run_start = now;
      ++inst.run;
      queue.push({now + actual[a.task], kComplete, seq++, a.instance, inst.run});
      nlohmann::json detail = {{"estimate_ms", task.estimated_ms}, {"attempt", task.attempt_count}};
      detail["remaining_ms"] = status[a.instance].time_remaining_ms
                                   ? nlohmann::json(*status[a.instance].time_remaining_ms)
                                   : nlohmann::json(nullptr);
      log(now, "assign", a.instance, a.task, std::move(detail));
    }
  }
  return res;
}

nlohmann::json to_json(const SimEvent& e) {
  return {{"t", double(e.t_ms) / 1000.0},
          {"event", e.event},
          {"instance", e.instance},
          {"task", e.task ? nlohmann::json(*e.task) : nlohmann::json(nullptr)},
          {"detail", e.detail}};
}

void write_event_log(const std::string& path, const SimulationResult& sim) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot create " + path);
  for (const auto& e : sim.events) out << to_json(e).dump() << '\n';
  if (!out) throw IoError("write failed on " + path);
}

nlohmann::json to_json(const InstanceSpec& s) {
  auto finite_or_null = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"id", s.id},
          {"kind", s.kind == InstanceKind::spot ? "spot" : "on_demand"},
          {"price_per_hour", s.price_per_hour},
          {"start_time", s.start_time},
          {"lifetime", finite_or_null(s.lifetime)},
          {"notice_period", s.notice_period},
          {"protected_period", s.protected_period}};
}

InstanceSpec instance_from_json(const nlohmann::json& j) {
  InstanceSpec s;
  s.id = j.at("id").get<std::string>();
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "spot") {
    s.kind = InstanceKind::spot;
  } else if (kind == "on_demand") {
    s.kind = InstanceKind::on_demand;
  } else {
    throw FormatError("instance " + s.id + ": unknown kind '" + kind + "'");
  }
  s.price_per_hour = j.value("price_per_hour", 0.0);
  s.start_time = j.value("start_time", 0.0);
  const auto life = j.find("lifetime");
  s.lifetime = (life == j.end() || life->is_null()) ? kForever : life->get<double>();
  if (s.kind == InstanceKind::on_demand) s.lifetime = kForever;
  s.notice_period = j.value("notice_period", 300.0);
  s.protected_period = j.value("protected_period", s.kind == InstanceKind::spot ? 3600.0 : 0.0);
  validate(s);
  return s;
}

std::vector<InstanceSpec> read_fleet(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open fleet trace " + path);
  std::vector<InstanceSpec> fleet;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fleet.push_back(instance_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return fleet;
}

void write_fleet(const std::string& path, const std::vector<InstanceSpec>& fleet) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot create " + path);
  for (const auto& s : fleet) out << to_json(s).dump() << '\n';
}

std::vector<InstanceSpec> random_spot_trace(std::uint64_t seed, const SpotTraceParams& p) {
  std::mt19937_64 rng(splitmix64(seed));
  std::vector<InstanceSpec> fleet;
  for (std::uint32_t i = 0; i < p.spot_instances; ++i) {
    InstanceSpec s;
    s.id = "spot-" + std::to_string(i);
    s.kind = InstanceKind::spot;
    s.price_per_hour = p.spot_price;
    s.start_time = std::floor(uniform01(rng) * p.horizon_s);
    s.lifetime = p.protected_s + p.min_extra_life_s +
                 std::floor(uniform01(rng) * (p.max_extra_life_s - p.min_extra_life_s));
    s.notice_period = p.notice_s;
    s.protected_period = p.protected_s;
    fleet.push_back(s);
  }
  if (p.on_demand_fallback) {
    InstanceSpec s;
    s.id = "ondemand-0";
    s.kind = InstanceKind::on_demand;
    s.price_per_hour = p.on_demand_price;
    s.start_time = p.on_demand_start_s;
    s.lifetime = kForever;
    s.notice_period = 0.0;
    s.protected_period = 0.0;
    fleet.push_back(s);
  }
  return fleet;
}

double transfer_time(std::uint64_t num_shards, double shard_cap_bytes, double bandwidth_bytes_per_s) {
  if (!(bandwidth_bytes_per_s > 0.0)) throw InvalidArgument("bandwidth must be > 0");
  if (!(shard_cap_bytes >= 0.0)) throw InvalidArgument("shard size must be >= 0");
  return double(num_shards) * shard_cap_bytes / bandwidth_bytes_per_s;
}

CostReport cost(const CostInputs& in) {
  for (double v : {in.cpu_price_per_hour, in.gpu_price_per_hour, in.overall_construction_h,
                   in.aggregated_gpu_active_h, in.data_transfer_h}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("cost inputs must be finite and >= 0");
  }
  CostReport r;
  if (in.cpu_only) {
    r.cpu_cost = in.overall_construction_h * in.cpu_price_per_hour;
  } else {
    r.cpu_cost = (in.overall_construction_h + in.data_transfer_h) * in.cpu_price_per_hour;
    r.gpu_cost = (in.aggregated_gpu_active_h + in.data_transfer_h) * in.gpu_price_per_hour;
  }
  r.total = r.cpu_cost + r.gpu_cost;
  return r;
}

nlohmann::json to_json(const CostInputs& in) {
  return {{"cpu_price_per_hour", in.cpu_price_per_hour},
          {"gpu_price_per_hour", in.gpu_price_per_hour},
          {"overall_construction_h", in.overall_construction_h},
          {"aggregated_gpu_active_h", in.aggregated_gpu_active_h},
          {"data_transfer_h", in.data_transfer_h},
          {"cpu_only", in.cpu_only}};
}

nlohmann::json to_json(const CostReport& r) {
  return {{"cpu_cost", r.cpu_cost}, {"gpu_cost", r.gpu_cost}, {"total", r.total}};
}

CostReport pipeline_cost_report(const SimulationResult& sim, double partition_h, double merge_h,
                                const Prices& prices, double transfer_h, CostInputs* used) {
  // A year of wall time is far outside any plausible build; larger values
  // almost certainly mean seconds were passed where hours are expected.
  constexpr double kMaxHours = 24.0 * 365.0;
  for (double h : {partition_h, merge_h, transfer_h}) {
    if (!(h >= 0.0) || h > kMaxHours) {
      throw InvalidArgument("pipeline times must be hours in [0, " + std::to_string(kMaxHours) + "]");
    }
  }
  std::int64_t active = 0;
  for (std::int64_t a : sim.active_ms) active += a;
  CostInputs in;
  in.cpu_price_per_hour = prices.cpu_per_hour;
  in.gpu_price_per_hour = prices.gpu_per_hour;
  in.overall_construction_h = partition_h + merge_h + double(sim.makespan_ms) / 3.6e6;
  in.aggregated_gpu_active_h = double(active) / 3.6e6;
  in.data_transfer_h = transfer_h;
  if (used) *used = in;
  return cost(in);
}

}  // namespace shardann
