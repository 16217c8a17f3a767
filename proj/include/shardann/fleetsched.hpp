#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "shardann/common.hpp"

namespace shardann {

enum class InstanceKind : std::uint8_t { spot, on_demand };

inline constexpr double kForever = std::numeric_limits<double>::infinity();

struct InstanceSpec {
  std::string id;
  InstanceKind kind = InstanceKind::spot;
  double price_per_hour = 0.0;
  double start_time = 0.0;  // seconds
  double lifetime = kForever;  // seconds; infinite for on_demand
  double notice_period = 300.0;  // advance warning before termination
  double protected_period = 3600.0;  // no termination before start + this
};

void validate(const InstanceSpec& s);

struct InstanceStatus {
  bool active = false;
  bool available = false;
  std::optional<std::int64_t> time_remaining_ms;  // known only after a notice
};

enum class TaskState : std::uint8_t { pending, running, done, killed };

struct BuildTask {
  std::uint32_t shard_id = 0;
  std::uint64_t size_vectors = 0;
  std::int64_t estimated_ms = 0;
  TaskState state = TaskState::pending;
  std::uint32_t attempt_count = 0;
};

/// Linear build-time model: seconds = slope * vectors + intercept.
struct RuntimeEstimator {
  double slope = 0.0;
  double intercept = 0.0;

  double predict_seconds(double vectors) const { return slope * vectors + intercept; }
};

// Least squares; a negative intercept is clamped to 0 and the slope refit
// through the origin.
RuntimeEstimator fit_estimator(const std::vector<std::pair<double, double>>& samples);

RuntimeEstimator load_estimator(const std::string& path);

std::vector<BuildTask> make_tasks(const std::vector<std::pair<std::uint32_t, std::uint64_t>>& shard_sizes,
                                  const RuntimeEstimator& est);

struct Assignment {
  std::size_t task = 0;
  std::size_t instance = 0;
  friend bool operator==(const Assignment&, const Assignment&) = default;
};

/// Availability- and time-based assignment for one instant.
///
/// Pending tasks are considered longest estimate first. Only active, idle
/// instances receive work. Instances with a known remaining time (a
/// termination notice is pending) are served first, shortest remaining first,
/// and get the largest task whose estimate is strictly below that time, or
/// nothing. Instances with unknown remaining time then take the largest
/// remaining tasks in index order.
std::vector<Assignment> schedule_step(std::int64_t now_ms, const std::vector<BuildTask>& tasks,
                                      const std::vector<InstanceStatus>& instances);

struct SimConfig {
  double noise_factor = 1.0;  // actual = estimate * noise_factor
  double noise_jitter = 0.0;  // optional +/- uniform relative jitter, seeded
  std::uint64_t seed = 0;
};

struct SimEvent {
  std::int64_t t_ms = 0;
  std::string event;  // start | notice | terminate | assign | complete | kill
  std::string instance;
  std::optional<std::uint32_t> task;  // shard id
  nlohmann::json detail;
};

struct TaskSpan {
  std::uint32_t shard_id = 0;
  std::size_t instance = 0;
  std::int64_t start_ms = 0;
  std::int64_t end_ms = 0;
  bool completed = false;
};

struct SimulationResult {
  std::vector<SimEvent> events;
  std::vector<TaskSpan> spans;
  std::int64_t makespan_ms = 0;
  std::vector<std::int64_t> active_ms;  // per instance, sum of executed spans
  std::vector<std::uint32_t> attempts;  // per task, in input order
  std::uint32_t kills = 0;
  std::vector<std::string> instance_ids;
};

/// Discrete-event run of `tasks` over `fleet`. Events at the same instant are
/// applied in the order terminate, notice, complete, start; the scheduler
/// runs after them. A task still running when its instance terminates is
/// killed and re-queued. Throws StarvationError if a task can never fit or
/// the fleet runs out while tasks remain.
SimulationResult simulate(std::vector<BuildTask> tasks, const std::vector<InstanceSpec>& fleet,
                          const SimConfig& cfg = {});

nlohmann::json to_json(const SimEvent& e);
void write_event_log(const std::string& path, const SimulationResult& sim);

nlohmann::json to_json(const InstanceSpec& s);
InstanceSpec instance_from_json(const nlohmann::json& j);
std::vector<InstanceSpec> read_fleet(const std::string& path);  // JSON lines
void write_fleet(const std::string& path, const std::vector<InstanceSpec>& fleet);

struct SpotTraceParams {
  std::uint32_t spot_instances = 6;
  double horizon_s = 8 * 3600.0;  // spot start times fall in [0, horizon)
  double min_extra_life_s = 0.0;  // lifetime = protected + U[min, max]
  double max_extra_life_s = 3 * 3600.0;
  double notice_s = 300.0;
  double protected_s = 3600.0;
  double spot_price = 3.67;
  bool on_demand_fallback = true;
  double on_demand_price = 4.6;
  double on_demand_start_s = 0.0;
};

std::vector<InstanceSpec> random_spot_trace(std::uint64_t seed, const SpotTraceParams& p = {});

// num_shards * shard_cap_bytes / bandwidth.
double transfer_time(std::uint64_t num_shards, double shard_cap_bytes, double bandwidth_bytes_per_s);

struct CostInputs {
  double cpu_price_per_hour = 0.0;
  double gpu_price_per_hour = 0.0;
  double overall_construction_h = 0.0;
  double aggregated_gpu_active_h = 0.0;
  double data_transfer_h = 0.0;
  bool cpu_only = false;  // baseline: CPU time only, no transfer, no GPU terms
};

struct CostReport {
  double cpu_cost = 0.0;
  double gpu_cost = 0.0;
  double total = 0.0;
};

// (overall + transfer) * cpu_price + (aggregated gpu active + transfer) * gpu_price
CostReport cost(const CostInputs& in);

nlohmann::json to_json(const CostInputs& in);
nlohmann::json to_json(const CostReport& r);

struct Prices {
  double cpu_per_hour = 0.0;
  double gpu_per_hour = 0.0;
};

/// overall = partition + merge + build makespan; aggregated GPU time is the
/// sum of per-instance active time, never the makespan.
CostReport pipeline_cost_report(const SimulationResult& sim, double partition_h, double merge_h,
                                const Prices& prices, double transfer_h, CostInputs* used = nullptr);

}  // namespace shardann
