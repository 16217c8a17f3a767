#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shardann/clustering.hpp"
#include "shardann/common.hpp"
#include "shardann/vecstore.hpp"

namespace shardann {

struct PartitionConfig {
  float epsilon = 1.2f;  // selectivity; <= 1 disables replication
  std::uint32_t omega = 2;  // max shards per vector, primary included
  float theta0 = 0.4f;  // base fraction of capacity open to replicas
  float alpha = 1.0f;  // radius inflation tau(b) = 1 + alpha / (1 + b)
  std::uint32_t capacity = 0;  // max vectors per shard; 0 derives it from n and k
  std::uint32_t block_size = kDefaultBlockSize;
  int threads = 0;
  // Nonzero: permute each shard's per-block append segment with this seed.
  // Emulates the arbitrary within-shard order of a racing parallel writer.
  std::uint64_t scramble_seed = 0;
};

void validate(const PartitionConfig& cfg);

struct ClusterState {
  std::uint32_t cluster_id = 0;
  std::uint32_t size = 0;
  std::uint32_t primary_count = 0;
  std::uint32_t replica_count = 0;
  float radius = 0.0f;  // over primaries only, Euclidean
  std::uint32_t replica_budget = 0;
};

std::vector<ClusterState> initial_states(std::uint32_t k, const PartitionConfig& cfg);

/// Places `v` in its nearest cluster that still has room below `capacity`.
/// Replica budgets do not gate primaries. Returns the chosen cluster.
/// `sorted` must list every cluster ascending by squared distance to `v`.
std::uint32_t assign_primary(std::span<const Neighbor> sorted, std::vector<ClusterState>& states,
                             std::uint32_t capacity);
std::uint32_t assign_primary(std::span<const float> v, const CentroidSet& cs,
                             std::vector<ClusterState>& states, std::uint32_t capacity);

// Distance and radius constraints. All arguments are Euclidean (unsquared).
inline bool selective_check(float d, float d_prime, float epsilon, float tau,
                            float radius_c_prime) {
  return d_prime < epsilon * d && d_prime < epsilon * tau * radius_c_prime;
}

inline float tau_for_block(float alpha, std::uint64_t block_index) {
  return 1.0f + alpha / (1.0f + float(block_index));
}

inline bool replica_room(const ClusterState& s, std::uint32_t capacity) {
  return s.replica_count < s.replica_budget && s.size < capacity;
}

// Recomputes every replica_budget from cumulative primary shares and returns
// tau for `block_index`:
//   budget_c = floor(theta0 * capacity * min(1, mean_share / share_c))
float update_block_statistics(std::vector<ClusterState>& states, std::uint64_t block_index,
                              const PartitionConfig& cfg);

struct ReplicaPlacement {
  std::uint32_t row = 0;  // row within the block
  std::uint32_t cluster = 0;
  float d = 0.0f;  // to the nearest centroid
  float d_prime = 0.0f;
  float radius = 0.0f;  // R[c'] at placement time
  std::uint32_t budget = 0;
  std::uint32_t replica_count_before = 0;
  std::uint32_t size_before = 0;
  std::uint64_t free_before = 0;  // unused slots over all clusters
};

/// Replica pass for one block. `sorted` holds, per row, all k clusters in
/// ascending squared distance (row-major, k entries per row). A replica is
/// placed only while more than `reserve` slots stay free over all clusters,
/// so the primaries of later blocks always find room when capacity x k >= n.
std::vector<ReplicaPlacement> assign_replicas(std::span<const Neighbor> sorted, std::uint32_t k,
                                              std::span<const std::uint32_t> primaries,
                                              std::vector<ClusterState>& states,
                                              const PartitionConfig& cfg, float tau,
                                              std::uint64_t reserve = 0);

struct ShardManifest {
  std::uint32_t shard_id = 0;
  std::uint32_t count = 0;
  std::uint32_t primaries = 0;
  std::uint32_t replicas = 0;
  std::string vectors_file;  // relative to the plan directory
  std::string idmap_file;
};

struct PartitionPlan {
  std::string source;
  std::uint32_t n = 0;
  std::uint32_t dim = 0;
  ScalarKind scalar = ScalarKind::f32;
  std::uint32_t k = 0;
  PartitionConfig config;
  std::vector<ShardManifest> shards;
  std::vector<std::uint64_t> multiplicity_histogram;  // [m] = vectors present in m shards
  std::uint64_t total_replicas = 0;
  double replicated_proportion = 0.0;  // vectors with >= 1 replica / n
  double replica_ratio = 0.0;  // total replicas / n
};

nlohmann::json to_json(const PartitionPlan& plan);
PartitionPlan plan_from_json(const nlohmann::json& j);
void save_plan(const std::string& path, const PartitionPlan& plan);
PartitionPlan load_plan(const std::string& path);

struct AssignmentEvent {
  std::uint64_t block = 0;
  id_t gid = 0;
  std::uint32_t cluster = 0;
  bool replica = false;
  ReplicaPlacement detail;  // meaningful for replicas only
  float tau = 0.0f;
};

/// One pass over the dataset in block order. For each block: primaries,
/// then statistics update, then replicas. Writes shard_<i>.bin,
/// shard_<i>.idmap and plan.json into `out_dir`. When `log` is non-null every
/// assignment is appended to it in decision order.
PartitionPlan partition(const VectorDataset& ds, const CentroidSet& cs, const PartitionConfig& cfg,
                        const std::string& out_dir, std::vector<AssignmentEvent>* log = nullptr);

struct ShardSizing {
  std::uint32_t k = 1;
  std::uint32_t capacity = 0;
};

inline constexpr double kFillFraction = 0.8;
inline constexpr double kCapacitySlack = 1.15;

std::uint32_t default_capacity(std::uint64_t n, std::uint32_t k, double expected_dup);

// Sizes shards so one shard's vectors plus its graph rows fit in
// kFillFraction of `memory_budget_bytes`.
ShardSizing choose_k(std::uint64_t n, std::uint32_t dim, ScalarKind scalar,
                     std::uint64_t memory_budget_bytes, double expected_dup,
                     std::uint32_t graph_degree = 64);

}  // namespace shardann
