#include "shardann/partitioner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "shardann/rng.hpp"

namespace shardann {

namespace fs = std::filesystem;

void validate(const PartitionConfig& cfg) {
  if (!(cfg.epsilon > 0.0f)) throw InvalidArgument("epsilon must be > 0");
  if (cfg.omega < 1 || cfg.omega > 65535) throw InvalidArgument("omega must be in [1, 65535]");
  if (!(cfg.theta0 > 0.0f && cfg.theta0 < 1.0f)) throw InvalidArgument("theta0 must be in (0, 1)");
  if (!(cfg.alpha >= 0.0f)) throw InvalidArgument("alpha must be >= 0");
  if (cfg.block_size == 0) throw InvalidArgument("block_size must be positive");
}

std::vector<ClusterState> initial_states(std::uint32_t k, const PartitionConfig& cfg) {
  std::vector<ClusterState> states(k);
  for (std::uint32_t c = 0; c < k; ++c) {
    states[c].cluster_id = c;
    states[c].replica_budget = std::uint32_t(std::floor(double(cfg.theta0) * cfg.capacity));
  }
  return states;
}

std::uint32_t assign_primary(std::span<const Neighbor> sorted, std::vector<ClusterState>& states,
                             std::uint32_t capacity) {
  for (const Neighbor& nb : sorted) {
    ClusterState& s = states[nb.id];
    if (s.size >= capacity) continue;
    ++s.size;
    ++s.primary_count;
    s.radius = std::max(s.radius, std::sqrt(nb.dist));
    return nb.id;
  }
  throw CapacityError("every cluster is at capacity " + std::to_string(capacity) +
                      "; capacity x k must cover n");
}

namespace {

void sorted_clusters(std::span<const float> v, const CentroidSet& cs, std::span<Neighbor> out) {
  for (std::uint32_t c = 0; c < cs.k; ++c) out[c] = Neighbor{squared_l2(v, cs.centroid(c)), c};
  std::sort(out.begin(), out.end());
}

}  // namespace

std::uint32_t assign_primary(std::span<const float> v, const CentroidSet& cs,
                             std::vector<ClusterState>& states, std::uint32_t capacity) {
  if (v.size() != cs.dim) throw InvalidArgument("vector/centroid dimension mismatch");
  std::vector<Neighbor> sorted(cs.k);
  sorted_clusters(v, cs, sorted);
  return assign_primary(sorted, states, capacity);
}

float update_block_statistics(std::vector<ClusterState>& states, std::uint64_t block_index,
                              const PartitionConfig& cfg) {
  std::uint64_t total = 0;
  for (const auto& s : states) total += s.primary_count;
  const double mean_share = 1.0 / double(states.size());
  const double base = double(cfg.theta0) * double(cfg.capacity);
  for (auto& s : states) {
    double factor = 1.0;
    if (total > 0 && s.primary_count > 0) {
      const double share = double(s.primary_count) / double(total);
      factor = std::min(1.0, mean_share / share);
    }
    s.replica_budget = std::uint32_t(std::floor(base * factor));
  }
  return tau_for_block(cfg.alpha, block_index);
}

std::vector<ReplicaPlacement> assign_replicas(std::span<const Neighbor> sorted, std::uint32_t k,
                                              std::span<const std::uint32_t> primaries,
                                              std::vector<ClusterState>& states,
                                              const PartitionConfig& cfg, float tau,
                                              std::uint64_t reserve) {
  std::vector<ReplicaPlacement> placed;
  const std::size_t rows = primaries.size();
  std::uint64_t open_slots = 0;
  for (const auto& s : states) open_slots += cfg.capacity - std::min(s.size, cfg.capacity);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = sorted.subspan(r * k, k);
    const float d = std::sqrt(row[0].dist);
    std::uint32_t assigned = 1;
    for (const Neighbor& cand : row) {
      if (assigned >= cfg.omega) break;
      if (cand.id == primaries[r]) continue;
      ClusterState& s = states[cand.id];
      if (open_slots <= reserve) return placed;
      if (!replica_room(s, cfg.capacity)) continue;
      const float d_prime = std::sqrt(cand.dist);
      if (!selective_check(d, d_prime, cfg.epsilon, tau, s.radius)) continue;
      placed.push_back(ReplicaPlacement{std::uint32_t(r), cand.id, d, d_prime, s.radius,
                                        s.replica_budget, s.replica_count, s.size, open_slots});
      ++s.replica_count;
      ++s.size;
      --open_slots;
      ++assigned;
    }
  }
  return placed;
}

std::uint32_t default_capacity(std::uint64_t n, std::uint32_t k, double expected_dup) {
  const double per_shard = std::ceil(double(n) * expected_dup / double(k));
  const auto cap = std::uint64_t(std::ceil(per_shard * kCapacitySlack));
  return std::uint32_t(std::min<std::uint64_t>(std::max<std::uint64_t>(cap, 1), UINT32_MAX));
}

ShardSizing choose_k(std::uint64_t n, std::uint32_t dim, ScalarKind scalar,
                     std::uint64_t memory_budget_bytes, double expected_dup,
                     std::uint32_t graph_degree) {
  if (!(expected_dup >= 1.0)) throw InvalidArgument("expected_dup must be >= 1");
  const double per_vector = double(dim) * double(scalar_width(scalar)) + 4.0 * graph_degree;
  const double usable = kFillFraction * double(memory_budget_bytes);
  if (usable < per_vector) {
    throw InvalidArgument("memory budget of " + std::to_string(memory_budget_bytes) +
                          " bytes cannot hold a single vector");
  }
  ShardSizing out;
  out.k = std::uint32_t(std::max(1.0, std::ceil(double(n) * expected_dup * per_vector / usable)));
  out.capacity = default_capacity(n, out.k, expected_dup);
  return out;
}

nlohmann::json to_json(const PartitionPlan& plan) {
  nlohmann::json shards = nlohmann::json::array();
  for (const auto& s : plan.shards) {
    shards.push_back({{"shard_id", s.shard_id},
                      {"count", s.count},
                      {"primaries", s.primaries},
                      {"replicas", s.replicas},
                      {"vectors", s.vectors_file},
                      {"idmap", s.idmap_file}});
  }
  const auto& c = plan.config;
  return {{"source", plan.source},
          {"n", plan.n},
          {"dim", plan.dim},
          {"scalar", scalar_name(plan.scalar)},
          {"k", plan.k},
          {"config",
           {{"epsilon", c.epsilon},
            {"omega", c.omega},
            {"theta0", c.theta0},
            {"alpha", c.alpha},
            {"capacity", c.capacity},
            {"block_size", c.block_size},
            {"scramble_seed", c.scramble_seed}}},
          {"shards", shards},
          {"multiplicity_histogram", plan.multiplicity_histogram},
          {"total_replicas", plan.total_replicas},
          {"replicated_proportion", plan.replicated_proportion},
          {"replica_ratio", plan.replica_ratio}};
}

PartitionPlan plan_from_json(const nlohmann::json& j) {
  try {
    PartitionPlan p;
    p.source = j.at("source").get<std::string>();
    p.n = j.at("n").get<std::uint32_t>();
    p.dim = j.at("dim").get<std::uint32_t>();
    p.scalar = parse_scalar(j.at("scalar").get<std::string>());
    p.k = j.at("k").get<std::uint32_t>();
    const auto& c = j.at("config");
    p.config.epsilon = c.at("epsilon").get<float>();
    p.config.omega = c.at("omega").get<std::uint32_t>();
    p.config.theta0 = c.at("theta0").get<float>();
    p.config.alpha = c.at("alpha").get<float>();
    p.config.capacity = c.at("capacity").get<std::uint32_t>();
    p.config.block_size = c.at("block_size").get<std::uint32_t>();
    p.config.scramble_seed = c.value("scramble_seed", std::uint64_t{0});
    for (const auto& s : j.at("shards")) {
      ShardManifest m;
      m.shard_id = s.at("shard_id").get<std::uint32_t>();
      m.count = s.at("count").get<std::uint32_t>();
      m.primaries = s.value("primaries", 0u);
      m.replicas = s.value("replicas", 0u);
      m.vectors_file = s.at("vectors").get<std::string>();
      m.idmap_file = s.at("idmap").get<std::string>();
      p.shards.push_back(std::move(m));
    }
    p.multiplicity_histogram = j.at("multiplicity_histogram").get<std::vector<std::uint64_t>>();
    p.total_replicas = j.at("total_replicas").get<std::uint64_t>();
    p.replicated_proportion = j.at("replicated_proportion").get<double>();
    p.replica_ratio = j.at("replica_ratio").get<double>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed plan: ") + e.what());
  }
}

void save_plan(const std::string& path, const PartitionPlan& plan) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << to_json(plan).dump(2) << '\n';
  if (!out) throw IoError("write failed on " + path);
}

PartitionPlan load_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open plan " + path);
  try {
    return plan_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

PartitionPlan partition(const VectorDataset& ds, const CentroidSet& cs, const PartitionConfig& cfg_in,
                        const std::string& out_dir, std::vector<AssignmentEvent>* log) {
  PartitionConfig cfg = cfg_in;
  if (cs.dim != ds.dim) throw InvalidArgument("centroid dimension does not match dataset");
  const std::uint32_t k = cs.k;
  if (cfg.capacity == 0) cfg.capacity = default_capacity(ds.count, k, 1.0 + cfg.theta0);
  validate(cfg);
  if (std::uint64_t(cfg.capacity) * k < ds.count) {
    throw CapacityError("capacity " + std::to_string(cfg.capacity) + " x k " + std::to_string(k) +
                        " cannot hold " + std::to_string(ds.count) + " vectors");
  }
  const int threads = resolve_threads(cfg.threads);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  PartitionPlan plan;
  plan.source = ds.path;
  plan.n = ds.count;
  plan.dim = ds.dim;
  plan.scalar = ds.scalar;
  plan.k = k;
  plan.config = cfg;

  std::vector<DatasetWriter> writers;
  std::vector<IdMap> idmaps(k);
  writers.reserve(k);
  for (std::uint32_t c = 0; c < k; ++c) {
    ShardManifest m;
    m.shard_id = c;
    m.vectors_file = "shard_" + std::to_string(c) + ".bin";
    m.idmap_file = "shard_" + std::to_string(c) + ".idmap";
    writers.emplace_back((fs::path(out_dir) / m.vectors_file).string(), ds.dim, ds.scalar);
    plan.shards.push_back(std::move(m));
  }

  std::vector<ClusterState> states = initial_states(k, cfg);
  std::vector<std::uint16_t> multiplicity(ds.count, 0);
  std::vector<Neighbor> sorted;
  std::vector<std::uint32_t> primaries;
  // Per shard, block rows to append in order.
  std::vector<std::vector<std::uint32_t>> segments(k);

  const std::uint64_t blocks = ds.num_blocks(cfg.block_size);
  for (std::uint64_t b = 0; b < blocks; ++b) {
    const VectorBlock block = read_block(ds, b, cfg.block_size);
    const std::size_t rows = block.rows;

    sorted.assign(rows * k, Neighbor{});
#pragma omp parallel for num_threads(threads) schedule(static)
    for (std::int64_t r = 0; r < std::int64_t(rows); ++r) {
      sorted_clusters(block.vectors.row(std::size_t(r)), cs,
                      std::span<Neighbor>(sorted).subspan(std::size_t(r) * k, k));
    }

    for (auto& seg : segments) seg.clear();
    primaries.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      primaries[r] = assign_primary(std::span<const Neighbor>(sorted).subspan(r * k, k), states,
                                    cfg.capacity);
      segments[primaries[r]].push_back(std::uint32_t(r));
      const auto gid = id_t(block.start_id + r);
      multiplicity[gid] = 1;
      if (log) log->push_back(AssignmentEvent{b, gid, primaries[r], false, {}, 0.0f});
    }

    const float tau = update_block_statistics(states, b, cfg);

    // Keep room for the primaries of later blocks.
    const std::uint64_t later = ds.count - (block.start_id + rows);
    const auto placed = assign_replicas(sorted, k, primaries, states, cfg, tau, later);
    for (const auto& p : placed) {
      segments[p.cluster].push_back(p.row);
      const auto gid = id_t(block.start_id + p.row);
      ++multiplicity[gid];
      if (log) log->push_back(AssignmentEvent{b, gid, p.cluster, true, p, tau});
    }

    if (cfg.scramble_seed != 0) {
      for (std::uint32_t c = 0; c < k; ++c) {
        std::mt19937_64 rng(splitmix64(cfg.scramble_seed ^ (b * 0x100000001b3ULL + c)));
        auto& seg = segments[c];
        for (std::size_t i = seg.size(); i > 1; --i) std::swap(seg[i - 1], seg[uniform_below(rng, i)]);
      }
    }

    // Each shard stream is owned by exactly one worker.
#pragma omp parallel for num_threads(threads) schedule(dynamic)
    for (std::int64_t c = 0; c < std::int64_t(k); ++c) {
      for (std::uint32_t r : segments[std::size_t(c)]) {
        writers[std::size_t(c)].append(block.vectors.row(r));
        idmaps[std::size_t(c)].local_to_global.push_back(id_t(block.start_id + r));
      }
    }
  }

  for (std::uint32_t c = 0; c < k; ++c) {
    writers[c].close();
    write_idmap((fs::path(out_dir) / plan.shards[c].idmap_file).string(), idmaps[c]);
    plan.shards[c].count = states[c].size;
    plan.shards[c].primaries = states[c].primary_count;
    plan.shards[c].replicas = states[c].replica_count;
    plan.total_replicas += states[c].replica_count;
  }

  plan.multiplicity_histogram.assign(cfg.omega + 1, 0);
  std::uint64_t replicated = 0;
  for (std::uint16_t m : multiplicity) {
    ++plan.multiplicity_histogram[m];
    if (m > 1) ++replicated;
  }
  if (ds.count > 0) {
    plan.replicated_proportion = double(replicated) / double(ds.count);
    plan.replica_ratio = double(plan.total_replicas) / double(ds.count);
  }
  save_plan((fs::path(out_dir) / "plan.json").string(), plan);
  return plan;
}

}  // namespace shardann
