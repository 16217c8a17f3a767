#include "shardann/shardann.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>

#include "shardann/clustering.hpp"
#include "shardann/fleetsched.hpp"
#include "shardann/graphbuild.hpp"
#include "shardann/merger.hpp"
#include "shardann/partitioner.hpp"
#include "shardann/pipeline.hpp"
#include "shardann/searcher.hpp"
#include "shardann/vecstore.hpp"

using namespace shardann;
using json = nlohmann::json;

struct sann_dataset {
  VectorDataset ds;
};

struct sann_index {
  GraphIndex graph;
  Matrix data;
  bool has_data = false;
};

namespace {

thread_local std::string g_last_error;
thread_local sann_stage g_last_stage = SANN_STAGE_NONE;

sann_status status_of(ErrorKind k) {
  switch (k) {
    case ErrorKind::io: return SANN_ERR_IO;
    case ErrorKind::format: return SANN_ERR_FORMAT;
    case ErrorKind::invalid_argument: return SANN_ERR_INVALID_ARGUMENT;
    case ErrorKind::capacity: return SANN_ERR_CAPACITY;
    case ErrorKind::starvation: return SANN_ERR_STARVATION;
    case ErrorKind::internal: return SANN_ERR_INTERNAL;
  }
  return SANN_ERR_INTERNAL;
}

template <typename F>
sann_status guarded(F&& f) {
  g_last_error.clear();
  g_last_stage = SANN_STAGE_NONE;
  try {
    f();
    return SANN_OK;
  } catch (const StageError& e) {
    g_last_error = e.what();
    g_last_stage = static_cast<sann_stage>(static_cast<int>(e.stage()));
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return SANN_ERR_CAPACITY;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return status_of(kind_of(e));
  } catch (...) {
    g_last_error = "unknown error";
    return SANN_ERR_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw InvalidArgument(what);
}

ScalarKind to_kind(sann_scalar s) {
  require(s == SANN_U8 || s == SANN_F32, "unknown scalar kind");
  return s == SANN_U8 ? ScalarKind::u8 : ScalarKind::f32;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

KMeansParams to_cpp(const sann_kmeans_params& p) {
  KMeansParams k;
  k.k = p.k;
  k.sample_size = p.sample_size;
  k.max_iters = p.max_iters;
  k.seed = p.seed;
  k.tol = float(p.tol);
  k.threads = p.threads;
  return k;
}

PartitionConfig to_cpp(const sann_partition_params& p) {
  PartitionConfig c;
  c.epsilon = float(p.epsilon);
  c.omega = p.omega;
  c.theta0 = float(p.theta0);
  c.alpha = float(p.alpha);
  c.capacity = p.capacity;
  c.block_size = p.block_size;
  c.threads = p.threads;
  c.scramble_seed = p.scramble_seed;
  return c;
}

BuildParams to_cpp(const sann_build_params& p) {
  BuildParams b;
  b.degree_R = p.degree_r;
  b.degree_L = p.degree_l;
  b.nnd_iters = p.nnd_iters;
  b.nnd_sample = p.nnd_sample;
  b.exact_threshold = p.exact_threshold;
  b.seed = p.seed;
  b.threads = p.threads;
  return b;
}

}  // namespace

extern "C" {

const char* sann_last_error(void) { return g_last_error.c_str(); }

sann_stage sann_last_error_stage(void) { return g_last_stage; }

const char* sann_status_name(sann_status s) {
  switch (s) {
    case SANN_OK: return "ok";
    case SANN_ERR_IO: return "io";
    case SANN_ERR_FORMAT: return "format";
    case SANN_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case SANN_ERR_CAPACITY: return "capacity";
    case SANN_ERR_STARVATION: return "starvation";
    case SANN_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* sann_stage_name(sann_stage s) {
  if (s < SANN_STAGE_CONFIG || s > SANN_STAGE_REPORT) return "none";
  return stage_name(static_cast<Stage>(static_cast<int>(s)));
}

void sann_string_free(char* s) { std::free(s); }

sann_status sann_parse_scalar(const char* name, sann_scalar* out) {
  return guarded([&] {
    require(name && out, "null argument");
    *out = parse_scalar(name) == ScalarKind::u8 ? SANN_U8 : SANN_F32;
  });
}

sann_status sann_dataset_open(const char* path, sann_scalar scalar, sann_dataset** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = nullptr;
    auto h = std::make_unique<sann_dataset>();
    h->ds = open_dataset(path, to_kind(scalar));
    *out = h.release();
  });
}

void sann_dataset_free(sann_dataset* ds) { delete ds; }

uint32_t sann_dataset_count(const sann_dataset* ds) { return ds ? ds->ds.count : 0; }

uint32_t sann_dataset_dim(const sann_dataset* ds) { return ds ? ds->ds.dim : 0; }

sann_status sann_dataset_read_rows(const sann_dataset* ds, uint64_t first, uint32_t rows, float* out) {
  return guarded([&] {
    require(ds && (out || rows == 0), "null argument");
    const Matrix m = read_rows(ds->ds, first, rows);
    std::copy(m.data.begin(), m.data.end(), out);
  });
}

sann_status sann_write_vectors(const char* path, const float* data, uint32_t n, uint32_t dim, sann_scalar scalar) {
  return guarded([&] {
    require(path && (data || n == 0), "null argument");
    Matrix m(n, dim);
    std::copy(data, data + std::size_t(n) * dim, m.data.begin());
    write_dataset(path, m, to_kind(scalar));
  });
}

void sann_kmeans_params_default(sann_kmeans_params* p) {
  if (!p) return;
  const KMeansParams d;
  *p = {d.k, d.sample_size, d.max_iters, d.seed, double(d.tol), d.threads};
}

sann_status sann_train_centroids(const char* data_path, sann_scalar scalar, const sann_kmeans_params* params,
                                 const char* out_path) {
  return guarded([&] {
    require(data_path && params && out_path, "null argument");
    const VectorDataset ds = open_dataset(data_path, to_kind(scalar));
    const KMeansParams kp = to_cpp(*params);
    require(kp.k >= 1 && kp.k <= ds.count, "k must be in [1, n]");
    const std::uint32_t m = kp.sample_size ? std::min(kp.sample_size, ds.count) : default_sample_size(ds.count, kp.k);
    save_centroids(out_path, train_kmeans(sample_vectors(ds, m, kp.seed), kp));
  });
}

void sann_partition_params_default(sann_partition_params* p) {
  if (!p) return;
  const PartitionConfig d;
  *p = {double(d.epsilon), d.omega, double(d.theta0), double(d.alpha), d.capacity, d.block_size, d.threads,
        d.scramble_seed};
}

sann_status sann_choose_k(uint64_t n, uint32_t dim, sann_scalar scalar, uint64_t memory_budget, double expected_dup,
                          uint32_t graph_degree, uint32_t* k, uint32_t* capacity) {
  return guarded([&] {
    require(k && capacity, "null argument");
    const ShardSizing s = choose_k(n, dim, to_kind(scalar), memory_budget, expected_dup, graph_degree);
    *k = s.k;
    *capacity = s.capacity;
  });
}

sann_status sann_partition(const char* data_path, sann_scalar scalar, const char* centroids_path,
                           const sann_partition_params* params, const char* out_dir, char** plan_json) {
  return guarded([&] {
    require(data_path && centroids_path && params && out_dir, "null argument");
    const PartitionPlan plan =
        partition(open_dataset(data_path, to_kind(scalar)), load_centroids(centroids_path), to_cpp(*params), out_dir);
    if (plan_json) *plan_json = dup_string(to_json(plan).dump());
  });
}

void sann_build_params_default(sann_build_params* p) {
  if (!p) return;
  const BuildParams d;
  *p = {d.degree_R, d.degree_L, d.nnd_iters, d.nnd_sample, d.exact_threshold, d.seed, d.threads};
}

sann_status sann_build_shard(const char* shard_path, const char* idmap_path, sann_scalar scalar,
                             const sann_build_params* params, const char* out_path, uint64_t memory_budget) {
  return guarded([&] {
    require(shard_path && idmap_path && params && out_path, "null argument");
    build_shard(shard_path, idmap_path, to_kind(scalar), to_cpp(*params), out_path, memory_budget);
  });
}

sann_status sann_micro_benchmark(const char* data_path, sann_scalar scalar, const sann_build_params* params,
                                 const uint32_t* sizes, size_t n_sizes, uint32_t repeats, char** result_json) {
  return guarded([&] {
    require(data_path && params && result_json && (sizes || n_sizes == 0), "null argument");
    const auto points = micro_benchmark(open_dataset(data_path, to_kind(scalar)), to_cpp(*params),
                                        std::vector<std::uint32_t>(sizes, sizes + n_sizes), repeats);
    json arr = json::array();
    for (const auto& p : points) arr.push_back({{"size", p.size}, {"seconds", p.seconds}, {"stddev", p.stddev}});
    *result_json = dup_string(arr.dump());
  });
}

sann_status sann_merge(const char* plan_path, const char* graphs_dir, const char* out_path, uint64_t buffer_bytes,
                       int threads) {
  return guarded([&] {
    require(plan_path && graphs_dir && out_path, "null argument");
    MergeOptions mo;
    if (buffer_bytes) mo.buffer_bytes = buffer_bytes;
    mo.threads = threads;
    merge_plan(plan_path, graphs_dir, out_path, mo);
  });
}

sann_status sann_index_load(const char* path, sann_index** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = nullptr;
    auto h = std::make_unique<sann_index>();
    h->graph = read_graph(path);
    *out = h.release();
  });
}

void sann_index_free(sann_index* idx) { delete idx; }

uint32_t sann_index_size(const sann_index* idx) { return idx ? idx->graph.n : 0; }

uint32_t sann_index_degree(const sann_index* idx) { return idx ? idx->graph.degree : 0; }

uint32_t sann_index_entry_point(const sann_index* idx) { return idx ? idx->graph.entry_point : 0; }

sann_status sann_index_neighbors(const sann_index* idx, uint32_t node, uint32_t* out) {
  return guarded([&] {
    require(idx && out, "null argument");
    require(node < idx->graph.n, "node out of range");
    const auto row = idx->graph.row(node);
    std::copy(row.begin(), row.end(), out);
  });
}

sann_status sann_index_connectivity(const sann_index* idx, uint64_t* reachable, uint64_t* components) {
  return guarded([&] {
    require(idx && reachable && components, "null argument");
    const ConnectivityReport r = connectivity_report(idx->graph);
    *reachable = r.reachable;
    *components = r.components;
  });
}

sann_status sann_index_attach_data(sann_index* idx, const sann_dataset* ds) {
  return guarded([&] {
    require(idx && ds, "null argument");
    if (ds->ds.count != idx->graph.n) {
      throw InvalidArgument("dataset has " + std::to_string(ds->ds.count) + " rows, index has " +
                            std::to_string(idx->graph.n));
    }
    idx->data = read_all(ds->ds);
    idx->has_data = true;
  });
}

sann_status sann_index_search(const sann_index* idx, const float* query, uint32_t dim, uint32_t topk, uint32_t beam,
                              uint32_t* ids, float* distances, uint32_t* found, uint64_t* distance_computations) {
  return guarded([&] {
    require(idx && query && ids && found, "null argument");
    require(idx->has_data, "no data attached to the index");
    require(dim == idx->data.cols, "query dimension mismatch");
    const QueryResult r = greedy_search(idx->graph, idx->data, {query, dim}, SearchParams{topk, beam});
    std::copy(r.ids.begin(), r.ids.end(), ids);
    if (distances) std::copy(r.distances.begin(), r.distances.end(), distances);
    *found = uint32_t(r.ids.size());
    if (distance_computations) *distance_computations = r.n_distance_computations;
  });
}

sann_status sann_compute_gt(const char* data_path, sann_scalar data_scalar, const char* queries_path,
                            sann_scalar query_scalar, uint32_t k, int threads, const char* out_path) {
  return guarded([&] {
    require(data_path && queries_path && out_path, "null argument");
    const Matrix data = read_all(open_dataset(data_path, to_kind(data_scalar)));
    const Matrix queries = read_all(open_dataset(queries_path, to_kind(query_scalar)));
    write_ground_truth(out_path, exact_knn(data, queries, k, threads));
  });
}

sann_status sann_evaluate(const char* index_path, const char* data_path, sann_scalar data_scalar,
                          const char* queries_path, sann_scalar query_scalar, const char* gt_path, uint32_t topk,
                          uint32_t beam, int threads, char** report_json) {
  return guarded([&] {
    require(index_path && data_path && queries_path && report_json, "null argument");
    const GraphIndex index = read_graph(index_path);
    const Matrix data = read_all(open_dataset(data_path, to_kind(data_scalar)));
    const Matrix queries = read_all(open_dataset(queries_path, to_kind(query_scalar)));
    const GroundTruth gt = gt_path ? read_ground_truth(gt_path) : exact_knn(data, queries, topk, threads);
    *report_json = dup_string(to_json(evaluate(index, data, queries, gt, SearchParams{topk, beam}, threads)).dump());
  });
}

sann_status sann_fit_estimator(const double* sizes, const double* seconds, size_t n, double* slope,
                               double* intercept) {
  return guarded([&] {
    require(sizes && seconds && slope && intercept, "null argument");
    std::vector<std::pair<double, double>> samples;
    for (size_t i = 0; i < n; ++i) samples.emplace_back(sizes[i], seconds[i]);
    const RuntimeEstimator e = fit_estimator(samples);
    *slope = e.slope;
    *intercept = e.intercept;
  });
}

sann_status sann_write_random_fleet(const char* path, uint64_t seed, uint32_t spot_instances,
                                    int on_demand_fallback) {
  return guarded([&] {
    require(path, "null argument");
    SpotTraceParams p;
    p.spot_instances = spot_instances;
    p.on_demand_fallback = on_demand_fallback != 0;
    write_fleet(path, random_spot_trace(seed, p));
  });
}

sann_status sann_sched_sim(const char* plan_path, const char* fleet_path, const char* estimator_path, uint64_t seed,
                           double noise_factor, double noise_jitter, const char* events_path, char** summary_json) {
  return guarded([&] {
    require(plan_path && fleet_path && estimator_path, "null argument");
    const PartitionPlan plan = load_plan(plan_path);
    std::vector<std::pair<std::uint32_t, std::uint64_t>> sizes;
    for (const auto& s : plan.shards) {
      if (s.count > 0) sizes.emplace_back(s.shard_id, s.count);
    }
    const std::vector<InstanceSpec> fleet = read_fleet(fleet_path);
    SimConfig sc;
    sc.seed = seed;
    sc.noise_factor = noise_factor;
    sc.noise_jitter = noise_jitter;
    const SimulationResult sim = simulate(make_tasks(sizes, load_estimator(estimator_path)), fleet, sc);
    if (events_path) write_event_log(events_path, sim);
    if (summary_json) {
      json active = json::object();
      std::int64_t total_active = 0;
      for (std::size_t i = 0; i < sim.instance_ids.size(); ++i) {
        active[sim.instance_ids[i]] = double(sim.active_ms[i]) / 1000.0;
        total_active += sim.active_ms[i];
      }
      json attempts = json::object();
      for (std::size_t i = 0; i < sizes.size(); ++i) attempts[std::to_string(sizes[i].first)] = sim.attempts[i];
      *summary_json = dup_string(json{{"tasks", sizes.size()},
                                      {"makespan_s", double(sim.makespan_ms) / 1000.0},
                                      {"aggregated_active_s", double(total_active) / 1000.0},
                                      {"kills", sim.kills},
                                      {"active_s", active},
                                      {"attempts", attempts}}
                                     .dump());
    }
  });
}

sann_status sann_cost(const sann_cost_inputs* in, sann_cost_report* out) {
  return guarded([&] {
    require(in && out, "null argument");
    CostInputs c;
    c.cpu_price_per_hour = in->cpu_price_per_hour;
    c.gpu_price_per_hour = in->gpu_price_per_hour;
    c.overall_construction_h = in->overall_construction_h;
    c.aggregated_gpu_active_h = in->aggregated_gpu_active_h;
    c.data_transfer_h = in->data_transfer_h;
    c.cpu_only = in->cpu_only != 0;
    const CostReport r = cost(c);
    *out = {r.cpu_cost, r.gpu_cost, r.total};
  });
}

sann_status sann_transfer_time(uint64_t num_shards, double shard_cap_bytes, double bandwidth_bytes_per_s,
                               double* seconds) {
  return guarded([&] {
    require(seconds, "null argument");
    *seconds = transfer_time(num_shards, shard_cap_bytes, bandwidth_bytes_per_s);
  });
}

sann_status sann_run_pipeline(const char* config_json, char** result_json) {
  return guarded([&] {
    require(config_json, "null argument");
    PipelineConfig cfg;
    try {
      cfg = pipeline_config_from_json(json::parse(config_json));
    } catch (const std::exception& e) {
      throw StageError(Stage::config, e.what(), ErrorKind::invalid_argument);
    }
    const PipelineResult r = run_pipeline(cfg);
    if (result_json) {
      char hash[17];
      std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(r.config_hash));
      *result_json = dup_string(json{{"index_path", r.index_path},
                                     {"timing", to_json(r.timing)},
                                     {"stages_run", r.stages_run},
                                     {"config_hash", hash}}
                                    .dump());
    }
  });
}

sann_status sann_report(const char* out_dir, char** text) {
  return guarded([&] {
    require(out_dir && text, "null argument");
    try {
      *text = dup_string(report(out_dir));
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(Stage::report, e.what(), kind_of(e));
    }
  });
}

}  // extern "C"
