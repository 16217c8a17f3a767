#include "shardann/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "shardann/merger.hpp"

namespace shardann {

namespace fs = std::filesystem;
using json = nlohmann::json;

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::config: return "config";
    case Stage::centroids: return "centroids";
    case Stage::partition: return "partition";
    case Stage::build: return "build";
    case Stage::merge: return "merge";
    case Stage::fleet: return "fleet";
    case Stage::report: return "report";
  }
  return "unknown";
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

PipelineConfig pipeline_config_from_json(const json& j) {
  try {
    PipelineConfig c;
    c.data = j.at("data").get<std::string>();
    c.scalar = parse_scalar(j.value("scalar", std::string("f32")));
    c.out_dir = j.at("out_dir").get<std::string>();
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    c.workers = j.value("workers", c.workers);
    if (j.contains("kmeans")) {
      const auto& k = j["kmeans"];
      c.kmeans.sample_size = k.value("sample_size", c.kmeans.sample_size);
      c.kmeans.max_iters = k.value("max_iters", c.kmeans.max_iters);
      c.kmeans.tol = k.value("tol", c.kmeans.tol);
    }
    if (j.contains("partition")) {
      const auto& p = j["partition"];
      c.k = p.value("k", c.k);
      c.memory_budget = p.value("memory_budget", c.memory_budget);
      c.partition.epsilon = p.value("epsilon", c.partition.epsilon);
      c.partition.omega = p.value("omega", c.partition.omega);
      c.partition.theta0 = p.value("theta0", c.partition.theta0);
      c.partition.alpha = p.value("alpha", c.partition.alpha);
      c.partition.capacity = p.value("capacity", c.partition.capacity);
      c.partition.block_size = p.value("block_size", c.partition.block_size);
      c.partition.scramble_seed = p.value("scramble_seed", c.partition.scramble_seed);
    }
    if (j.contains("build")) {
      const auto& b = j["build"];
      c.build.degree_R = b.value("degree_r", c.build.degree_R);
      c.build.degree_L = b.value("degree_l", c.build.degree_L);
      c.build.nnd_iters = b.value("nnd_iters", c.build.nnd_iters);
      c.build.nnd_sample = b.value("nnd_sample", c.build.nnd_sample);
      c.build.exact_threshold = b.value("exact_threshold", c.build.exact_threshold);
    }
    if (j.contains("fleet")) {
      const auto& f = j["fleet"];
      c.fleet = f.value("trace", std::string());
      c.estimator = f.value("estimator", std::string());
      c.micro_sizes = f.value("micro_sizes", std::vector<std::uint32_t>{});
      c.prices.cpu_per_hour = f.value("cpu_price", c.prices.cpu_per_hour);
      c.prices.gpu_per_hour = f.value("gpu_price", c.prices.gpu_per_hour);
      c.shard_cap_bytes = f.value("shard_cap_bytes", c.shard_cap_bytes);
      c.bandwidth_bytes_per_s = f.value("bandwidth_bytes_per_s", c.bandwidth_bytes_per_s);
    }
    c.kmeans.seed = c.seed;
    c.build.seed = c.seed;
    return c;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("pipeline config: ") + e.what());
  }
}

json to_json(const PipelineConfig& c) {
  return {{"data", c.data},
          {"scalar", scalar_name(c.scalar)},
          {"out_dir", c.out_dir},
          {"seed", c.seed},
          {"threads", c.threads},
          {"workers", c.workers},
          {"kmeans",
           {{"sample_size", c.kmeans.sample_size},
            {"max_iters", c.kmeans.max_iters},
            {"tol", c.kmeans.tol}}},
          {"partition",
           {{"k", c.k},
            {"memory_budget", c.memory_budget},
            {"epsilon", c.partition.epsilon},
            {"omega", c.partition.omega},
            {"theta0", c.partition.theta0},
            {"alpha", c.partition.alpha},
            {"capacity", c.partition.capacity},
            {"block_size", c.partition.block_size},
            {"scramble_seed", c.partition.scramble_seed}}},
          {"build",
           {{"degree_r", c.build.degree_R},
            {"degree_l", c.build.degree_L},
            {"nnd_iters", c.build.nnd_iters},
            {"nnd_sample", c.build.nnd_sample},
            {"exact_threshold", c.build.exact_threshold}}},
          {"fleet",
           {{"trace", c.fleet},
            {"estimator", c.estimator},
            {"micro_sizes", c.micro_sizes},
            {"cpu_price", c.prices.cpu_per_hour},
            {"gpu_price", c.prices.gpu_per_hour},
            {"shard_cap_bytes", c.shard_cap_bytes},
            {"bandwidth_bytes_per_s", c.bandwidth_bytes_per_s}}}};
}

void validate(const PipelineConfig& c) {
  if (c.data.empty() || !fs::exists(c.data)) throw IoError("dataset not found: " + c.data);
  if (c.out_dir.empty()) throw InvalidArgument("out_dir is required");
  if (c.k == 0 && c.memory_budget == 0) throw InvalidArgument("give either k or memory_budget");
  if (c.workers == 0) throw InvalidArgument("workers must be >= 1");
  if (!c.fleet.empty() && !fs::exists(c.fleet)) throw IoError("fleet trace not found: " + c.fleet);
  validate(c.build);
  PartitionConfig p = c.partition;
  if (p.capacity == 0) p.capacity = 1;
  validate(p);
}

json to_json(const PipelineTiming& t) {
  return {{"partition_s", t.partition_s},
          {"build_only_s", t.build_only_s},
          {"merge_s", t.merge_s},
          {"overall_s", t.overall_s}};
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& p, const json& j) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

std::string hex64(std::uint64_t h) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

class StageRunner {
 public:
  StageRunner(fs::path dir, std::vector<std::string>& ran) : dir_(std::move(dir)), ran_(ran) {}

  // Runs `body` unless the stamp for `stage` matches `hash` and every output
  // exists. Returns true when the body ran.
  template <typename F>
  bool run(Stage stage, std::uint64_t hash, const std::vector<fs::path>& outputs, F&& body) {
    const fs::path stamp = dir_ / (std::string(".stage_") + stage_name(stage));
    if (fresh(stamp, hash, outputs)) return false;
    fs::remove(stamp);
    try {
      body();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(stage, e.what(), kind_of(e));
    }
    std::ofstream(stamp, std::ios::trunc) << hex64(hash) << '\n';
    ran_.push_back(stage_name(stage));
    return true;
  }

 private:
  static bool fresh(const fs::path& stamp, std::uint64_t hash, const std::vector<fs::path>& outputs) {
    std::ifstream in(stamp);
    std::string recorded;
    if (!(in >> recorded) || recorded != hex64(hash)) return false;
    for (const auto& o : outputs) {
      if (!fs::exists(o)) return false;
    }
    return true;
  }

  fs::path dir_;
  std::vector<std::string>& ran_;
};

std::uint64_t chain(std::uint64_t upstream, const json& section) {
  return fnv1a64(hex64(upstream) + section.dump());
}

std::vector<fs::path> shard_graph_paths(const fs::path& graphs, const PartitionPlan& plan) {
  std::vector<fs::path> out;
  for (const auto& s : plan.shards) {
    if (s.count > 0) out.push_back(graphs / shard_graph_name(s.shard_id));
  }
  return out;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg_in) {
  const auto t_start = Clock::now();
  PipelineConfig cfg = cfg_in;
  try {
    validate(cfg);
  } catch (const std::exception& e) {
    throw StageError(Stage::config, e.what(), kind_of(e));
  }

  const fs::path out(cfg.out_dir);
  const fs::path shards_dir = out / "shards";
  const fs::path graphs_dir = out / "graphs";
  fs::create_directories(shards_dir);
  fs::create_directories(graphs_dir);

  PipelineResult result;
  StageRunner runner(out, result.stages_run);
  const json cj = to_json(cfg);
  const json data_id = {{"data", cfg.data},
                        {"scalar", scalar_name(cfg.scalar)},
                        {"size", fs::file_size(cfg.data)},
                        {"mtime", fs::last_write_time(cfg.data).time_since_epoch().count()}};
  json hashed = cj;
  hashed.erase("out_dir");
  hashed.erase("threads");
  hashed.erase("workers");
  result.config_hash = fnv1a64(hashed.dump() + data_id.dump());
  write_json_file(out / "config.json", {{"config", cj}, {"config_hash", hex64(result.config_hash)}});

  PipelineTiming timing;
  if (fs::exists(out / "timing.json")) {
    const json prev = read_json_file(out / "timing.json");
    timing.partition_s = prev.value("partition_s", 0.0);
    timing.build_only_s = prev.value("build_only_s", 0.0);
    timing.merge_s = prev.value("merge_s", 0.0);
  }
  double stage_time_this_run = 0.0;

  const VectorDataset ds = [&] {
    try {
      return open_dataset(cfg.data, cfg.scalar);
    } catch (const std::exception& e) {
      throw StageError(Stage::config, e.what(), kind_of(e));
    }
  }();

  std::uint32_t k = cfg.k;
  if (k == 0) {
    try {
      const ShardSizing sizing = choose_k(ds.count, ds.dim, ds.scalar, cfg.memory_budget,
                                          1.0 + cfg.partition.theta0, cfg.build.degree_R);
      k = sizing.k;
      if (cfg.partition.capacity == 0) cfg.partition.capacity = sizing.capacity;
    } catch (const std::exception& e) {
      throw StageError(Stage::config, e.what(), kind_of(e));
    }
  }
  if (k > ds.count) k = std::max<std::uint32_t>(1, ds.count);
  cfg.kmeans.k = k;
  cfg.kmeans.threads = cfg.threads;
  cfg.partition.threads = cfg.threads;

  // Centroids.
  const fs::path centroids_path = out / "centroids.bin";
  const std::uint64_t h_centroids =
      chain(fnv1a64(data_id.dump()), {cj["kmeans"], k, cfg.seed});
  auto t0 = Clock::now();
  bool partition_stage_ran = false;
  partition_stage_ran |= runner.run(Stage::centroids, h_centroids, {centroids_path}, [&] {
    const std::uint32_t m = cfg.kmeans.sample_size ? std::min(cfg.kmeans.sample_size, ds.count)
                                                   : default_sample_size(ds.count, k);
    const Matrix sample = sample_vectors(ds, m, cfg.seed, cfg.partition.block_size);
    save_centroids(centroids_path.string(), train_kmeans(sample, cfg.kmeans));
  });

  // Partition.
  const std::uint64_t h_partition = chain(h_centroids, cj["partition"]);
  const fs::path plan_path = shards_dir / "plan.json";
  partition_stage_ran |= runner.run(Stage::partition, h_partition, {plan_path}, [&] {
    partition(ds, load_centroids(centroids_path.string()), cfg.partition, shards_dir.string());
  });
  if (partition_stage_ran) {
    timing.partition_s = seconds_since(t0);
    stage_time_this_run += timing.partition_s;
  }

  PartitionPlan plan;
  try {
    plan = load_plan(plan_path.string());
  } catch (const std::exception& e) {
    throw StageError(Stage::partition, e.what(), kind_of(e));
  }

  // Shard builds: `workers` concurrent single-shard tasks.
  const std::uint64_t h_build = chain(h_partition, cj["build"]);
  t0 = Clock::now();
  if (runner.run(Stage::build, h_build, shard_graph_paths(graphs_dir, plan), [&] {
        std::vector<const ShardManifest*> todo;
        for (const auto& s : plan.shards) {
          if (s.count == 1) {
            // A lone vector has no neighbors; emit its trivial graph directly.
            GraphIndex g;
            g.n = 1;
            g.degree = cfg.build.degree_R;
            g.adjacency.assign(g.degree, kSentinel);
            write_graph((graphs_dir / shard_graph_name(s.shard_id)).string(), g);
          } else if (s.count > 1) {
            todo.push_back(&s);
          }
        }
        const std::uint32_t workers = std::min<std::uint32_t>(cfg.workers, std::uint32_t(todo.size()));
        BuildParams bp = cfg.build;
        bp.threads = std::max(1, resolve_threads(cfg.threads) / int(std::max(1u, workers)));
        std::atomic<std::size_t> next{0};
        std::vector<std::string> errors(todo.size());
        auto worker = [&] {
          for (std::size_t i = next++; i < todo.size(); i = next++) {
            const ShardManifest& s = *todo[i];
            try {
              build_shard((shards_dir / s.vectors_file).string(), (shards_dir / s.idmap_file).string(),
                          plan.scalar, bp, (graphs_dir / shard_graph_name(s.shard_id)).string());
            } catch (const std::exception& e) {
              errors[i] = "shard " + std::to_string(s.shard_id) + ": " + e.what();
            }
          }
        };
        std::vector<std::thread> pool;
        for (std::uint32_t w = 1; w < workers; ++w) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();
        for (const auto& e : errors) {
          if (!e.empty()) throw Error(e);
        }
      })) {
    timing.build_only_s = seconds_since(t0);
    stage_time_this_run += timing.build_only_s;
  }

  // Merge.
  const std::uint64_t h_merge = chain(h_build, json::object());
  const fs::path index_path = out / "merged.index";
  result.index_path = index_path.string();
  t0 = Clock::now();
  if (runner.run(Stage::merge, h_merge, {index_path, out / "merge.json"}, [&] {
        MergeOptions mo;
        mo.threads = cfg.threads;
        const GraphIndex g = merge_plan(plan_path.string(), graphs_dir.string(), index_path.string(), mo);
        const ConnectivityReport cr = connectivity_report(g);
        write_json_file(out / "merge.json", {{"n", g.n},
                                             {"degree", g.degree},
                                             {"entry_point", g.entry_point},
                                             {"reachable", cr.reachable},
                                             {"components", cr.components}});
      })) {
    timing.merge_s = seconds_since(t0);
    stage_time_this_run += timing.merge_s;
  }

  // Optional fleet simulation and cost model.
  if (!cfg.fleet.empty()) {
    const std::uint64_t h_fleet =
        chain(h_merge, {cj["fleet"], fnv1a64(std::to_string(fs::file_size(cfg.fleet)))});
    runner.run(Stage::fleet, h_fleet, {out / "cost.json", out / "events.jsonl"}, [&] {
      RuntimeEstimator est;
      json micro = json::object();
      if (!cfg.estimator.empty()) {
        est = load_estimator(cfg.estimator);
      } else {
        std::vector<std::uint32_t> sizes = cfg.micro_sizes;
        if (sizes.empty()) {
          const std::uint32_t a = std::max<std::uint32_t>(cfg.build.degree_L + 2, ds.count / 64);
          sizes = {std::min(a, ds.count), std::min(2 * a, ds.count)};
        }
        const auto points = micro_benchmark(ds, cfg.build, sizes, 1);
        std::vector<std::pair<double, double>> samples;
        json arr = json::array();
        for (const auto& p : points) {
          samples.emplace_back(double(p.size), p.seconds);
          arr.push_back({{"size", p.size}, {"seconds", p.seconds}, {"stddev", p.stddev}});
        }
        est = fit_estimator(samples);
        micro["samples"] = arr;
      }
      micro["slope"] = est.slope;
      micro["intercept"] = est.intercept;
      write_json_file(out / "micro.json", micro);

      std::vector<std::pair<std::uint32_t, std::uint64_t>> sizes;
      double largest_bytes = 0.0;
      for (const auto& s : plan.shards) {
        if (s.count == 0) continue;
        sizes.emplace_back(s.shard_id, s.count);
        largest_bytes = std::max(largest_bytes, double(fs::file_size(shards_dir / s.vectors_file)));
      }
      SimConfig sc;
      sc.seed = cfg.seed;
      const SimulationResult sim = simulate(make_tasks(sizes, est), read_fleet(cfg.fleet), sc);
      write_event_log((out / "events.jsonl").string(), sim);
      const double cap = cfg.shard_cap_bytes > 0.0 ? cfg.shard_cap_bytes : largest_bytes;
      const double transfer_h = transfer_time(sizes.size(), cap, cfg.bandwidth_bytes_per_s) / 3600.0;
      CostInputs used;
      const CostReport rep = pipeline_cost_report(sim, timing.partition_s / 3600.0,
                                                  timing.merge_s / 3600.0, cfg.prices, transfer_h, &used);
      write_json_file(out / "cost.json", {{"inputs", to_json(used)},
                                          {"report", to_json(rep)},
                                          {"makespan_s", double(sim.makespan_ms) / 1000.0},
                                          {"kills", sim.kills}});
    });
  }

  const double wall = seconds_since(t_start);
  timing.overall_s = timing.partition_s + timing.build_only_s + timing.merge_s +
                     std::max(0.0, wall - stage_time_this_run);
  write_json_file(out / "timing.json", to_json(timing));
  result.timing = timing;
  return result;
}

std::string report(const std::string& out_dir) {
  const fs::path out(out_dir);
  for (const char* f : {"timing.json", "shards/plan.json"}) {
    if (!fs::exists(out / f)) throw IoError("missing pipeline artifact " + (out / f).string());
  }
  const json timing = read_json_file(out / "timing.json");
  const PartitionPlan plan = load_plan((out / "shards" / "plan.json").string());

  std::ostringstream s;
  s << std::fixed << std::setprecision(3);
  s << "== timing (s) ==\n";
  for (const char* key : {"partition_s", "build_only_s", "merge_s", "overall_s"}) {
    s << "  " << std::left << std::setw(14) << key << timing.value(key, 0.0) << '\n';
  }
  s << "== partition ==\n";
  s << "  vectors               " << plan.n << '\n';
  s << "  shards                " << plan.k << '\n';
  s << "  replicated_proportion " << std::setprecision(6) << plan.replicated_proportion << '\n';
  s << "  replica_ratio         " << plan.replica_ratio << '\n' << std::setprecision(3);
  s << "  multiplicity          ";
  for (std::size_t m = 1; m < plan.multiplicity_histogram.size(); ++m) {
    s << m << ":" << plan.multiplicity_histogram[m] << (m + 1 < plan.multiplicity_histogram.size() ? " " : "");
  }
  s << "\n  shard sizes           ";
  std::uint32_t lo = UINT32_MAX, hi = 0;
  std::uint64_t sum = 0;
  for (const auto& sh : plan.shards) {
    lo = std::min(lo, sh.count);
    hi = std::max(hi, sh.count);
    sum += sh.count;
  }
  s << "min " << (plan.shards.empty() ? 0 : lo) << " / mean "
    << (plan.shards.empty() ? 0.0 : double(sum) / double(plan.shards.size())) << " / max " << hi << '\n';
  if (fs::exists(out / "merge.json")) {
    const json m = read_json_file(out / "merge.json");
    s << "== merged index ==\n";
    s << "  reachable             " << m.value("reachable", 0) << " / " << m.value("n", 0) << '\n';
    s << "  components            " << m.value("components", 0) << '\n';
  }
  if (fs::exists(out / "cost.json")) {
    const json c = read_json_file(out / "cost.json");
    const auto& in = c.at("inputs");
    const auto& r = c.at("report");
    s << "== cost ==\n";
    s << "  overall_h             " << std::setprecision(6) << in.value("overall_construction_h", 0.0) << '\n';
    s << "  gpu_active_h          " << in.value("aggregated_gpu_active_h", 0.0) << '\n';
    s << "  transfer_h            " << in.value("data_transfer_h", 0.0) << '\n';
    s << "  cpu_cost              " << r.value("cpu_cost", 0.0) << '\n';
    s << "  gpu_cost              " << r.value("gpu_cost", 0.0) << '\n';
    s << "  total                 " << r.value("total", 0.0) << '\n';
    s << "  kills                 " << c.value("kills", 0) << '\n';
  }
  return s.str();
}

}  // namespace shardann
