// Command-line front end over the shardann C API.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "shardann/shardann.h"

namespace {

using json = nlohmann::json;

// Exit codes: 0 success, 2 usage, 10 + stage for failures.
enum ExitCode : int {
  kUsage = 2,
  kConfig = 10,
  kCentroids = 11,
  kPartition = 12,
  kBuild = 13,
  kMerge = 14,
  kFleet = 15,
  kReport = 16,
  kSearch = 17,
  kGroundTruth = 18,
  kCost = 19,
};

struct Failure {
  int code;
};

void check(sann_status s, int code) {
  if (s == SANN_OK) return;
  std::cerr << "error [" << sann_status_name(s) << "]: " << sann_last_error() << '\n';
  throw Failure{code};
}

sann_scalar scalar_of(const std::string& name, int code) {
  sann_scalar s;
  check(sann_parse_scalar(name.c_str(), &s), code);
  return s;
}

std::string take(char* s) {
  std::string out = s ? s : "";
  sann_string_free(s);
  return out;
}

void write_text(const std::string& path, const std::string& text, int code) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    std::cerr << "error: cannot write " << path << '\n';
    throw Failure{code};
  }
  out << text << '\n';
}

std::optional<int> env_workers() {
  const char* v = std::getenv("SHARDANN_WORKERS");
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) return std::nullopt;
  return int(n);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partitioned graph index construction with replica-aware merging"};
  app.require_subcommand(1);

  // train-centroids
  std::string tc_input, tc_out, tc_scalar = "f32";
  sann_kmeans_params kp;
  sann_kmeans_params_default(&kp);
  auto* tc = app.add_subcommand("train-centroids", "Sample the dataset and run k-means");
  tc->add_option("--input", tc_input, "vector file")->required();
  tc->add_option("--scalar", tc_scalar, "u8 or f32");
  tc->add_option("--k", kp.k, "cluster count")->required();
  tc->add_option("--sample", kp.sample_size, "sample size (0: min(n, 256k))");
  tc->add_option("--iters", kp.max_iters, "max Lloyd iterations");
  tc->add_option("--tol", kp.tol, "relative distortion tolerance");
  tc->add_option("--seed", kp.seed);
  tc->add_option("--threads", kp.threads);
  tc->add_option("--out", tc_out, "centroid file")->required();

  // partition
  std::string pt_input, pt_centroids, pt_out, pt_scalar = "f32";
  std::uint64_t pt_budget = 0;
  std::uint32_t pt_k = 0;
  sann_partition_params pp;
  sann_partition_params_default(&pp);
  auto* pt = app.add_subcommand("partition", "Assign vectors to shards with selective replicas");
  pt->add_option("--input", pt_input)->required();
  pt->add_option("--scalar", pt_scalar);
  pt->add_option("--centroids", pt_centroids)->required();
  pt->add_option("--epsilon", pp.epsilon);
  pt->add_option("--omega", pp.omega);
  pt->add_option("--theta0", pp.theta0);
  pt->add_option("--alpha", pp.alpha);
  auto* pt_k_opt = pt->add_option("--k", pt_k, "expected cluster count (checked against the centroids)");
  auto* pt_budget_opt = pt->add_option("--memory-budget", pt_budget, "per-shard bytes; derives capacity");
  pt_k_opt->excludes(pt_budget_opt);
  pt->add_option("--capacity", pp.capacity, "max vectors per shard");
  pt->add_option("--block-size", pp.block_size);
  pt->add_option("--threads", pp.threads);
  pt->add_option("--out-dir", pt_out)->required();

  // build-shard
  std::string bs_shard, bs_idmap, bs_out, bs_scalar = "f32";
  std::uint64_t bs_budget = 0;
  sann_build_params bp;
  sann_build_params_default(&bp);
  auto* bs = app.add_subcommand("build-shard", "Build the graph of one shard");
  bs->add_option("--shard", bs_shard)->required();
  bs->add_option("--idmap", bs_idmap)->required();
  bs->add_option("--scalar", bs_scalar);
  bs->add_option("--degree-r", bp.degree_r);
  bs->add_option("--degree-l", bp.degree_l);
  bs->add_option("--iters", bp.nnd_iters);
  bs->add_option("--sample", bp.nnd_sample);
  bs->add_option("--exact-threshold", bp.exact_threshold);
  bs->add_option("--seed", bp.seed);
  bs->add_option("--threads", bp.threads);
  bs->add_option("--memory-budget", bs_budget);
  bs->add_option("--out", bs_out)->required();

  // merge
  std::string mg_plan, mg_graphs, mg_out;
  std::uint64_t mg_buffer = 0;
  int mg_threads = 0;
  auto* mg = app.add_subcommand("merge", "Union shard graphs into one global index");
  mg->add_option("--plan", mg_plan)->required();
  mg->add_option("--graphs-dir", mg_graphs)->required();
  mg->add_option("--buffer-bytes", mg_buffer);
  mg->add_option("--threads", mg_threads);
  mg->add_option("--out", mg_out)->required();

  // search
  std::string se_index, se_data, se_queries, se_gt, se_report, se_scalar = "f32", se_qscalar;
  std::uint32_t se_topk = 10, se_beam = 64;
  int se_threads = 0;
  auto* se = app.add_subcommand("search", "Batch search and recall report");
  se->add_option("--index", se_index)->required();
  se->add_option("--data", se_data)->required();
  se->add_option("--scalar", se_scalar);
  se->add_option("--queries", se_queries)->required();
  se->add_option("--query-scalar", se_qscalar, "defaults to --scalar");
  se->add_option("--gt", se_gt, "ground truth; computed exactly when omitted");
  se->add_option("--topk", se_topk);
  se->add_option("--beam", se_beam);
  se->add_option("--threads", se_threads);
  se->add_option("--report", se_report, "write the JSON report here");

  // gt
  std::string gt_data, gt_queries, gt_out, gt_scalar = "f32", gt_qscalar;
  std::uint32_t gt_k = 100;
  int gt_threads = 0;
  auto* gt = app.add_subcommand("gt", "Exact nearest neighbors of the queries");
  gt->add_option("--data", gt_data)->required();
  gt->add_option("--scalar", gt_scalar);
  gt->add_option("--queries", gt_queries)->required();
  gt->add_option("--query-scalar", gt_qscalar);
  gt->add_option("--k", gt_k);
  gt->add_option("--threads", gt_threads);
  gt->add_option("--out", gt_out)->required();

  // sched-sim
  std::string ss_plan, ss_fleet, ss_est, ss_out, ss_summary;
  std::uint64_t ss_seed = 0;
  double ss_noise = 1.0, ss_jitter = 0.0;
  auto* ss = app.add_subcommand("sched-sim", "Simulate shard builds on a spot fleet");
  ss->add_option("--tasks", ss_plan, "plan.json")->required();
  ss->add_option("--fleet", ss_fleet, "fleet trace, JSON lines")->required();
  ss->add_option("--estimator", ss_est, "estimator or micro-benchmark JSON")->required();
  ss->add_option("--seed", ss_seed);
  ss->add_option("--noise", ss_noise, "actual / estimated runtime");
  ss->add_option("--jitter", ss_jitter, "relative uniform runtime jitter");
  ss->add_option("--out", ss_out, "event log, JSON lines")->required();
  ss->add_option("--summary", ss_summary, "write the JSON summary here");

  // fleet-gen
  std::string fg_out;
  std::uint64_t fg_seed = 0;
  std::uint32_t fg_spot = 6;
  bool fg_no_od = false;
  auto* fg = app.add_subcommand("fleet-gen", "Write a random spot fleet trace");
  fg->add_option("--seed", fg_seed);
  fg->add_option("--spot", fg_spot, "spot instance count");
  fg->add_flag("--no-on-demand", fg_no_od, "omit the on-demand fallback instance");
  fg->add_option("--out", fg_out)->required();

  // cost
  sann_cost_inputs ci{};
  bool ci_cpu_only = false;
  std::uint64_t tr_shards = 0;
  double tr_cap = 0.0, tr_bw = 1.0e10;
  auto* co = app.add_subcommand("cost", "Construction cost model");
  co->add_option("--cpu-price", ci.cpu_price_per_hour)->required();
  co->add_option("--gpu-price", ci.gpu_price_per_hour);
  co->add_option("--overall-h", ci.overall_construction_h)->required();
  co->add_option("--gpu-active-h", ci.aggregated_gpu_active_h);
  auto* co_transfer = co->add_option("--transfer-h", ci.data_transfer_h);
  co->add_flag("--cpu-only", ci_cpu_only, "CPU baseline without GPU or transfer terms");
  auto* co_shards = co->add_option("--shards", tr_shards, "derive transfer time from shard count");
  co->add_option("--shard-bytes", tr_cap, "per-shard bytes for --shards");
  co->add_option("--bandwidth", tr_bw, "bytes per second for --shards");
  co_shards->excludes(co_transfer);

  // index
  std::string ix_config, ix_data, ix_out, ix_scalar, ix_fleet;
  std::optional<std::uint32_t> ix_k, ix_omega, ix_workers, ix_degree_r, ix_degree_l;
  std::optional<std::uint64_t> ix_seed, ix_budget;
  std::optional<double> ix_eps;
  auto* ix = app.add_subcommand("index", "End-to-end build: centroids, partition, shard builds, merge");
  ix->add_option("--config", ix_config, "pipeline config JSON");
  ix->add_option("--data", ix_data);
  ix->add_option("--scalar", ix_scalar);
  ix->add_option("--out-dir", ix_out);
  ix->add_option("--k", ix_k);
  ix->add_option("--memory-budget", ix_budget);
  ix->add_option("--epsilon", ix_eps);
  ix->add_option("--omega", ix_omega);
  ix->add_option("--degree-r", ix_degree_r);
  ix->add_option("--degree-l", ix_degree_l);
  ix->add_option("--seed", ix_seed);
  ix->add_option("--workers", ix_workers, "concurrent shard builds");
  ix->add_option("--fleet", ix_fleet, "simulate the build stage on this fleet trace");

  // report
  std::string rp_dir;
  auto* rp = app.add_subcommand("report", "Summarize a pipeline output directory");
  rp->add_option("out_dir", rp_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  try {
    if (*tc) {
      check(sann_train_centroids(tc_input.c_str(), scalar_of(tc_scalar, kCentroids), &kp, tc_out.c_str()), kCentroids);
    } else if (*pt) {
      const sann_scalar sc = scalar_of(pt_scalar, kPartition);
      if (pt_budget > 0 && pp.capacity == 0) {
        sann_dataset* ds = nullptr;
        check(sann_dataset_open(pt_input.c_str(), sc, &ds), kPartition);
        const std::uint64_t n = sann_dataset_count(ds);
        const std::uint32_t dim = sann_dataset_dim(ds);
        sann_dataset_free(ds);
        std::uint32_t k = 0;
        check(sann_choose_k(n, dim, sc, pt_budget, 1.0 + pp.theta0, 64, &k, &pp.capacity), kPartition);
      }
      if (pt_k > 0) {
        sann_dataset* cs = nullptr;
        check(sann_dataset_open(pt_centroids.c_str(), SANN_F32, &cs), kPartition);
        const std::uint32_t have = sann_dataset_count(cs);
        sann_dataset_free(cs);
        if (have != pt_k) {
          std::cerr << "error: --k " << pt_k << " but the centroid file holds " << have << '\n';
          return kPartition;
        }
      }
      char* plan = nullptr;
      check(sann_partition(pt_input.c_str(), sc, pt_centroids.c_str(), &pp, pt_out.c_str(), &plan), kPartition);
      const json j = json::parse(take(plan));
      std::cout << "shards " << j.at("k") << "  replicated_proportion " << j.at("replicated_proportion") << '\n';
    } else if (*bs) {
      check(sann_build_shard(bs_shard.c_str(), bs_idmap.c_str(), scalar_of(bs_scalar, kBuild), &bp, bs_out.c_str(),
                             bs_budget),
            kBuild);
    } else if (*mg) {
      check(sann_merge(mg_plan.c_str(), mg_graphs.c_str(), mg_out.c_str(), mg_buffer, mg_threads), kMerge);
      sann_index* idx = nullptr;
      check(sann_index_load(mg_out.c_str(), &idx), kMerge);
      std::uint64_t reachable = 0, components = 0;
      const sann_status s = sann_index_connectivity(idx, &reachable, &components);
      const std::uint32_t n = sann_index_size(idx);
      sann_index_free(idx);
      check(s, kMerge);
      std::cout << "nodes " << n << "  reachable " << reachable << "  components " << components << '\n';
    } else if (*se) {
      const sann_scalar ds = scalar_of(se_scalar, kSearch);
      const sann_scalar qs = se_qscalar.empty() ? ds : scalar_of(se_qscalar, kSearch);
      char* rep = nullptr;
      check(sann_evaluate(se_index.c_str(), se_data.c_str(), ds, se_queries.c_str(), qs,
                          se_gt.empty() ? nullptr : se_gt.c_str(), se_topk, se_beam, se_threads, &rep),
            kSearch);
      const json j = json::parse(take(rep));
      if (!se_report.empty()) write_text(se_report, j.dump(2), kSearch);
      std::cout << j.dump(2) << '\n';
    } else if (*gt) {
      const sann_scalar ds = scalar_of(gt_scalar, kGroundTruth);
      const sann_scalar qs = gt_qscalar.empty() ? ds : scalar_of(gt_qscalar, kGroundTruth);
      check(sann_compute_gt(gt_data.c_str(), ds, gt_queries.c_str(), qs, gt_k, gt_threads, gt_out.c_str()),
            kGroundTruth);
    } else if (*ss) {
      char* summary = nullptr;
      check(sann_sched_sim(ss_plan.c_str(), ss_fleet.c_str(), ss_est.c_str(), ss_seed, ss_noise, ss_jitter,
                           ss_out.c_str(), &summary),
            kFleet);
      const json j = json::parse(take(summary));
      if (!ss_summary.empty()) write_text(ss_summary, j.dump(2), kFleet);
      std::cout << j.dump(2) << '\n';
    } else if (*fg) {
      check(sann_write_random_fleet(fg_out.c_str(), fg_seed, fg_spot, fg_no_od ? 0 : 1), kFleet);
    } else if (*co) {
      ci.cpu_only = ci_cpu_only ? 1 : 0;
      if (*co_shards) {
        double s = 0.0;
        check(sann_transfer_time(tr_shards, tr_cap, tr_bw, &s), kCost);
        ci.data_transfer_h = s / 3600.0;
      }
      sann_cost_report r{};
      check(sann_cost(&ci, &r), kCost);
      std::cout << json{{"inputs",
                         {{"cpu_price_per_hour", ci.cpu_price_per_hour},
                          {"gpu_price_per_hour", ci.gpu_price_per_hour},
                          {"overall_construction_h", ci.overall_construction_h},
                          {"aggregated_gpu_active_h", ci.aggregated_gpu_active_h},
                          {"data_transfer_h", ci.data_transfer_h},
                          {"cpu_only", ci.cpu_only != 0}}},
                        {"report", {{"cpu_cost", r.cpu_cost}, {"gpu_cost", r.gpu_cost}, {"total", r.total}}}}
                       .dump(2)
                << '\n';
    } else if (*ix) {
      json cfg = json::object();
      if (!ix_config.empty()) {
        std::ifstream in(ix_config);
        if (!in) {
          std::cerr << "error: cannot open " << ix_config << '\n';
          return kConfig;
        }
        try {
          cfg = json::parse(in);
        } catch (const json::parse_error& e) {
          std::cerr << "error: " << ix_config << ": " << e.what() << '\n';
          return kConfig;
        }
      }
      if (!ix_data.empty()) cfg["data"] = ix_data;
      if (!ix_scalar.empty()) cfg["scalar"] = ix_scalar;
      if (!ix_out.empty()) cfg["out_dir"] = ix_out;
      if (ix_seed) cfg["seed"] = *ix_seed;
      if (ix_k) cfg["partition"]["k"] = *ix_k;
      if (ix_budget) cfg["partition"]["memory_budget"] = *ix_budget;
      if (ix_eps) cfg["partition"]["epsilon"] = *ix_eps;
      if (ix_omega) cfg["partition"]["omega"] = *ix_omega;
      if (ix_degree_r) cfg["build"]["degree_r"] = *ix_degree_r;
      if (ix_degree_l) cfg["build"]["degree_l"] = *ix_degree_l;
      if (!ix_fleet.empty()) cfg["fleet"]["trace"] = ix_fleet;
      if (ix_workers) {
        cfg["workers"] = *ix_workers;
      } else if (auto w = env_workers()) {
        cfg["workers"] = *w;
      }
      char* result = nullptr;
      const sann_status s = sann_run_pipeline(cfg.dump().c_str(), &result);
      if (s != SANN_OK) {
        const sann_stage st = sann_last_error_stage();
        std::cerr << "error [" << sann_status_name(s) << "] in stage " << sann_stage_name(st) << ": "
                  << sann_last_error() << '\n';
        return st == SANN_STAGE_NONE ? kConfig : 10 + int(st);
      }
      std::cout << json::parse(take(result)).dump(2) << '\n';
    } else if (*rp) {
      char* text = nullptr;
      check(sann_report(rp_dir.c_str(), &text), kReport);
      std::cout << take(text);
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return 0;
}
