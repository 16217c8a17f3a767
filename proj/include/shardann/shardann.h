#ifndef SHARDANN_H
#define SHARDANN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SANN_API __declspec(dllexport)
#else
#define SANN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  SANN_OK = 0,
  SANN_ERR_IO = 1,
  SANN_ERR_FORMAT = 2,
  SANN_ERR_INVALID_ARGUMENT = 3,
  SANN_ERR_CAPACITY = 4,
  SANN_ERR_STARVATION = 5,
  SANN_ERR_INTERNAL = 6
} sann_status;

/* Pipeline stages, used to tag failures of sann_run_pipeline. */
typedef enum {
  SANN_STAGE_NONE = -1,
  SANN_STAGE_CONFIG = 0,
  SANN_STAGE_CENTROIDS = 1,
  SANN_STAGE_PARTITION = 2,
  SANN_STAGE_BUILD = 3,
  SANN_STAGE_MERGE = 4,
  SANN_STAGE_FLEET = 5,
  SANN_STAGE_REPORT = 6
} sann_stage;

typedef enum { SANN_U8 = 0, SANN_F32 = 1 } sann_scalar;

/* Message and stage of the last failure on the calling thread. */
SANN_API const char* sann_last_error(void);
SANN_API sann_stage sann_last_error_stage(void);
SANN_API const char* sann_status_name(sann_status s);
SANN_API const char* sann_stage_name(sann_stage s);

/* Strings returned through char** out-parameters are owned by the caller. */
SANN_API void sann_string_free(char* s);

SANN_API sann_status sann_parse_scalar(const char* name, sann_scalar* out);

/* ---- vector files ---- */

typedef struct sann_dataset sann_dataset;

SANN_API sann_status sann_dataset_open(const char* path, sann_scalar scalar, sann_dataset** out);
SANN_API void sann_dataset_free(sann_dataset* ds);
SANN_API uint32_t sann_dataset_count(const sann_dataset* ds);
SANN_API uint32_t sann_dataset_dim(const sann_dataset* ds);
/* Copies rows [first, first + rows) into out (rows x dim floats). */
SANN_API sann_status sann_dataset_read_rows(const sann_dataset* ds, uint64_t first, uint32_t rows, float* out);
SANN_API sann_status sann_write_vectors(const char* path, const float* data, uint32_t n, uint32_t dim,
                                        sann_scalar scalar);

/* ---- centroids and partitioning ---- */

typedef struct {
  uint32_t k;
  uint32_t sample_size; /* 0: min(n, 256 k) */
  uint32_t max_iters;
  uint64_t seed;
  double tol;
  int threads; /* 0: environment or hardware default */
} sann_kmeans_params;

SANN_API void sann_kmeans_params_default(sann_kmeans_params* p);
SANN_API sann_status sann_train_centroids(const char* data_path, sann_scalar scalar,
                                          const sann_kmeans_params* params, const char* out_path);

typedef struct {
  double epsilon;
  uint32_t omega;
  double theta0;
  double alpha;
  uint32_t capacity; /* 0: derived from n, k and theta0 */
  uint32_t block_size;
  int threads;
  uint64_t scramble_seed; /* nonzero shuffles the within-shard order */
} sann_partition_params;

SANN_API void sann_partition_params_default(sann_partition_params* p);
SANN_API sann_status sann_choose_k(uint64_t n, uint32_t dim, sann_scalar scalar, uint64_t memory_budget,
                                   double expected_dup, uint32_t graph_degree, uint32_t* k,
                                   uint32_t* capacity);
/* Writes shard files and plan.json under out_dir. plan_json may be NULL. */
SANN_API sann_status sann_partition(const char* data_path, sann_scalar scalar, const char* centroids_path,
                                    const sann_partition_params* params, const char* out_dir,
                                    char** plan_json);

/* ---- shard graphs and merging ---- */

typedef struct {
  uint32_t degree_r;
  uint32_t degree_l;
  uint32_t nnd_iters;
  uint32_t nnd_sample; /* 0: degree_l */
  uint32_t exact_threshold;
  uint64_t seed;
  int threads;
} sann_build_params;

SANN_API void sann_build_params_default(sann_build_params* p);
SANN_API sann_status sann_build_shard(const char* shard_path, const char* idmap_path, sann_scalar scalar,
                                      const sann_build_params* params, const char* out_path,
                                      uint64_t memory_budget);
/* Times shard builds on leading prefixes of the dataset; JSON array of
   {size, seconds, stddev}. */
SANN_API sann_status sann_micro_benchmark(const char* data_path, sann_scalar scalar,
                                          const sann_build_params* params, const uint32_t* sizes,
                                          size_t n_sizes, uint32_t repeats, char** result_json);
SANN_API sann_status sann_merge(const char* plan_path, const char* graphs_dir, const char* out_path,
                                uint64_t buffer_bytes, int threads);

/* ---- merged index and search ---- */

typedef struct sann_index sann_index;

SANN_API sann_status sann_index_load(const char* path, sann_index** out);
SANN_API void sann_index_free(sann_index* idx);
SANN_API uint32_t sann_index_size(const sann_index* idx);
SANN_API uint32_t sann_index_degree(const sann_index* idx);
SANN_API uint32_t sann_index_entry_point(const sann_index* idx);
/* Copies degree ids (sentinel 0xFFFFFFFF padded) of node into out. */
SANN_API sann_status sann_index_neighbors(const sann_index* idx, uint32_t node, uint32_t* out);
SANN_API sann_status sann_index_connectivity(const sann_index* idx, uint64_t* reachable, uint64_t* components);
/* Loads the vectors searched against; must match the index size. */
SANN_API sann_status sann_index_attach_data(sann_index* idx, const sann_dataset* ds);
/* Writes up to topk ids and squared distances; returns the count in *found. */
SANN_API sann_status sann_index_search(const sann_index* idx, const float* query, uint32_t dim, uint32_t topk,
                                       uint32_t beam, uint32_t* ids, float* distances, uint32_t* found,
                                       uint64_t* distance_computations);

SANN_API sann_status sann_compute_gt(const char* data_path, sann_scalar data_scalar, const char* queries_path,
                                     sann_scalar query_scalar, uint32_t k, int threads, const char* out_path);
/* Batch evaluation against a ground-truth file; JSON EvalReport. A NULL
   gt_path computes exact neighbors on the fly. */
SANN_API sann_status sann_evaluate(const char* index_path, const char* data_path, sann_scalar data_scalar,
                                   const char* queries_path, sann_scalar query_scalar, const char* gt_path,
                                   uint32_t topk, uint32_t beam, int threads, char** report_json);

/* ---- fleet scheduling and cost ---- */

SANN_API sann_status sann_fit_estimator(const double* sizes, const double* seconds, size_t n, double* slope,
                                        double* intercept);
SANN_API sann_status sann_write_random_fleet(const char* path, uint64_t seed, uint32_t spot_instances,
                                             int on_demand_fallback);
/* Simulates the shard builds listed in plan_path over the fleet trace. Writes
   the JSON-lines event log to events_path and returns a JSON summary. */
SANN_API sann_status sann_sched_sim(const char* plan_path, const char* fleet_path, const char* estimator_path,
                                    uint64_t seed, double noise_factor, double noise_jitter,
                                    const char* events_path, char** summary_json);

typedef struct {
  double cpu_price_per_hour;
  double gpu_price_per_hour;
  double overall_construction_h;
  double aggregated_gpu_active_h;
  double data_transfer_h;
  int cpu_only;
} sann_cost_inputs;

typedef struct {
  double cpu_cost;
  double gpu_cost;
  double total;
} sann_cost_report;

SANN_API sann_status sann_cost(const sann_cost_inputs* in, sann_cost_report* out);
SANN_API sann_status sann_transfer_time(uint64_t num_shards, double shard_cap_bytes, double bandwidth_bytes_per_s,
                                        double* seconds);

/* ---- end-to-end ---- */

/* config_json is a pipeline config document; result_json receives
   {index_path, timing, stages_run, config_hash}. */
SANN_API sann_status sann_run_pipeline(const char* config_json, char** result_json);
SANN_API sann_status sann_report(const char* out_dir, char** text);

#ifdef __cplusplus
}
#endif

#endif
