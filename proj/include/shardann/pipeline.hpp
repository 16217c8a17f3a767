#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shardann/clustering.hpp"
#include "shardann/fleetsched.hpp"
#include "shardann/graphbuild.hpp"
#include "shardann/partitioner.hpp"

namespace shardann {

enum class Stage : int { config = 0, centroids, partition, build, merge, fleet, report };

const char* stage_name(Stage s);

// An error raised inside a pipeline stage; carries the stage for exit codes.
class StageError : public Error {
 public:
  StageError(Stage stage, const std::string& what, ErrorKind kind)
      : Error(std::string(stage_name(stage)) + ": " + what), stage_(stage), kind_(kind) {}
  Stage stage() const { return stage_; }
  ErrorKind kind() const { return kind_; }

 private:
  Stage stage_;
  ErrorKind kind_;
};

struct PipelineConfig {
  std::string data;
  ScalarKind scalar = ScalarKind::f32;
  std::string out_dir;
  std::uint64_t seed = 42;
  int threads = 0;
  std::uint32_t workers = 1;  // concurrent shard builds

  KMeansParams kmeans;  // kmeans.k is overwritten by the sizing below
  std::uint32_t k = 0;  // explicit cluster count, or 0 to size from memory_budget
  std::uint64_t memory_budget = 0;
  PartitionConfig partition;
  BuildParams build;

  // Optional fleet simulation of the shard-build stage.
  std::string fleet;
  std::string estimator;  // estimator JSON; empty runs a micro benchmark
  std::vector<std::uint32_t> micro_sizes;
  Prices prices{4.6, 3.67};
  double shard_cap_bytes = 0.0;  // 0: largest shard's on-disk size
  double bandwidth_bytes_per_s = 1.0e10;
};

PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PipelineConfig& c);
void validate(const PipelineConfig& c);

struct PipelineTiming {
  double partition_s = 0.0;  // centroid training + partitioning
  double build_only_s = 0.0;  // shard-build task spans only
  double merge_s = 0.0;
  double overall_s = 0.0;
};

nlohmann::json to_json(const PipelineTiming& t);

struct PipelineResult {
  std::string index_path;
  PipelineTiming timing;
  std::vector<std::string> stages_run;
  std::uint64_t config_hash = 0;
};

/// centroids -> partition -> shard builds -> merge (-> optional fleet sim).
/// Each stage leaves a stamp holding the hash of the config it depends on;
/// a rerun skips stages whose stamp and outputs are intact.
PipelineResult run_pipeline(const PipelineConfig& cfg);

// Human-readable summary of a pipeline output directory.
std::string report(const std::string& out_dir);

// Stable 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace shardann
