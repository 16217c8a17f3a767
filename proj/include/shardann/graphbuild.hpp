#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shardann/common.hpp"
#include "shardann/vecstore.hpp"

namespace shardann {

struct BuildParams {
  std::uint32_t degree_R = 64;  // final out-degree
  std::uint32_t degree_L = 128;  // intermediate kNN degree
  std::uint32_t nnd_iters = 12;
  std::uint32_t nnd_sample = 0;  // 0 means degree_L
  std::uint32_t exact_threshold = 2048;
  std::uint64_t seed = 42;
  int threads = 0;
};

void validate(const BuildParams& p);

// Fixed-degree kNN lists, each sorted by (distance, id) and padded at the
// tail with {inf, kSentinel} when a node has fewer than `degree` neighbors.
struct KnnGraph {
  std::uint32_t n = 0;
  std::uint32_t degree = 0;
  std::vector<Neighbor> lists;
  bool exact = false;
  std::uint32_t iterations = 0;
  // Mean neighbor distance after initialization and after each NN-descent round.
  std::vector<double> mean_distance_trace;

  std::span<const Neighbor> row(std::size_t i) const {
    return {lists.data() + i * degree, degree};
  }
};

/// Adjacency over local (shard) or global ids; sentinel-padded rows. Serves as
/// both the per-shard graph and the merged index.
struct GraphIndex {
  std::uint32_t n = 0;
  std::uint32_t degree = 0;
  id_t entry_point = 0;
  std::vector<id_t> adjacency;  // n x degree

  std::span<const id_t> row(std::size_t i) const {
    return {adjacency.data() + i * degree, degree};
  }
  std::span<id_t> row(std::size_t i) { return {adjacency.data() + i * degree, degree}; }

  friend bool operator==(const GraphIndex&, const GraphIndex&) = default;
};

inline constexpr std::size_t kGraphHeaderBytes = 12;

// LE u32 n, LE u32 degree, LE u32 entry point, then n x degree LE u32 ids.
void write_graph(const std::string& path, const GraphIndex& g);
GraphIndex read_graph(const std::string& path);

KnnGraph exact_knn_graph(const Matrix& data, std::uint32_t degree, int threads = 0);

/// Brute force when n <= exact_threshold, NN-descent otherwise. NN-descent
/// proposals are merged under per-node locks into top-L sets keyed by
/// (distance, id); the result is independent of thread interleaving.
KnnGraph build_knn_graph(const Matrix& shard, const BuildParams& params);

// Forward kNN plus reverse edges, deduplicated, truncated to degree_R by
// (distance, id). Entry point is the node nearest the shard mean.
GraphIndex finalize_graph(const KnnGraph& knn, const Matrix& shard, const BuildParams& params);

id_t nearest_to_mean(const Matrix& data);

/// Loads one shard and its idmap, builds, writes the graph to `out_path`.
/// `memory_budget_bytes` of 0 disables the size check.
GraphIndex build_shard(const std::string& shard_path, const std::string& idmap_path,
                       ScalarKind scalar, const BuildParams& params, const std::string& out_path,
                       std::uint64_t memory_budget_bytes = 0);

struct BenchmarkPoint {
  std::uint32_t size = 0;
  double seconds = 0.0;  // mean over repeats
  double stddev = 0.0;
};

// Times throwaway builds on seeded samples of each size.
std::vector<BenchmarkPoint> micro_benchmark(const VectorDataset& ds, const BuildParams& params,
                                            const std::vector<std::uint32_t>& sample_sizes,
                                            std::uint32_t repeats = 1);

}  // namespace shardann
