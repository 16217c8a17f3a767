#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shardann/common.hpp"
#include "shardann/graphbuild.hpp"
#include "shardann/vecstore.hpp"

namespace shardann {

struct SearchParams {
  std::uint32_t topk = 10;
  std::uint32_t beam = 64;
};

struct QueryResult {
  std::vector<id_t> ids;
  std::vector<float> distances;  // squared L2, ascending
  std::uint64_t n_distance_computations = 0;
  std::uint64_t expanded = 0;

  friend bool operator==(const QueryResult&, const QueryResult&) = default;
};

// Reusable per-thread scratch for greedy_search.
class SearchScratch {
 public:
  void prepare(std::uint32_t n);
  bool visit(id_t v);  // true on first visit since prepare()

 private:
  std::vector<std::uint32_t> stamp_;
  std::uint32_t epoch_ = 0;
};

/// Best-first search from the entry point. Keeps a pool of the `beam` closest
/// (distance, id) pairs seen; repeatedly expands the closest unexpanded pool
/// entry and stops once every pool entry has been expanded. Every distance
/// evaluation is counted.
QueryResult greedy_search(const GraphIndex& index, const Matrix& data, std::span<const float> q,
                          const SearchParams& params, SearchScratch* scratch = nullptr);

// Exact top-k ids and distances per query (ties to lower id).
struct GroundTruth {
  std::uint32_t nq = 0;
  std::uint32_t k = 0;
  std::vector<id_t> ids;  // nq x k
  std::vector<float> distances;

  std::span<const id_t> ids_of(std::size_t q) const { return {ids.data() + q * k, k}; }
};

GroundTruth exact_knn(const Matrix& data, const Matrix& queries, std::uint32_t k, int threads = 0);

// LE u32 nq, LE u32 k, nq x k u32 ids, nq x k f32 distances.
void write_ground_truth(const std::string& path, const GroundTruth& gt);
GroundTruth read_ground_truth(const std::string& path);

struct EvalReport {
  std::uint32_t topk = 0;
  std::uint32_t beam = 0;
  std::uint32_t queries = 0;
  double recall_at_k = 0.0;
  double qps = 0.0;
  double mean_latency_ms = 0.0;
  double mean_distance_computations = 0.0;
  // Hash over all returned ids; equal runs give equal digests.
  std::uint64_t result_digest = 0;
};

nlohmann::json to_json(const EvalReport& r);

double recall_at_k(std::span<const id_t> retrieved, std::span<const id_t> truth, std::uint32_t k);

EvalReport evaluate(const GraphIndex& index, const Matrix& data, const Matrix& queries,
                    const GroundTruth& gt, const SearchParams& params, int threads = 0);

// One searchable shard for the split-only baseline.
struct ShardSearchUnit {
  GraphIndex graph;
  IdMap idmap;
  Matrix vectors;
};

/// Greedy search in every shard; hits mapped to global ids, deduplicated and
/// re-ranked to topk. Distance counts are summed over shards.
QueryResult split_only_search(const std::vector<ShardSearchUnit>& shards, std::span<const float> q,
                              const SearchParams& params);

}  // namespace shardann
