#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "shardann/common.hpp"
#include "shardann/graphbuild.hpp"
#include "shardann/partitioner.hpp"
#include "shardann/vecstore.hpp"

namespace shardann {

struct Home {
  std::uint32_t shard = 0;
  id_t local = 0;
  friend bool operator==(const Home&, const Home&) = default;
};

// global id -> every (shard, local id) holding it, in CSR form.
struct InvertedIdMap {
  std::vector<std::uint64_t> offsets;  // n + 1
  std::vector<Home> homes;

  std::size_t n() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::span<const Home> of(id_t g) const {
    return {homes.data() + offsets[g], std::size_t(offsets[g + 1] - offsets[g])};
  }
};

/// Homes of each global id are listed by ascending shard. Throws when an id in
/// [0, n) is uncovered, out of range, or repeated within a shard.
InvertedIdMap invert_idmaps(const std::vector<IdMap>& idmaps, std::uint32_t n);

inline constexpr std::size_t kDefaultMergeBufferBytes = std::size_t(64) << 20;

/// Random-access row reader over a file of fixed-width rows. Holds one aligned
/// block of rows; a read outside it reloads the block containing the row.
class BufferedRowReader {
 public:
  BufferedRowReader(std::string path, std::size_t header_bytes, std::size_t row_bytes,
                    std::uint64_t rows, std::size_t buffer_bytes);

  // Pointer stays valid until the next call.
  const char* row(std::uint64_t index);

  std::uint64_t rows() const { return rows_; }
  std::uint64_t loads() const { return loads_; }
  std::uint64_t block_rows() const { return block_rows_; }
  std::uint64_t lo() const { return lo_; }
  std::uint64_t hi() const { return hi_; }

 private:
  std::string path_;
  std::size_t header_bytes_;
  std::size_t row_bytes_;
  std::uint64_t rows_;
  std::uint64_t block_rows_;
  std::uint64_t lo_ = 0, hi_ = 0;
  std::uint64_t loads_ = 0;
  std::ifstream in_;
  std::vector<char> buffer_;
};

/// Per-shard buffered view of adjacency rows and vectors.
class ShardBufferCache {
 public:
  ShardBufferCache(const std::string& graph_path, const std::string& vectors_path,
                   ScalarKind scalar, std::size_t buffer_bytes = kDefaultMergeBufferBytes);

  std::span<const id_t> read_row(id_t local);
  // f32-promoted vector of a local id, copied into `out`.
  void read_vector(id_t local, std::span<float> out);

  std::uint32_t size() const { return n_; }
  std::uint32_t degree() const { return degree_; }
  std::uint32_t dim() const { return dim_; }
  id_t entry_point() const { return entry_; }
  const BufferedRowReader& graph_reader() const { return graph_; }

 private:
  std::uint32_t n_ = 0, degree_ = 0, dim_ = 0;
  id_t entry_ = 0;
  ScalarKind scalar_;
  BufferedRowReader graph_;
  BufferedRowReader vectors_;
};

// Graph-only convenience for buffered_read_row.
std::span<const id_t> buffered_read_row(ShardBufferCache& cache, id_t local);

struct ShardFiles {
  std::string graph;
  std::string vectors;
  std::string idmap;
};

struct MergeOptions {
  std::size_t buffer_bytes = kDefaultMergeBufferBytes;
  int threads = 0;
};

/// Edge-union merge. For each global id, unions its rows from every home shard
/// (mapped to global ids), drops self and duplicates, and keeps the degree_R
/// nearest by recomputed distance (ties to lower id) when the union is larger.
/// Entry point is the mapped entry of the largest shard.
GraphIndex merge(const std::vector<ShardFiles>& shards, ScalarKind scalar, std::uint32_t n,
                 const MergeOptions& opts = {});

// Convenience over a plan.json: graphs are <graphs_dir>/shard_<i>.graph.
GraphIndex merge_plan(const std::string& plan_path, const std::string& graphs_dir,
                      const std::string& out_path, const MergeOptions& opts = {});

std::string shard_graph_name(std::uint32_t shard_id);

struct ConnectivityReport {
  std::uint64_t reachable = 0;  // from the entry point along directed edges
  std::uint64_t components = 0;  // weakly connected
};

ConnectivityReport connectivity_report(const GraphIndex& index);

}  // namespace shardann
