#pragma once

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "shardann/graphbuild.hpp"
#include "shardann/merger.hpp"
#include "shardann/partitioner.hpp"

namespace testkit {

// In-memory union-and-truncate merge over whole shard graphs and the full
// dataset. Shares no code with the streaming merger beyond file readers.
inline shardann::GraphIndex oracle_merge(const std::string& plan_path, const std::string& graphs_dir,
                                         const shardann::Matrix& data) {
  using namespace shardann;
  namespace fs = std::filesystem;
  const PartitionPlan plan = load_plan(plan_path);
  const fs::path base = fs::path(plan_path).parent_path();
  std::vector<std::set<id_t>> unions(plan.n);
  std::uint32_t R = 0;
  std::uint32_t best_count = 0;
  id_t entry = 0;
  for (const auto& s : plan.shards) {
    if (s.count == 0) continue;
    const GraphIndex g = read_graph((fs::path(graphs_dir) / shard_graph_name(s.shard_id)).string());
    const IdMap m = read_idmap((base / s.idmap_file).string());
    R = g.degree;
    if (g.n > best_count) {
      best_count = g.n;
      entry = m[g.entry_point];
    }
    for (std::size_t l = 0; l < g.n; ++l) {
      for (id_t v : g.row(l)) {
        if (v == kSentinel) break;
        if (m[v] != m[l]) unions[m[l]].insert(m[v]);
      }
    }
  }
  GraphIndex out;
  out.n = plan.n;
  out.degree = R;
  out.entry_point = entry;
  out.adjacency.assign(std::size_t(plan.n) * R, kSentinel);
  for (id_t g = 0; g < plan.n; ++g) {
    std::vector<id_t> keep(unions[g].begin(), unions[g].end());
    if (keep.size() > R) {
      std::vector<std::pair<float, id_t>> scored;
      for (id_t v : keep) scored.push_back({squared_l2(data.row(g), data.row(v)), v});
      std::sort(scored.begin(), scored.end());
      keep.clear();
      for (std::uint32_t i = 0; i < R; ++i) keep.push_back(scored[i].second);
    }
    std::copy(keep.begin(), keep.end(), out.row(g).begin());
  }
  return out;
}

// Rewrites a shard under a random relabeling of its local ids: vectors,
// idmap and graph rows move together and neighbor ids are renamed.
inline void permute_shard(const std::string& graph_in, const std::string& vectors_in, const std::string& idmap_in,
                          shardann::ScalarKind scalar, const std::string& graph_out, const std::string& vectors_out,
                          const std::string& idmap_out, std::uint64_t seed) {
  using namespace shardann;
  const GraphIndex g = read_graph(graph_in);
  const Matrix v = read_all(open_dataset(vectors_in, scalar));
  const IdMap m = read_idmap(idmap_in);
  std::vector<id_t> to_new(g.n);
  std::iota(to_new.begin(), to_new.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(to_new.begin(), to_new.end(), rng);

  GraphIndex pg;
  pg.n = g.n;
  pg.degree = g.degree;
  pg.entry_point = to_new[g.entry_point];
  pg.adjacency.assign(g.adjacency.size(), kSentinel);
  Matrix pv(v.rows, v.cols);
  IdMap pm;
  pm.local_to_global.resize(m.size());
  for (std::size_t l = 0; l < g.n; ++l) {
    const id_t nl = to_new[l];
    std::copy(v.row(l).begin(), v.row(l).end(), pv.row(nl).begin());
    pm.local_to_global[nl] = m[l];
    auto dst = pg.row(nl);
    std::size_t i = 0;
    for (id_t u : g.row(l)) dst[i++] = u == kSentinel ? kSentinel : to_new[u];
  }
  write_graph(graph_out, pg);
  write_dataset(vectors_out, pv, scalar);
  write_idmap(idmap_out, pm);
}

}  // namespace testkit
