#include "shardann/searcher.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <unordered_set>

#include "shardann/rng.hpp"

namespace shardann {

void SearchScratch::prepare(std::uint32_t n) {
  if (stamp_.size() != n) {
    stamp_.assign(n, 0);
    epoch_ = 0;
  }
  if (++epoch_ == 0) {
    std::fill(stamp_.begin(), stamp_.end(), 0);
    epoch_ = 1;
  }
}

bool SearchScratch::visit(id_t v) {
  if (stamp_[v] == epoch_) return false;
  stamp_[v] = epoch_;
  return true;
}

namespace {

struct PoolEntry {
  Neighbor nb;
  bool expanded = false;
};

}  // namespace

QueryResult greedy_search(const GraphIndex& index, const Matrix& data, std::span<const float> q,
                          const SearchParams& params, SearchScratch* scratch) {
  if (index.n == 0) throw InvalidArgument("cannot search an empty index");
  if (q.size() != data.cols) {
    throw InvalidArgument("query dimension " + std::to_string(q.size()) + " != data dimension " +
                          std::to_string(data.cols));
  }
  if (params.topk < 1 || params.beam < params.topk) {
    throw InvalidArgument("search needs beam >= topk >= 1");
  }
  if (data.rows != index.n) throw InvalidArgument("index and data sizes differ");

  SearchScratch local;
  SearchScratch& sc = scratch ? *scratch : local;
  sc.prepare(index.n);

  QueryResult res;
  std::vector<PoolEntry> pool;
  pool.reserve(params.beam + 1);

  const id_t entry = index.entry_point;
  sc.visit(entry);
  pool.push_back({Neighbor{squared_l2(q, data.row(entry)), entry}, false});
  ++res.n_distance_computations;

  std::size_t cursor = 0;  // first possibly-unexpanded position
  while (cursor < pool.size()) {
    if (pool[cursor].expanded) {
      ++cursor;
      continue;
    }
    pool[cursor].expanded = true;
    ++res.expanded;
    const id_t v = pool[cursor].nb.id;
    std::size_t lowest_insert = pool.size();
    for (id_t u : index.row(v)) {
      if (u == kSentinel) break;
      if (!sc.visit(u)) continue;
      const Neighbor cand{squared_l2(q, data.row(u)), u};
      ++res.n_distance_computations;
      if (pool.size() == params.beam && !(cand < pool.back().nb)) continue;
      auto it = std::upper_bound(pool.begin(), pool.end(), cand,
                                 [](const Neighbor& a, const PoolEntry& b) { return a < b.nb; });
      const auto pos = std::size_t(it - pool.begin());
      pool.insert(it, PoolEntry{cand, false});
      if (pool.size() > params.beam) pool.pop_back();
      lowest_insert = std::min(lowest_insert, pos);
    }
    cursor = std::min(cursor + 1, lowest_insert);
  }

  const std::size_t k = std::min<std::size_t>(params.topk, pool.size());
  for (std::size_t i = 0; i < k; ++i) {
    res.ids.push_back(pool[i].nb.id);
    res.distances.push_back(pool[i].nb.dist);
  }
  return res;
}

GroundTruth exact_knn(const Matrix& data, const Matrix& queries, std::uint32_t k, int threads) {
  if (k > data.rows) throw InvalidArgument("k exceeds dataset size");
  if (queries.cols != data.cols && queries.rows > 0) {
    throw InvalidArgument("query/data dimension mismatch");
  }
  GroundTruth gt;
  gt.nq = std::uint32_t(queries.rows);
  gt.k = k;
  gt.ids.resize(std::size_t(gt.nq) * k);
  gt.distances.resize(std::size_t(gt.nq) * k);
  const int nt = resolve_threads(threads);
#pragma omp parallel num_threads(nt)
  {
    std::vector<Neighbor> all(data.rows);
#pragma omp for schedule(dynamic, 4)
    for (std::int64_t qi = 0; qi < std::int64_t(gt.nq); ++qi) {
      const auto q = queries.row(std::size_t(qi));
      for (std::size_t i = 0; i < data.rows; ++i) all[i] = Neighbor{squared_l2(q, data.row(i)), id_t(i)};
      std::partial_sort(all.begin(), all.begin() + k, all.end());
      for (std::uint32_t j = 0; j < k; ++j) {
        gt.ids[std::size_t(qi) * k + j] = all[j].id;
        gt.distances[std::size_t(qi) * k + j] = all[j].dist;
      }
    }
  }
  return gt;
}

void write_ground_truth(const std::string& path, const GroundTruth& gt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path);
  write_u32(out, gt.nq);
  write_u32(out, gt.k);
  out.write(reinterpret_cast<const char*>(gt.ids.data()), std::streamsize(gt.ids.size() * sizeof(id_t)));
  out.write(reinterpret_cast<const char*>(gt.distances.data()),
            std::streamsize(gt.distances.size() * sizeof(float)));
  if (!out) throw IoError("write failed on " + path);
}

GroundTruth read_ground_truth(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  GroundTruth gt;
  gt.nq = read_u32(in, path);
  gt.k = read_u32(in, path);
  const std::size_t total = std::size_t(gt.nq) * gt.k;
  gt.ids.resize(total);
  gt.distances.resize(total);
  in.read(reinterpret_cast<char*>(gt.ids.data()), std::streamsize(total * sizeof(id_t)));
  in.read(reinterpret_cast<char*>(gt.distances.data()), std::streamsize(total * sizeof(float)));
  if (!in) throw FormatError(path + ": ground-truth file truncated");
  return gt;
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"topk", r.topk},
          {"beam", r.beam},
          {"queries", r.queries},
          {"recall_at_k", r.recall_at_k},
          {"qps", r.qps},
          {"mean_latency_ms", r.mean_latency_ms},
          {"mean_distance_computations", r.mean_distance_computations},
          {"result_digest", r.result_digest}};
}

double recall_at_k(std::span<const id_t> retrieved, std::span<const id_t> truth, std::uint32_t k) {
  if (k == 0) return 0.0;
  const std::size_t tk = std::min<std::size_t>(k, truth.size());
  const std::size_t rk = std::min<std::size_t>(k, retrieved.size());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < rk; ++i) {
    hit += std::find(truth.begin(), truth.begin() + std::ptrdiff_t(tk), retrieved[i]) !=
           truth.begin() + std::ptrdiff_t(tk);
  }
  return double(hit) / double(k);
}

EvalReport evaluate(const GraphIndex& index, const Matrix& data, const Matrix& queries,
                    const GroundTruth& gt, const SearchParams& params, int threads) {
  if (gt.nq != queries.rows) {
    throw InvalidArgument("ground truth covers " + std::to_string(gt.nq) + " queries, got " +
                          std::to_string(queries.rows));
  }
  if (gt.k < params.topk) throw InvalidArgument("ground truth has fewer than topk entries per query");

  const auto nq = std::int64_t(queries.rows);
  std::vector<QueryResult> results(static_cast<std::size_t>(nq));
  std::vector<double> latency(static_cast<std::size_t>(nq));
  const int nt = resolve_threads(threads);
  const auto t0 = std::chrono::steady_clock::now();
#pragma omp parallel num_threads(nt)
  {
    SearchScratch scratch;
#pragma omp for schedule(dynamic, 8)
    for (std::int64_t i = 0; i < nq; ++i) {
      const auto s = std::chrono::steady_clock::now();
      results[std::size_t(i)] = greedy_search(index, data, queries.row(std::size_t(i)), params, &scratch);
      latency[std::size_t(i)] =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - s).count();
    }
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  EvalReport r;
  r.topk = params.topk;
  r.beam = params.beam;
  r.queries = std::uint32_t(nq);
  std::uint64_t digest = 0x84222325cbf29ce4ULL;
  double recall = 0.0, dists = 0.0, lat = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    recall += recall_at_k(results[i].ids, gt.ids_of(i), params.topk);
    dists += double(results[i].n_distance_computations);
    lat += latency[i];
    for (id_t id : results[i].ids) digest = splitmix64(digest ^ id);
  }
  if (nq > 0) {
    r.recall_at_k = recall / double(nq);
    r.mean_distance_computations = dists / double(nq);
    r.mean_latency_ms = lat / double(nq);
    r.qps = wall > 0.0 ? double(nq) / wall : 0.0;
  }
  r.result_digest = digest;
  return r;
}

QueryResult split_only_search(const std::vector<ShardSearchUnit>& shards, std::span<const float> q,
                              const SearchParams& params) {
  if (shards.empty()) throw InvalidArgument("no shards to search");
  QueryResult merged;
  std::vector<Neighbor> hits;
  SearchScratch scratch;
  for (const auto& s : shards) {
    if (s.graph.n == 0) continue;
    SearchParams local = params;
    local.beam = std::max(params.beam, params.topk);
    const QueryResult r = greedy_search(s.graph, s.vectors, q, local, &scratch);
    merged.n_distance_computations += r.n_distance_computations;
    merged.expanded += r.expanded;
    for (std::size_t i = 0; i < r.ids.size(); ++i) {
      hits.push_back(Neighbor{r.distances[i], s.idmap[r.ids[i]]});
    }
  }
  std::sort(hits.begin(), hits.end());
  std::unordered_set<id_t> seen;
  for (const Neighbor& h : hits) {
    if (merged.ids.size() == params.topk) break;
    if (!seen.insert(h.id).second) continue;
    merged.ids.push_back(h.id);
    merged.distances.push_back(h.dist);
  }
  return merged;
}

}  // namespace shardann
