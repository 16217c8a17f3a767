#include "shardann/graphbuild.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>

#include "shardann/clustering.hpp"
#include "shardann/rng.hpp"

namespace shardann {

void validate(const BuildParams& p) {
  if (p.degree_R < 1) throw InvalidArgument("degree_R must be >= 1");
  if (p.degree_L < p.degree_R) throw InvalidArgument("degree_L must be >= degree_R");
  if (p.exact_threshold < p.degree_L + 1) {
    throw InvalidArgument("exact_threshold must be >= degree_L + 1");
  }
}

void write_graph(const std::string& path, const GraphIndex& g) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create graph file " + path);
  write_u32(out, g.n);
  write_u32(out, g.degree);
  write_u32(out, g.entry_point);
  out.write(reinterpret_cast<const char*>(g.adjacency.data()),
            std::streamsize(g.adjacency.size() * sizeof(id_t)));
  if (!out) throw IoError("write failed on " + path);
}

GraphIndex read_graph(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open graph file " + path);
  GraphIndex g;
  g.n = read_u32(in, path);
  g.degree = read_u32(in, path);
  g.entry_point = read_u32(in, path);
  if (g.n > 0 && g.entry_point >= g.n) throw FormatError(path + ": entry point out of range");
  g.adjacency.resize(std::size_t(g.n) * g.degree);
  in.read(reinterpret_cast<char*>(g.adjacency.data()),
          std::streamsize(g.adjacency.size() * sizeof(id_t)));
  if (!in) throw FormatError(path + ": graph file truncated");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path + ": trailing bytes");
  return g;
}

namespace {

constexpr Neighbor kPad{std::numeric_limits<float>::infinity(), kSentinel};

double mean_list_distance(const std::vector<Neighbor>& lists) {
  double sum = 0.0;
  std::size_t cnt = 0;
  for (const auto& nb : lists) {
    if (nb.id == kSentinel) continue;
    sum += nb.dist;
    ++cnt;
  }
  return cnt ? sum / double(cnt) : 0.0;
}

struct Slot {
  float dist;
  id_t id;
  std::uint32_t stamp;  // round that inserted it
  bool fresh;  // not yet used as a join source
};

class Descent {
 public:
  Descent(const Matrix& data, std::uint32_t degree, const BuildParams& p)
      : data_(data), n_(std::uint32_t(data.rows)), L_(degree),
        S_(p.nnd_sample ? p.nnd_sample : p.degree_L), seed_(p.seed),
        threads_(resolve_threads(p.threads)), lists_(std::size_t(n_) * L_), locks_(n_) {}

  KnnGraph run(std::uint32_t max_iters) {
    KnnGraph g;
    g.n = n_;
    g.degree = L_;
    init();
    g.mean_distance_trace.push_back(mean_distance());
    const double stop_below = 0.001 * double(n_) * double(L_);
    for (std::uint32_t it = 1; it <= max_iters; ++it) {
      const std::uint64_t updates = round(it);
      g.iterations = it;
      g.mean_distance_trace.push_back(mean_distance());
      if (double(updates) < stop_below) break;
    }
    g.lists.resize(lists_.size());
    for (std::size_t i = 0; i < lists_.size(); ++i) g.lists[i] = Neighbor{lists_[i].dist, lists_[i].id};
    return g;
  }

 private:
  std::span<Slot> list(std::uint32_t v) { return {lists_.data() + std::size_t(v) * L_, L_}; }

  float dist(std::uint32_t a, std::uint32_t b) const { return squared_l2(data_.row(a), data_.row(b)); }

  static bool before(float da, id_t ia, float db, id_t ib) {
    return da < db || (da == db && ia < ib);
  }

  void init() {
#pragma omp parallel for num_threads(threads_) schedule(dynamic, 256)
    for (std::int64_t vi = 0; vi < std::int64_t(n_); ++vi) {
      const auto v = std::uint32_t(vi);
      std::mt19937_64 rng(splitmix64(seed_ ^ (std::uint64_t(v) * 0x9e3779b97f4a7c15ULL)));
      auto row = list(v);
      std::size_t filled = 0;
      while (filled < L_) {
        const auto u = std::uint32_t(uniform_below(rng, n_));
        if (u == v) continue;
        bool dup = false;
        for (std::size_t i = 0; i < filled; ++i) dup |= row[i].id == u;
        if (dup) continue;
        row[filled++] = Slot{dist(v, u), u, 0, true};
      }
      std::sort(row.begin(), row.end(),
                [](const Slot& a, const Slot& b) { return before(a.dist, a.id, b.dist, b.id); });
    }
  }

  void insert(std::uint32_t target, std::uint32_t cand, float d, std::uint32_t stamp) {
    std::lock_guard<std::mutex> guard(locks_[target]);
    auto row = list(target);
    const Slot& worst = row[L_ - 1];
    if (!before(d, cand, worst.dist, worst.id)) return;
    for (const Slot& s : row) {
      if (s.id == cand) return;
    }
    std::size_t pos = L_ - 1;
    while (pos > 0 && before(d, cand, row[pos - 1].dist, row[pos - 1].id)) {
      row[pos] = row[pos - 1];
      --pos;
    }
    row[pos] = Slot{d, cand, stamp, true};
  }

  // One local-join round. Returns how many list entries were inserted by it;
  // the count is taken from final contents, so it does not depend on the order
  // in which proposals landed.
  std::uint64_t round(std::uint32_t stamp) {
    std::vector<std::vector<std::uint32_t>> fresh(n_), stale(n_);
    for (std::uint32_t v = 0; v < n_; ++v) {
      for (Slot& s : list(v)) {
        if (s.fresh) {
          if (fresh[v].size() < S_) {
            fresh[v].push_back(s.id);
            s.fresh = false;
          }
        } else if (stale[v].size() < S_) {
          stale[v].push_back(s.id);
        }
      }
    }
    // Reverse samples, capped at S_ by seeded reservoir sampling.
    std::vector<std::vector<std::uint32_t>> rfresh(n_), rstale(n_);
    std::vector<std::uint32_t> seen_fresh(n_, 0), seen_stale(n_, 0);
    std::mt19937_64 rng(splitmix64(seed_ + stamp));
    auto reservoir = [&](std::vector<std::uint32_t>& bucket, std::uint32_t& seen, std::uint32_t v) {
      ++seen;
      if (bucket.size() < S_) {
        bucket.push_back(v);
      } else {
        const auto j = uniform_below(rng, seen);
        if (j < S_) bucket[j] = v;
      }
    };
    for (std::uint32_t v = 0; v < n_; ++v) {
      for (std::uint32_t u : fresh[v]) reservoir(rfresh[u], seen_fresh[u], v);
      for (std::uint32_t u : stale[v]) reservoir(rstale[u], seen_stale[u], v);
    }
    for (std::uint32_t v = 0; v < n_; ++v) {
      auto merge_into = [](std::vector<std::uint32_t>& dst, const std::vector<std::uint32_t>& src) {
        for (std::uint32_t x : src) {
          if (std::find(dst.begin(), dst.end(), x) == dst.end()) dst.push_back(x);
        }
      };
      merge_into(fresh[v], rfresh[v]);
      merge_into(stale[v], rstale[v]);
    }
    rfresh.clear();
    rstale.clear();

#pragma omp parallel for num_threads(threads_) schedule(dynamic, 64)
    for (std::int64_t vi = 0; vi < std::int64_t(n_); ++vi) {
      const auto& nw = fresh[std::size_t(vi)];
      const auto& od = stale[std::size_t(vi)];
      for (std::size_t i = 0; i < nw.size(); ++i) {
        const std::uint32_t a = nw[i];
        for (std::size_t j = i + 1; j < nw.size(); ++j) {
          const std::uint32_t b = nw[j];
          if (a == b) continue;
          const float d = dist(a, b);
          insert(a, b, d, stamp);
          insert(b, a, d, stamp);
        }
        for (std::uint32_t b : od) {
          if (a == b) continue;
          const float d = dist(a, b);
          insert(a, b, d, stamp);
          insert(b, a, d, stamp);
        }
      }
    }

    std::uint64_t updates = 0;
    for (const Slot& s : lists_) updates += s.stamp == stamp;
    return updates;
  }

  double mean_distance() const {
    double sum = 0.0;
    for (const Slot& s : lists_) sum += s.dist;
    return lists_.empty() ? 0.0 : sum / double(lists_.size());
  }

  const Matrix& data_;
  std::uint32_t n_;
  std::uint32_t L_;
  std::uint32_t S_;
  std::uint64_t seed_;
  int threads_;
  std::vector<Slot> lists_;
  std::vector<std::mutex> locks_;
};

}  // namespace

KnnGraph exact_knn_graph(const Matrix& data, std::uint32_t degree, int threads) {
  const auto n = std::uint32_t(data.rows);
  KnnGraph g;
  g.n = n;
  g.degree = degree;
  g.exact = true;
  g.lists.assign(std::size_t(n) * degree, kPad);
  const int nt = resolve_threads(threads);
  const std::uint32_t keep = std::min<std::uint32_t>(degree, n > 0 ? n - 1 : 0);
#pragma omp parallel num_threads(nt)
  {
    std::vector<Neighbor> all;
#pragma omp for schedule(dynamic, 32)
    for (std::int64_t vi = 0; vi < std::int64_t(n); ++vi) {
      const auto v = std::uint32_t(vi);
      all.clear();
      for (std::uint32_t u = 0; u < n; ++u) {
        if (u != v) all.push_back(Neighbor{squared_l2(data.row(v), data.row(u)), u});
      }
      std::partial_sort(all.begin(), all.begin() + keep, all.end());
      std::copy_n(all.begin(), keep, g.lists.begin() + std::ptrdiff_t(std::size_t(v) * degree));
    }
  }
  g.mean_distance_trace.push_back(mean_list_distance(g.lists));
  return g;
}

KnnGraph build_knn_graph(const Matrix& shard, const BuildParams& params) {
  validate(params);
  if (shard.rows < 2) throw InvalidArgument("a shard graph needs at least 2 vectors");
  if (shard.rows <= params.exact_threshold) {
    return exact_knn_graph(shard, params.degree_L, params.threads);
  }
  const auto degree = std::uint32_t(std::min<std::size_t>(params.degree_L, shard.rows - 1));
  Descent descent(shard, degree, params);
  KnnGraph g = descent.run(params.nnd_iters);
  if (degree < params.degree_L) {
    // Widen to the requested degree with sentinel padding.
    std::vector<Neighbor> wide(std::size_t(g.n) * params.degree_L, kPad);
    for (std::uint32_t v = 0; v < g.n; ++v) {
      std::copy_n(g.lists.begin() + std::ptrdiff_t(std::size_t(v) * degree), degree,
                  wide.begin() + std::ptrdiff_t(std::size_t(v) * params.degree_L));
    }
    g.lists = std::move(wide);
    g.degree = params.degree_L;
  }
  return g;
}

id_t nearest_to_mean(const Matrix& data) {
  std::vector<double> mean(data.cols, 0.0);
  for (std::size_t i = 0; i < data.rows; ++i) {
    const auto r = data.row(i);
    for (std::size_t j = 0; j < data.cols; ++j) mean[j] += r[j];
  }
  std::vector<float> m(data.cols);
  for (std::size_t j = 0; j < data.cols; ++j) m[j] = float(mean[j] / double(data.rows));
  Neighbor best{std::numeric_limits<float>::infinity(), 0};
  for (std::size_t i = 0; i < data.rows; ++i) {
    const Neighbor cand{squared_l2(data.row(i), m), id_t(i)};
    if (cand < best) best = cand;
  }
  return best.id;
}

GraphIndex finalize_graph(const KnnGraph& knn, const Matrix& shard, const BuildParams& params) {
  if (knn.degree < params.degree_R) {
    throw InvalidArgument("intermediate graph degree is below degree_R");
  }
  const std::uint32_t n = knn.n;
  const std::uint32_t R = params.degree_R;

  std::vector<std::vector<Neighbor>> reverse(n);
  for (std::uint32_t u = 0; u < n; ++u) {
    for (const Neighbor& nb : knn.row(u)) {
      if (nb.id != kSentinel) reverse[nb.id].push_back(Neighbor{nb.dist, u});
    }
  }

  GraphIndex g;
  g.n = n;
  g.degree = R;
  g.adjacency.assign(std::size_t(n) * R, kSentinel);
  const int threads = resolve_threads(params.threads);
#pragma omp parallel num_threads(threads)
  {
    std::vector<Neighbor> cand;
#pragma omp for schedule(dynamic, 128)
    for (std::int64_t vi = 0; vi < std::int64_t(n); ++vi) {
      const auto v = std::uint32_t(vi);
      cand.clear();
      for (const Neighbor& nb : knn.row(v)) {
        if (nb.id != kSentinel && nb.id != v) cand.push_back(nb);
      }
      for (const Neighbor& nb : reverse[v]) {
        if (nb.id != v) cand.push_back(nb);
      }
      std::sort(cand.begin(), cand.end());
      auto row = g.row(v);
      std::size_t out = 0;
      id_t last = kSentinel;
      for (const Neighbor& nb : cand) {
        if (out == R) break;
        if (nb.id == last) continue;
        // Equal ids carry equal distances, so duplicates are adjacent after sorting.
        row[out++] = nb.id;
        last = nb.id;
      }
    }
  }
  g.entry_point = n ? nearest_to_mean(shard) : 0;
  return g;
}

GraphIndex build_shard(const std::string& shard_path, const std::string& idmap_path,
                       ScalarKind scalar, const BuildParams& params, const std::string& out_path,
                       std::uint64_t memory_budget_bytes) {
  validate(params);
  const VectorDataset ds = open_dataset(shard_path, scalar);
  const IdMap idmap = read_idmap(idmap_path);
  if (idmap.size() != ds.count) {
    throw FormatError(idmap_path + ": idmap length " + std::to_string(idmap.size()) +
                      " does not match shard size " + std::to_string(ds.count));
  }
  if (memory_budget_bytes > 0) {
    const std::uint64_t need = std::uint64_t(ds.count) *
                               (std::uint64_t(ds.dim) * sizeof(float) + 8ull * params.degree_L);
    if (need > memory_budget_bytes) {
      throw CapacityError("shard " + shard_path + " needs ~" + std::to_string(need) +
                          " bytes, over the " + std::to_string(memory_budget_bytes) + " budget");
    }
  }
  const Matrix data = read_all(ds);
  const KnnGraph knn = build_knn_graph(data, params);
  GraphIndex g = finalize_graph(knn, data, params);
  write_graph(out_path, g);
  return g;
}

std::vector<BenchmarkPoint> micro_benchmark(const VectorDataset& ds, const BuildParams& params,
                                            const std::vector<std::uint32_t>& sample_sizes,
                                            std::uint32_t repeats) {
  if (repeats == 0) repeats = 1;
  std::vector<BenchmarkPoint> out;
  for (std::size_t i = 0; i < sample_sizes.size(); ++i) {
    const std::uint32_t size = sample_sizes[i];
    std::vector<double> secs;
    for (std::uint32_t r = 0; r < repeats; ++r) {
      const Matrix sample = sample_vectors(ds, size, splitmix64(params.seed + i * 131 + r));
      const auto t0 = std::chrono::steady_clock::now();
      const KnnGraph knn = build_knn_graph(sample, params);
      const GraphIndex g = finalize_graph(knn, sample, params);
      const auto t1 = std::chrono::steady_clock::now();
      secs.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    const double mean = std::accumulate(secs.begin(), secs.end(), 0.0) / double(secs.size());
    double var = 0.0;
    for (double s : secs) var += (s - mean) * (s - mean);
    out.push_back(BenchmarkPoint{size, mean, std::sqrt(var / double(secs.size()))});
  }
  return out;
}

}  // namespace shardann
