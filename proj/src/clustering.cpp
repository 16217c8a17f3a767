#include "shardann/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "shardann/rng.hpp"

namespace shardann {

std::uint32_t default_sample_size(std::uint32_t n, std::uint32_t k) {
  return std::uint32_t(std::min<std::uint64_t>(n, std::uint64_t(256) * k));
}

Matrix sample_vectors(const VectorDataset& ds, std::uint32_t sample_size, std::uint64_t seed,
                      std::uint32_t block_size) {
  if (sample_size > ds.count) {
    throw InvalidArgument("sample size " + std::to_string(sample_size) + " exceeds dataset count " +
                          std::to_string(ds.count));
  }
  // Partial Fisher-Yates over a virtual identity array; only displaced slots
  // are materialized.
  std::mt19937_64 rng(seed);
  std::unordered_map<std::uint32_t, std::uint32_t> displaced;
  auto slot = [&](std::uint32_t i) {
    auto it = displaced.find(i);
    return it == displaced.end() ? i : it->second;
  };
  std::vector<std::pair<std::uint32_t, std::uint32_t>> picks;  // (global id, sample position)
  picks.reserve(sample_size);
  for (std::uint32_t i = 0; i < sample_size; ++i) {
    const auto j = std::uint32_t(i + uniform_below(rng, ds.count - i));
    const std::uint32_t vi = slot(i), vj = slot(j);
    displaced[j] = vi;
    displaced[i] = vj;
    picks.emplace_back(vj, i);
  }
  std::sort(picks.begin(), picks.end());

  Matrix out(sample_size, ds.dim);
  std::size_t p = 0;
  while (p < picks.size()) {
    const std::uint64_t block = picks[p].first / block_size;
    const VectorBlock b = read_block(ds, block, block_size);
    for (; p < picks.size() && picks[p].first / block_size == block; ++p) {
      const auto src = b.vectors.row(picks[p].first - b.start_id);
      std::copy(src.begin(), src.end(), out.row(picks[p].second).begin());
    }
  }
  return out;
}

namespace {

std::size_t count_distinct_rows(const Matrix& m) {
  std::unordered_set<std::string> seen;
  seen.reserve(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const auto r = m.row(i);
    seen.emplace(reinterpret_cast<const char*>(r.data()), r.size() * sizeof(float));
  }
  return seen.size();
}

// Returns total distortion; fills labels and per-point squared distances.
double assign_points(const Matrix& sample, const Matrix& centroids, std::vector<std::uint32_t>& labels,
                     std::vector<float>& dists, int threads) {
  const auto n = std::int64_t(sample.rows);
  const std::size_t k = centroids.rows;
#pragma omp parallel for num_threads(threads) schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    float best = std::numeric_limits<float>::infinity();
    std::uint32_t best_c = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const float d = squared_l2(sample.row(std::size_t(i)), centroids.row(c));
      if (d < best) {
        best = d;
        best_c = std::uint32_t(c);
      }
    }
    labels[std::size_t(i)] = best_c;
    dists[std::size_t(i)] = best;
  }
  double total = 0.0;
  for (float d : dists) total += d;
  return total;
}

Matrix seed_plus_plus(const Matrix& sample, std::uint32_t k, std::mt19937_64& rng, int threads) {
  const std::size_t n = sample.rows;
  Matrix centroids(k, sample.cols);
  std::size_t first = uniform_below(rng, n);
  std::copy_n(sample.row(first).begin(), sample.cols, centroids.row(0).begin());

  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_l2(sample.row(i), centroids.row(0));

  for (std::uint32_t c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    const double target = uniform01(rng) * total;
    double run = 0.0;
    std::size_t pick = n;
    std::size_t last_positive = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      last_positive = i;
      run += d2[i];
      if (run > target) {
        pick = i;
        break;
      }
    }
    if (pick == n) pick = last_positive;  // rounding at the tail
    std::copy_n(sample.row(pick).begin(), sample.cols, centroids.row(c).begin());
    const auto cen = centroids.row(c);
#pragma omp parallel for num_threads(threads) schedule(static)
    for (std::int64_t i = 0; i < std::int64_t(n); ++i) {
      d2[std::size_t(i)] =
          std::min(d2[std::size_t(i)], double(squared_l2(sample.row(std::size_t(i)), cen)));
    }
  }
  return centroids;
}

}  // namespace

CentroidSet train_kmeans(const Matrix& sample, const KMeansParams& params,
                         std::vector<double>* distortion_log) {
  const std::uint32_t k = params.k;
  if (k == 0) throw InvalidArgument("k must be at least 1");
  if (params.max_iters == 0) throw InvalidArgument("max_iters must be at least 1");
  if (!(params.tol >= 0.0f)) throw InvalidArgument("tol must be non-negative");
  if (sample.rows < k) {
    throw InvalidArgument("sample has " + std::to_string(sample.rows) + " rows, fewer than k=" +
                          std::to_string(k));
  }
  if (count_distinct_rows(sample) < k) {
    throw InvalidArgument("sample has fewer distinct points than k=" + std::to_string(k));
  }
  const int threads = resolve_threads(params.threads);
  const std::size_t n = sample.rows, dim = sample.cols;

  std::mt19937_64 rng(params.seed);
  Matrix centroids = seed_plus_plus(sample, k, rng, threads);

  std::vector<std::uint32_t> labels(n);
  std::vector<float> dists(n);
  std::vector<double> sums(std::size_t(k) * dim);
  std::vector<std::size_t> counts(k);
  if (distortion_log) distortion_log->clear();

  double prev = std::numeric_limits<double>::infinity();
  for (std::uint32_t iter = 0; iter < params.max_iters; ++iter) {
    const double cur = assign_points(sample, centroids, labels, dists, threads);
    if (distortion_log) distortion_log->push_back(cur);
    if (cur == 0.0) break;
    if (std::isfinite(prev) && (prev - cur) / prev < double(params.tol)) break;
    prev = cur;

    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) ++counts[labels[i]];

    for (std::uint32_t e = 0; e < k; ++e) {
      if (counts[e] != 0) continue;
      const auto largest =
          std::uint32_t(std::max_element(counts.begin(), counts.end()) - counts.begin());
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] == largest && (far == n || dists[i] > dists[far])) far = i;
      }
      labels[far] = e;
      dists[far] = 0.0f;
      --counts[largest];
      counts[e] = 1;
    }

    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double* acc = sums.data() + std::size_t(labels[i]) * dim;
      const auto r = sample.row(i);
      for (std::size_t j = 0; j < dim; ++j) acc[j] += r[j];
    }
    for (std::uint32_t c = 0; c < k; ++c) {
      auto row = centroids.row(c);
      const double* acc = sums.data() + std::size_t(c) * dim;
      for (std::size_t j = 0; j < dim; ++j) row[j] = float(acc[j] / double(counts[c]));
    }

    if (iter + 1 == params.max_iters && distortion_log) {
      distortion_log->push_back(assign_points(sample, centroids, labels, dists, threads));
    }
  }

  CentroidSet cs;
  cs.k = k;
  cs.dim = std::uint32_t(dim);
  cs.centroids = std::move(centroids);
  return cs;
}

std::vector<std::pair<std::uint32_t, float>> nearest_centroids(std::span<const float> v,
                                                               const CentroidSet& cs,
                                                               std::uint32_t m) {
  if (v.size() != cs.dim) {
    throw InvalidArgument("vector dimension " + std::to_string(v.size()) +
                          " != centroid dimension " + std::to_string(cs.dim));
  }
  if (m > cs.k) throw InvalidArgument("requested more centroids than k");
  std::vector<Neighbor> all(cs.k);
  for (std::uint32_t c = 0; c < cs.k; ++c) all[c] = Neighbor{squared_l2(v, cs.centroid(c)), c};
  std::partial_sort(all.begin(), all.begin() + m, all.end());
  std::vector<std::pair<std::uint32_t, float>> out;
  out.reserve(m);
  for (std::uint32_t i = 0; i < m; ++i) out.emplace_back(all[i].id, all[i].dist);
  return out;
}

void save_centroids(const std::string& path, const CentroidSet& cs) {
  write_dataset(path, cs.centroids, ScalarKind::f32);
}

CentroidSet load_centroids(const std::string& path) {
  const auto ds = open_dataset(path, ScalarKind::f32);
  if (ds.count == 0) throw FormatError(path + ": centroid file is empty");
  CentroidSet cs;
  cs.k = ds.count;
  cs.dim = ds.dim;
  cs.centroids = read_all(ds);
  return cs;
}

}  // namespace shardann
