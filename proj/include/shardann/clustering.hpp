#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "shardann/common.hpp"
#include "shardann/vecstore.hpp"

namespace shardann {

struct CentroidSet {
  std::uint32_t k = 0;
  std::uint32_t dim = 0;
  Matrix centroids;  // k x dim

  std::span<const float> centroid(std::size_t c) const { return centroids.row(c); }
};

struct KMeansParams {
  std::uint32_t k = 1;
  std::uint32_t sample_size = 0;  // 0 selects min(n, 256 * k)
  std::uint32_t max_iters = 15;
  std::uint64_t seed = 42;
  float tol = 1e-4f;
  int threads = 0;
};

std::uint32_t default_sample_size(std::uint32_t n, std::uint32_t k);

// Seeded uniform sample without replacement, returned in sampled order (so a
// full-size sample is a permutation). Rows are fetched block by block.
Matrix sample_vectors(const VectorDataset& ds, std::uint32_t sample_size, std::uint64_t seed,
                      std::uint32_t block_size = kDefaultBlockSize);

/// Lloyd's algorithm from k-means++ seeding.
///
/// Stops after `max_iters` updates or once the relative distortion
/// improvement falls below `tol`. A cluster that goes empty is re-seeded with
/// the member of the largest cluster farthest from its centroid. The centroid
/// update accumulates in sample order, so the result does not depend on the
/// worker count. When `distortion_log` is given it receives the distortion
/// (sum of squared distances) measured at every assignment step.
CentroidSet train_kmeans(const Matrix& sample, const KMeansParams& params,
                         std::vector<double>* distortion_log = nullptr);

// The m nearest centroids by squared L2, ascending, ties to the lower id.
std::vector<std::pair<std::uint32_t, float>> nearest_centroids(std::span<const float> v,
                                                               const CentroidSet& cs,
                                                               std::uint32_t m);

void save_centroids(const std::string& path, const CentroidSet& cs);
CentroidSet load_centroids(const std::string& path);

}  // namespace shardann
