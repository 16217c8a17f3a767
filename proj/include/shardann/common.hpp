#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace shardann {

using id_t = std::uint32_t;

// Padding value for unused adjacency slots, on disk and in memory.
inline constexpr id_t kSentinel = std::numeric_limits<id_t>::max();

// Error hierarchy. The C API maps each subclass onto a status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class StarvationError : public Error {
 public:
  using Error::Error;
};

enum class ErrorKind { io, format, invalid_argument, capacity, starvation, internal };

ErrorKind kind_of(const std::exception& e);

// Dense row-major f32 matrix; rows are vectors.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

  std::span<float> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const float> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
};

inline float squared_l2(std::span<const float> a, std::span<const float> b) {
  float acc = 0.0f;
  const std::size_t d = a.size();
  for (std::size_t i = 0; i < d; ++i) {
    const float diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

// (distance, id) pair with the project-wide total order: ascending distance,
// ties broken by lower id.
struct Neighbor {
  float dist = 0.0f;
  id_t id = kSentinel;

  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.dist < b.dist || (a.dist == b.dist && a.id < b.id);
  }
  friend bool operator==(const Neighbor& a, const Neighbor& b) = default;
};

// Worker count for parallel loops: explicit value wins, then the
// SHARDANN_WORKERS environment variable, then the OpenMP default.
int resolve_threads(int requested);

}  // namespace shardann
