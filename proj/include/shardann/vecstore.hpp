#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "shardann/common.hpp"

namespace shardann {

enum class ScalarKind : std::uint8_t { u8, f32 };

constexpr std::size_t scalar_width(ScalarKind s) { return s == ScalarKind::u8 ? 1 : 4; }

ScalarKind parse_scalar(const std::string& name);
const char* scalar_name(ScalarKind s);

inline constexpr std::uint32_t kDefaultBlockSize = 65536;
inline constexpr std::size_t kVectorHeaderBytes = 8;

/// Handle to a vector file on disk: 8-byte header (LE u32 count, LE u32 dim)
/// followed by a row-major payload of `count * dim` scalars.
///
/// The handle holds no open stream; every read opens its own, so readers of
/// disjoint blocks can run concurrently.
struct VectorDataset {
  std::string path;
  std::uint32_t count = 0;
  std::uint32_t dim = 0;
  ScalarKind scalar = ScalarKind::f32;

  std::size_t row_bytes() const { return std::size_t(dim) * scalar_width(scalar); }
  std::uint64_t num_blocks(std::uint32_t block_size) const {
    return (std::uint64_t(count) + block_size - 1) / block_size;
  }
};

struct VectorBlock {
  std::uint64_t start_id = 0;
  std::size_t rows = 0;
  Matrix vectors;  // f32-promoted
};

VectorDataset open_dataset(const std::string& path, ScalarKind scalar);

VectorBlock read_block(const VectorDataset& ds, std::uint64_t block_index,
                       std::uint32_t block_size = kDefaultBlockSize);

// Reads rows [first, first + rows) promoted to f32.
Matrix read_rows(const VectorDataset& ds, std::uint64_t first, std::size_t rows);

Matrix read_all(const VectorDataset& ds);

VectorDataset write_dataset(const std::string& path, const Matrix& vectors, ScalarKind scalar);

// Streams rows into a vector file and patches the count on close(). Used by
// the partitioner, which appends to every shard file block by block.
class DatasetWriter {
 public:
  DatasetWriter(std::string path, std::uint32_t dim, ScalarKind scalar);
  DatasetWriter(DatasetWriter&&) noexcept = default;
  DatasetWriter& operator=(DatasetWriter&&) noexcept = default;
  ~DatasetWriter();

  void append(std::span<const float> row);
  VectorDataset close();
  std::uint32_t count() const { return count_; }

 private:
  std::string path_;
  std::uint32_t dim_;
  ScalarKind scalar_;
  std::uint32_t count_ = 0;
  std::ofstream out_;
  std::vector<char> staging_;
};

/// Shard-local slot -> global vector id.
struct IdMap {
  std::vector<id_t> local_to_global;

  std::size_t size() const { return local_to_global.size(); }
  id_t operator[](std::size_t i) const { return local_to_global[i]; }
};

void write_idmap(const std::string& path, const IdMap& map);
IdMap read_idmap(const std::string& path);

// Little-endian helpers shared by the graph and ground-truth file formats.
void write_u32(std::ostream& out, std::uint32_t v);
std::uint32_t read_u32(std::istream& in, const std::string& what);

}  // namespace shardann
