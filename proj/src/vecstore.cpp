#include "shardann/vecstore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <unordered_set>

namespace shardann {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

namespace fs = std::filesystem;

ScalarKind parse_scalar(const std::string& name) {
  if (name == "u8" || name == "uint8") return ScalarKind::u8;
  if (name == "f32" || name == "float") return ScalarKind::f32;
  throw InvalidArgument("unknown scalar kind '" + name + "' (expected u8 or f32)");
}

const char* scalar_name(ScalarKind s) { return s == ScalarKind::u8 ? "u8" : "f32"; }

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& in, const std::string& what) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw FormatError("short read while reading " + what);
  return v;
}

VectorDataset open_dataset(const std::string& path, ScalarKind scalar) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw IoError("cannot open vector file " + path + ": " + ec.message());
  if (size < kVectorHeaderBytes) throw FormatError(path + ": file shorter than 8-byte header");

  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vector file " + path);
  VectorDataset ds;
  ds.path = path;
  ds.scalar = scalar;
  ds.count = read_u32(in, path);
  ds.dim = read_u32(in, path);
  if (ds.dim == 0) throw FormatError(path + ": header dimension is zero");

  const std::uint64_t expected =
      kVectorHeaderBytes + std::uint64_t(ds.count) * ds.dim * scalar_width(scalar);
  if (size != expected) {
    throw FormatError(path + ": size mismatch (header n=" + std::to_string(ds.count) +
                      " d=" + std::to_string(ds.dim) + " as " + scalar_name(scalar) +
                      " needs " + std::to_string(expected) + " bytes, file has " +
                      std::to_string(size) + ")");
  }
  return ds;
}

Matrix read_rows(const VectorDataset& ds, std::uint64_t first, std::size_t rows) {
  if (first + rows > ds.count) {
    throw InvalidArgument("row range [" + std::to_string(first) + ", " +
                          std::to_string(first + rows) + ") exceeds dataset count " +
                          std::to_string(ds.count));
  }
  Matrix m(rows, ds.dim);
  if (rows == 0) return m;

  std::ifstream in(ds.path, std::ios::binary);
  if (!in) throw IoError("cannot open vector file " + ds.path);
  in.seekg(std::streamoff(kVectorHeaderBytes + first * ds.row_bytes()));
  const std::size_t n_values = rows * ds.dim;
  if (ds.scalar == ScalarKind::f32) {
    in.read(reinterpret_cast<char*>(m.data.data()), std::streamsize(n_values * sizeof(float)));
  } else {
    std::vector<std::uint8_t> raw(n_values);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(n_values));
    for (std::size_t i = 0; i < n_values; ++i) m.data[i] = float(raw[i]);
  }
  if (!in) throw IoError("short read from " + ds.path);
  return m;
}

VectorBlock read_block(const VectorDataset& ds, std::uint64_t block_index,
                       std::uint32_t block_size) {
  if (block_size == 0) throw InvalidArgument("block_size must be positive");
  const std::uint64_t start = block_index * block_size;
  if (start >= ds.count) {
    throw InvalidArgument("block index " + std::to_string(block_index) + " out of range for " +
                          std::to_string(ds.count) + " vectors");
  }
  VectorBlock b;
  b.start_id = start;
  b.rows = std::size_t(std::min<std::uint64_t>(block_size, ds.count - start));
  b.vectors = read_rows(ds, start, b.rows);
  return b;
}

Matrix read_all(const VectorDataset& ds) { return read_rows(ds, 0, ds.count); }

namespace {

void encode_row(std::span<const float> row, ScalarKind scalar, char* dst) {
  if (scalar == ScalarKind::f32) {
    std::memcpy(dst, row.data(), row.size() * sizeof(float));
    return;
  }
  for (std::size_t i = 0; i < row.size(); ++i) {
    const float v = std::clamp(std::nearbyint(row[i]), 0.0f, 255.0f);
    dst[i] = static_cast<char>(static_cast<std::uint8_t>(v));
  }
}

}  // namespace

VectorDataset write_dataset(const std::string& path, const Matrix& vectors, ScalarKind scalar) {
  if (vectors.cols == 0) throw InvalidArgument("cannot write vectors of dimension 0");
  if (vectors.data.size() != vectors.rows * vectors.cols) {
    throw InvalidArgument("matrix payload does not match rows x cols");
  }
  DatasetWriter w(path, std::uint32_t(vectors.cols), scalar);
  for (std::size_t i = 0; i < vectors.rows; ++i) w.append(vectors.row(i));
  return w.close();
}

DatasetWriter::DatasetWriter(std::string path, std::uint32_t dim, ScalarKind scalar)
    : path_(std::move(path)), dim_(dim), scalar_(scalar),
      staging_(std::size_t(dim) * scalar_width(scalar)) {
  if (dim == 0) throw InvalidArgument("cannot write vectors of dimension 0");
  out_.open(path_, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError("cannot create vector file " + path_);
  write_u32(out_, 0);
  write_u32(out_, dim_);
}

DatasetWriter::~DatasetWriter() {
  if (out_.is_open()) {
    try {
      close();
    } catch (...) {
    }
  }
}

void DatasetWriter::append(std::span<const float> row) {
  if (row.size() != dim_) {
    throw InvalidArgument("row dimension " + std::to_string(row.size()) + " != file dimension " +
                          std::to_string(dim_));
  }
  encode_row(row, scalar_, staging_.data());
  out_.write(staging_.data(), std::streamsize(staging_.size()));
  if (!out_) throw IoError("write failed on " + path_);
  ++count_;
}

VectorDataset DatasetWriter::close() {
  out_.seekp(0);
  write_u32(out_, count_);
  out_.close();
  if (out_.fail()) throw IoError("failed to finalize " + path_);
  return VectorDataset{path_, count_, dim_, scalar_};
}

void write_idmap(const std::string& path, const IdMap& map) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create idmap " + path);
  write_u32(out, std::uint32_t(map.size()));
  write_u32(out, 1);
  out.write(reinterpret_cast<const char*>(map.local_to_global.data()),
            std::streamsize(map.size() * sizeof(id_t)));
  if (!out) throw IoError("write failed on " + path);
}

IdMap read_idmap(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open idmap " + path);
  const std::uint32_t m = read_u32(in, path);
  const std::uint32_t width = read_u32(in, path);
  if (width != 1) throw FormatError(path + ": idmap header column count must be 1");
  IdMap map;
  map.local_to_global.resize(m);
  in.read(reinterpret_cast<char*>(map.local_to_global.data()), std::streamsize(m * sizeof(id_t)));
  if (!in) throw FormatError(path + ": idmap truncated");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path + ": trailing bytes");

  std::unordered_set<id_t> seen;
  seen.reserve(m);
  for (id_t g : map.local_to_global) {
    if (!seen.insert(g).second) {
      throw FormatError(path + ": duplicate global id " + std::to_string(g));
    }
  }
  return map;
}

}  // namespace shardann
