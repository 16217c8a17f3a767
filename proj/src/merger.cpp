#include "shardann/merger.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <memory>
#include <numeric>
#include <queue>

namespace shardann {

namespace fs = std::filesystem;

InvertedIdMap invert_idmaps(const std::vector<IdMap>& idmaps, std::uint32_t n) {
  InvertedIdMap inv;
  inv.offsets.assign(std::size_t(n) + 1, 0);
  for (const auto& m : idmaps) {
    for (id_t g : m.local_to_global) {
      if (g >= n) {
        throw FormatError("idmap entry " + std::to_string(g) + " outside [0, " + std::to_string(n) + ")");
      }
      ++inv.offsets[std::size_t(g) + 1];
    }
  }
  for (std::uint32_t g = 0; g < n; ++g) {
    if (inv.offsets[std::size_t(g) + 1] == 0) {
      throw FormatError("global id " + std::to_string(g) + " is not covered by any shard");
    }
    inv.offsets[std::size_t(g) + 1] += inv.offsets[g];
  }
  inv.homes.resize(inv.offsets[n]);
  std::vector<std::uint64_t> cursor(inv.offsets.begin(), inv.offsets.end() - 1);
  for (std::uint32_t s = 0; s < idmaps.size(); ++s) {
    const auto& m = idmaps[s].local_to_global;
    for (std::size_t l = 0; l < m.size(); ++l) {
      const id_t g = m[l];
      const std::uint64_t at = cursor[g]++;
      if (at > inv.offsets[g] && inv.homes[at - 1].shard == s) {
        throw FormatError("global id " + std::to_string(g) + " appears twice in shard " +
                          std::to_string(s));
      }
      inv.homes[at] = Home{s, id_t(l)};
    }
  }
  return inv;
}

BufferedRowReader::BufferedRowReader(std::string path, std::size_t header_bytes,
                                     std::size_t row_bytes, std::uint64_t rows,
                                     std::size_t buffer_bytes)
    : path_(std::move(path)), header_bytes_(header_bytes), row_bytes_(row_bytes), rows_(rows),
      block_rows_(std::max<std::uint64_t>(1, buffer_bytes / std::max<std::size_t>(row_bytes, 1))) {
  block_rows_ = std::min<std::uint64_t>(block_rows_, std::max<std::uint64_t>(rows_, 1));
  in_.open(path_, std::ios::binary);
  if (!in_) throw IoError("cannot open " + path_);
  buffer_.resize(block_rows_ * row_bytes_);
}

const char* BufferedRowReader::row(std::uint64_t index) {
  if (index >= rows_) {
    throw InvalidArgument(path_ + ": row " + std::to_string(index) + " out of range (" +
                          std::to_string(rows_) + " rows)");
  }
  // Buffer state check: serve from the resident block or reload the aligned
  // block that contains the row.
  if (index < lo_ || index >= hi_) {
    lo_ = index / block_rows_ * block_rows_;
    hi_ = std::min(rows_, lo_ + block_rows_);
    in_.clear();
    in_.seekg(std::streamoff(header_bytes_ + lo_ * row_bytes_));
    in_.read(buffer_.data(), std::streamsize((hi_ - lo_) * row_bytes_));
    if (!in_) {
      lo_ = hi_ = 0;
      throw IoError("short read from " + path_);
    }
    ++loads_;
  }
  return buffer_.data() + (index - lo_) * row_bytes_;
}

namespace {

struct GraphHeader {
  std::uint32_t n, degree, entry;
};

GraphHeader peek_graph_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open graph file " + path);
  GraphHeader h{read_u32(in, path), read_u32(in, path), read_u32(in, path)};
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec || size != kGraphHeaderBytes + std::uint64_t(h.n) * h.degree * sizeof(id_t)) {
    throw FormatError(path + ": graph file size does not match its header");
  }
  return h;
}

}  // namespace

ShardBufferCache::ShardBufferCache(const std::string& graph_path, const std::string& vectors_path,
                                   ScalarKind scalar, std::size_t buffer_bytes)
    : scalar_(scalar),
      graph_([&] {
        const GraphHeader h = peek_graph_header(graph_path);
        n_ = h.n;
        degree_ = h.degree;
        entry_ = h.entry;
        return BufferedRowReader(graph_path, kGraphHeaderBytes, std::size_t(h.degree) * sizeof(id_t),
                                 h.n, buffer_bytes);
      }()),
      vectors_([&] {
        const VectorDataset ds = open_dataset(vectors_path, scalar);
        if (ds.count != n_) {
          throw FormatError(vectors_path + ": shard holds " + std::to_string(ds.count) +
                            " vectors but its graph has " + std::to_string(n_) + " rows");
        }
        dim_ = ds.dim;
        return BufferedRowReader(vectors_path, kVectorHeaderBytes, ds.row_bytes(), ds.count,
                                 buffer_bytes);
      }()) {}

std::span<const id_t> ShardBufferCache::read_row(id_t local) {
  const char* p = graph_.row(local);
  return {reinterpret_cast<const id_t*>(p), degree_};
}

void ShardBufferCache::read_vector(id_t local, std::span<float> out) {
  const char* p = vectors_.row(local);
  if (scalar_ == ScalarKind::f32) {
    std::memcpy(out.data(), p, std::size_t(dim_) * sizeof(float));
  } else {
    const auto* u = reinterpret_cast<const std::uint8_t*>(p);
    for (std::uint32_t j = 0; j < dim_; ++j) out[j] = float(u[j]);
  }
}

std::span<const id_t> buffered_read_row(ShardBufferCache& cache, id_t local) {
  return cache.read_row(local);
}

std::string shard_graph_name(std::uint32_t shard_id) {
  return "shard_" + std::to_string(shard_id) + ".graph";
}

GraphIndex merge(const std::vector<ShardFiles>& shards, ScalarKind scalar, std::uint32_t n,
                 const MergeOptions& opts) {
  if (shards.empty()) throw InvalidArgument("nothing to merge");
  std::vector<IdMap> idmaps;
  std::vector<GraphHeader> headers;
  for (const auto& s : shards) {
    if (!fs::exists(s.graph)) throw IoError("missing shard graph " + s.graph);
    idmaps.push_back(read_idmap(s.idmap));
    headers.push_back(peek_graph_header(s.graph));
    if (headers.back().n != idmaps.back().size()) {
      throw FormatError(s.graph + ": graph rows do not match idmap length");
    }
    if (headers.back().degree != headers.front().degree) {
      throw FormatError("shard graphs disagree on degree (" + std::to_string(headers.front().degree) +
                        " vs " + std::to_string(headers.back().degree) + ")");
    }
  }
  const InvertedIdMap inv = invert_idmaps(idmaps, n);
  const std::uint32_t R = headers.front().degree;

  GraphIndex out;
  out.n = n;
  out.degree = R;
  out.adjacency.assign(std::size_t(n) * R, kSentinel);

  const int threads = resolve_threads(opts.threads);
  const std::int64_t chunk = std::max<std::int64_t>(1024, std::int64_t(n) / (threads * 4 + 1));
  const std::int64_t chunks = (std::int64_t(n) + chunk - 1) / chunk;
  std::vector<std::string> errors(static_cast<std::size_t>(chunks));

#pragma omp parallel for num_threads(threads) schedule(dynamic, 1)
  for (std::int64_t ci = 0; ci < chunks; ++ci) {
    try {
      // Private caches per worker; opened lazily.
      std::vector<std::unique_ptr<ShardBufferCache>> caches(shards.size());
      auto cache = [&](std::uint32_t s) -> ShardBufferCache& {
        if (!caches[s]) {
          caches[s] = std::make_unique<ShardBufferCache>(shards[s].graph, shards[s].vectors, scalar,
                                                         opts.buffer_bytes);
        }
        return *caches[s];
      };
      std::vector<std::pair<id_t, Home>> cand;  // (global neighbor, where its vector lives)
      std::vector<Neighbor> scored;
      std::vector<float> self, other;
      const auto lo = std::uint32_t(ci * chunk);
      const auto hi = std::uint32_t(std::min<std::int64_t>(n, (ci + 1) * chunk));
      for (std::uint32_t g = lo; g < hi; ++g) {
        cand.clear();
        for (const Home& h : inv.of(g)) {
          const auto& map = idmaps[h.shard].local_to_global;
          for (id_t local : cache(h.shard).read_row(h.local)) {
            if (local == kSentinel) break;
            if (local >= map.size()) throw FormatError("neighbor id out of range in " + shards[h.shard].graph);
            const id_t ng = map[local];
            if (ng != g) cand.emplace_back(ng, Home{h.shard, local});
          }
        }
        std::sort(cand.begin(), cand.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        cand.erase(std::unique(cand.begin(), cand.end(),
                               [](const auto& a, const auto& b) { return a.first == b.first; }),
                   cand.end());
        auto row = out.row(g);
        if (cand.size() <= R) {
          for (std::size_t i = 0; i < cand.size(); ++i) row[i] = cand[i].first;
          continue;
        }
        const Home own = inv.of(g).front();
        ShardBufferCache& own_cache = cache(own.shard);
        self.resize(own_cache.dim());
        other.resize(own_cache.dim());
        own_cache.read_vector(own.local, self);
        scored.clear();
        for (const auto& [ng, where] : cand) {
          cache(where.shard).read_vector(where.local, other);
          scored.push_back(Neighbor{squared_l2(self, other), ng});
        }
        std::partial_sort(scored.begin(), scored.begin() + R, scored.end());
        for (std::uint32_t i = 0; i < R; ++i) row[i] = scored[i].id;
      }
    } catch (const std::exception& e) {
      errors[std::size_t(ci)] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw FormatError("merge failed: " + e);
  }

  std::size_t largest = 0;
  for (std::size_t s = 1; s < shards.size(); ++s) {
    if (headers[s].n > headers[largest].n) largest = s;
  }
  out.entry_point = idmaps[largest][headers[largest].entry];
  return out;
}

GraphIndex merge_plan(const std::string& plan_path, const std::string& graphs_dir,
                      const std::string& out_path, const MergeOptions& opts) {
  const PartitionPlan plan = load_plan(plan_path);
  const fs::path base = fs::path(plan_path).parent_path();
  std::vector<ShardFiles> files;
  for (const auto& s : plan.shards) {
    if (s.count == 0) continue;
    files.push_back(ShardFiles{(fs::path(graphs_dir) / shard_graph_name(s.shard_id)).string(),
                               (base / s.vectors_file).string(), (base / s.idmap_file).string()});
  }
  GraphIndex g = merge(files, plan.scalar, plan.n, opts);
  write_graph(out_path, g);
  return g;
}

ConnectivityReport connectivity_report(const GraphIndex& index) {
  ConnectivityReport r;
  if (index.n == 0) return r;
  std::vector<std::uint8_t> seen(index.n, 0);
  std::queue<id_t> q;
  q.push(index.entry_point);
  seen[index.entry_point] = 1;
  while (!q.empty()) {
    const id_t v = q.front();
    q.pop();
    ++r.reachable;
    for (id_t u : index.row(v)) {
      if (u == kSentinel) break;
      if (!seen[u]) {
        seen[u] = 1;
        q.push(u);
      }
    }
  }

  std::vector<id_t> parent(index.n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](id_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (id_t v = 0; v < index.n; ++v) {
    for (id_t u : index.row(v)) {
      if (u == kSentinel) break;
      const id_t a = find(v), b = find(u);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
  }
  for (id_t v = 0; v < index.n; ++v) r.components += find(v) == v;
  return r;
}

}  // namespace shardann
