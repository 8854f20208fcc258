#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "msgcn/features.hpp"
#include "msgcn/io.hpp"
#include "msgcn/manifest.hpp"

namespace msgcn {

enum class EdgeKind : uint8_t { Spatial = 0, Magnification = 1 };

struct Vertex {
  int mag_level = 0;
  int row = 0;
  int col = 0;

  bool operator==(const Vertex&) const = default;
};

// Multi-magnification WSI graph in canonical form: vertices sorted by
// (mag_level, row, col), symmetric adjacency in CSR with sorted neighbor
// lists, no self-loops, and a dense V×d feature matrix.
struct MultiScaleGraph {
  std::string wsi_id;
  int num_levels = 0;
  std::vector<float> level_magnifications;
  std::vector<Vertex> vertices;
  std::vector<uint64_t> csr_offsets;   // length V+1
  std::vector<uint32_t> csr_targets;   // length 2E
  std::vector<EdgeKind> csr_kinds;     // parallel to csr_targets
  uint32_t feature_dim = 0;
  std::vector<float> features;         // V×d row-major

  int num_vertices() const { return static_cast<int>(vertices.size()); }
  uint64_t num_directed_slots() const { return csr_targets.size(); }
  uint64_t num_edges() const { return csr_targets.size() / 2; }

  bool operator==(const MultiScaleGraph& o) const = default;
};

// Build the canonical graph for one WSI. Spatial edges are 4-connectivity
// at level 1 only; magnification edges link each level-(m+1) tile to the
// level-m tile covering it (floor division by the integer magnification
// ratio). Only tissue tiles become vertices; orphans are allowed.
inline MultiScaleGraph build_graph(const std::vector<TileRecord>& tiles,
                                   const FeatureProvider& features) {
  MultiScaleGraph g;
  if (tiles.empty()) return g;
  g.wsi_id = tiles.front().wsi_id;

  std::map<int, double> mag_of_level;
  for (const auto& t : tiles) {
    if (t.wsi_id != g.wsi_id)
      throw DataError("build_graph: tiles span multiple WSIs");
    auto [it, fresh] = mag_of_level.emplace(t.mag_level, t.magnification);
    if (!fresh && it->second != t.magnification)
      throw DataError("inconsistent magnification at level " +
                      std::to_string(t.mag_level));
  }
  g.num_levels = mag_of_level.rbegin()->first;
  if (static_cast<int>(mag_of_level.size()) != g.num_levels ||
      mag_of_level.begin()->first != 1)
    throw DataError("mag_level range not contiguous from 1 in wsi " + g.wsi_id);
  for (const auto& [level, mag] : mag_of_level)
    g.level_magnifications.push_back(static_cast<float>(mag));

  // Integer ratios between consecutive levels.
  std::vector<int> ratio(g.num_levels, 0);  // ratio[m] = mag(m+1)/mag(m), 1-based m
  for (int m = 1; m < g.num_levels; ++m) {
    const double r = mag_of_level[m + 1] / mag_of_level[m];
    const int k = static_cast<int>(std::lround(r));
    if (k < 1 || std::abs(r - k) > 1e-9)
      throw DataError("non-integer magnification ratio between levels " +
                      std::to_string(m) + " and " + std::to_string(m + 1));
    ratio[m] = k;
  }

  // Tissue tiles become vertices, sorted (level, row, col).
  std::vector<const TileRecord*> tissue;
  for (const auto& t : tiles)
    if (t.tissue) tissue.push_back(&t);
  std::sort(tissue.begin(), tissue.end(),
            [](const TileRecord* a, const TileRecord* b) {
              return std::tie(a->mag_level, a->row, a->col) <
                     std::tie(b->mag_level, b->row, b->col);
            });

  const int V = static_cast<int>(tissue.size());
  std::map<std::tuple<int, int, int>, uint32_t> index;
  for (int i = 0; i < V; ++i) {
    const auto* t = tissue[i];
    g.vertices.push_back({t->mag_level, t->row, t->col});
    index[{t->mag_level, t->row, t->col}] = static_cast<uint32_t>(i);
  }

  std::vector<std::vector<std::pair<uint32_t, EdgeKind>>> adj(V);
  auto link = [&](uint32_t a, uint32_t b, EdgeKind k) {
    adj[a].emplace_back(b, k);
    adj[b].emplace_back(a, k);
  };
  for (int i = 0; i < V; ++i) {
    const Vertex& v = g.vertices[i];
    if (v.mag_level == 1) {
      // Right and down neighbors only, so each pair is linked once.
      for (auto [dr, dc] : {std::pair{0, 1}, std::pair{1, 0}}) {
        auto it = index.find({1, v.row + dr, v.col + dc});
        if (it != index.end())
          link(static_cast<uint32_t>(i), it->second, EdgeKind::Spatial);
      }
    }
    if (v.mag_level >= 2) {
      const int k = ratio[v.mag_level - 1];
      auto it = index.find({v.mag_level - 1, v.row / k, v.col / k});
      if (it != index.end())
        link(static_cast<uint32_t>(i), it->second, EdgeKind::Magnification);
    }
  }

  g.csr_offsets.assign(V + 1, 0);
  for (int i = 0; i < V; ++i) {
    std::sort(adj[i].begin(), adj[i].end());
    g.csr_offsets[i + 1] = g.csr_offsets[i] + adj[i].size();
    for (auto [tgt, kind] : adj[i]) {
      g.csr_targets.push_back(tgt);
      g.csr_kinds.push_back(kind);
    }
  }

  // Feature matrix, one provider row per vertex.
  const uint32_t d = V > 0 ? features.dim_for(*tissue[0]) : 0;
  g.feature_dim = d;
  g.features.resize(static_cast<size_t>(V) * d);
  for (int i = 0; i < V; ++i)
    features.fetch(*tissue[i], g.features.data() + static_cast<size_t>(i) * d);

  return g;
}

struct GraphStats {
  int num_vertices = 0;
  uint64_t spatial_edges = 0;        // undirected
  uint64_t magnification_edges = 0;  // undirected
  std::vector<int> vertices_per_level;
  std::map<uint64_t, int> degree_histogram;
};

inline GraphStats graph_stats(const MultiScaleGraph& g) {
  GraphStats s;
  s.num_vertices = g.num_vertices();
  s.vertices_per_level.assign(g.num_levels, 0);
  for (const auto& v : g.vertices) ++s.vertices_per_level[v.mag_level - 1];
  for (EdgeKind k : g.csr_kinds)
    (k == EdgeKind::Spatial ? s.spatial_edges : s.magnification_edges) += 1;
  s.spatial_edges /= 2;
  s.magnification_edges /= 2;
  for (int i = 0; i < s.num_vertices; ++i)
    ++s.degree_histogram[g.csr_offsets[i + 1] - g.csr_offsets[i]];
  return s;
}

// MSGG graph file. Header: magic, version, V, directed slot count, M, d,
// level magnifications. Body: vertex records, CSR offsets, targets, kinds,
// features. Footer: CRC32 of the body.
inline void save_graph(const MultiScaleGraph& g,
                       const std::filesystem::path& path) {
  ByteWriter w;
  w.str("MSGG");
  w.u32(1);
  w.u32(static_cast<uint32_t>(g.num_vertices()));
  w.u64(g.num_directed_slots());
  w.u32(static_cast<uint32_t>(g.num_levels));
  w.u32(g.feature_dim);
  for (float m : g.level_magnifications) w.f32(m);
  const size_t body_start = w.size();
  for (const auto& v : g.vertices) {
    w.u8(static_cast<uint8_t>(v.mag_level));
    w.u32(static_cast<uint32_t>(v.row));
    w.u32(static_cast<uint32_t>(v.col));
  }
  for (uint64_t o : g.csr_offsets) w.u64(o);
  for (uint32_t t : g.csr_targets) w.u32(t);
  for (EdgeKind k : g.csr_kinds) w.u8(static_cast<uint8_t>(k));
  w.bytes(g.features.data(), g.features.size() * sizeof(float));
  w.u32(w.crc_from(body_start));
  w.save(path);
}

// wsi_id is not stored in the file; it is recovered from the file stem.
inline MultiScaleGraph load_graph(const std::filesystem::path& path) {
  ByteReader r = ByteReader::from_file(path);
  if (r.str(4) != "MSGG") throw IoError("bad magic in graph file " + path.string());
  if (r.u32() != 1) throw IoError("unsupported graph file version");
  MultiScaleGraph g;
  g.wsi_id = path.stem().string();
  const uint32_t V = r.u32();
  const uint64_t slots = r.u64();
  g.num_levels = static_cast<int>(r.u32());
  g.feature_dim = r.u32();
  g.level_magnifications.resize(g.num_levels);
  for (float& m : g.level_magnifications) m = r.f32();
  const size_t body_start = r.pos();
  g.vertices.resize(V);
  for (auto& v : g.vertices) {
    v.mag_level = r.u8();
    v.row = static_cast<int>(r.u32());
    v.col = static_cast<int>(r.u32());
  }
  g.csr_offsets.resize(V + 1);
  for (auto& o : g.csr_offsets) o = r.u64();
  g.csr_targets.resize(slots);
  for (auto& t : g.csr_targets) t = r.u32();
  g.csr_kinds.resize(slots);
  for (auto& k : g.csr_kinds) k = static_cast<EdgeKind>(r.u8());
  g.features.resize(static_cast<size_t>(V) * g.feature_dim);
  r.bytes(g.features.data(), g.features.size() * sizeof(float));
  const size_t body_end = r.pos();
  const uint32_t want = r.u32();
  if (r.crc_range(body_start, body_end) != want)
    throw IoError("graph file checksum mismatch in " + path.string());
  return g;
}

}  // namespace msgcn
