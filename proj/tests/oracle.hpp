#pragma once

// Test-only oracles, independent of the library's construction path.

#include <cmath>
#include <cstdlib>
#include <map>
#include <set>
#include <tuple>
#include <vector>

#include "msgcn/graph.hpp"
#include "msgcn/manifest.hpp"

namespace msgcn::testing {

using EdgeSet = std::set<std::tuple<int, int, int>>;  // (i, j, kind), i < j

// O(V²) evaluation of the two set-builder edge definitions over the tissue
// tiles, after assigning vertex indices by the canonical sort.
inline EdgeSet brute_force_edges(const std::vector<TileRecord>& tiles) {
  std::vector<const TileRecord*> tissue;
  for (const auto& t : tiles)
    if (t.tissue) tissue.push_back(&t);
  std::sort(tissue.begin(), tissue.end(),
            [](const TileRecord* a, const TileRecord* b) {
              return std::tie(a->mag_level, a->row, a->col) <
                     std::tie(b->mag_level, b->row, b->col);
            });
  std::map<int, double> mag;
  for (const auto* t : tissue) mag[t->mag_level] = t->magnification;

  EdgeSet edges;
  for (size_t i = 0; i < tissue.size(); ++i)
    for (size_t j = i + 1; j < tissue.size(); ++j) {
      const auto& a = *tissue[i];
      const auto& b = *tissue[j];
      if (a.mag_level == 1 && b.mag_level == 1 &&
          std::abs(a.row - b.row) + std::abs(a.col - b.col) == 1)
        edges.insert({int(i), int(j), 0});
      if (std::abs(a.mag_level - b.mag_level) == 1) {
        const auto& parent = a.mag_level < b.mag_level ? a : b;
        const auto& child = a.mag_level < b.mag_level ? b : a;
        const int k = static_cast<int>(
            std::lround(mag[child.mag_level] / mag[parent.mag_level]));
        if (child.row / k == parent.row && child.col / k == parent.col)
          edges.insert({int(i), int(j), 1});
      }
    }
  return edges;
}

inline EdgeSet edges_of(const MultiScaleGraph& g) {
  EdgeSet edges;
  for (int i = 0; i < g.num_vertices(); ++i)
    for (uint64_t s = g.csr_offsets[i]; s < g.csr_offsets[i + 1]; ++s) {
      const int j = static_cast<int>(g.csr_targets[s]);
      if (i < j) edges.insert({i, j, static_cast<int>(g.csr_kinds[s])});
    }
  return edges;
}

// Provider returning a deterministic function of the tile identity.
class StubFeatureProvider : public msgcn::FeatureProvider {
 public:
  explicit StubFeatureProvider(uint32_t d) : d_(d) {}
  uint32_t dim() const override { return d_; }
  void fetch(const TileRecord& t, float* out) const override {
    for (uint32_t k = 0; k < d_; ++k)
      out[k] = static_cast<float>(t.mag_level * 1000 + t.row * 37 + t.col * 11 +
                                  static_cast<int>(k));
  }

 private:
  uint32_t d_;
};

}  // namespace msgcn::testing
