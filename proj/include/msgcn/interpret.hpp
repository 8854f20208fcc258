#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "msgcn/graph.hpp"

namespace msgcn {

// Per-magnification attention weights of one graph, in vertex-index order.
inline std::vector<std::vector<double>> split_attention(
    const std::vector<double>& z, const MultiScaleGraph& g) {
  if (z.size() != static_cast<size_t>(g.num_vertices()))
    throw DataError("split_attention: |z| != V");
  std::vector<std::vector<double>> out(g.num_levels);
  for (size_t i = 0; i < z.size(); ++i)
    out[g.vertices[i].mag_level - 1].push_back(z[i]);
  return out;
}

struct InfluenceReport {
  std::string dataset_id;
  std::vector<double> per_level_scores;   // sums to 1
  std::vector<double> per_level_medians;  // pooled medians before normalization
  std::vector<size_t> per_level_pool_sizes;
  // num_wsis × M; NaN marks a WSI that has no vertices at that level.
  std::vector<std::vector<double>> per_wsi_medians;
  std::vector<std::string> wsi_ids;
  std::vector<std::string> warnings;
};

namespace detail {
// Even-length median = mean of the two central order statistics.
inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
}  // namespace detail

// Average scaled influence scores: attention entries are pooled per level
// across all WSIs (ascending wsi_id), one median is taken per level, and
// the medians are normalized by their sum.
inline InfluenceReport influence_scores(
    const std::vector<const MultiScaleGraph*>& graphs,
    const std::vector<std::vector<double>>& zs,
    const std::string& dataset_id = "") {
  if (graphs.empty() || graphs.size() != zs.size())
    throw DataError("influence_scores: need one z per graph");
  const int M = graphs.front()->num_levels;
  for (const auto* g : graphs)
    if (g->num_levels != M)
      throw DataError("influence_scores: graphs disagree on level count");

  std::vector<size_t> order(graphs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return graphs[a]->wsi_id < graphs[b]->wsi_id;
  });

  InfluenceReport rep;
  rep.dataset_id = dataset_id;
  std::vector<std::vector<double>> pool(M);
  for (size_t oi : order) {
    auto per_level = split_attention(zs[oi], *graphs[oi]);
    rep.wsi_ids.push_back(graphs[oi]->wsi_id);
    std::vector<double> wsi_medians(M, std::numeric_limits<double>::quiet_NaN());
    for (int m = 0; m < M; ++m) {
      if (!per_level[m].empty()) wsi_medians[m] = detail::median(per_level[m]);
      pool[m].insert(pool[m].end(), per_level[m].begin(), per_level[m].end());
    }
    rep.per_wsi_medians.push_back(std::move(wsi_medians));
  }

  double sum = 0.0;
  for (int m = 0; m < M; ++m) {
    rep.per_level_pool_sizes.push_back(pool[m].size());
    if (pool[m].empty()) {
      rep.per_level_medians.push_back(0.0);
      rep.warnings.push_back("level " + std::to_string(m + 1) +
                             " has no vertices in any WSI; score set to 0");
    } else {
      rep.per_level_medians.push_back(detail::median(pool[m]));
    }
    sum += rep.per_level_medians.back();
  }
  if (sum <= 0.0)
    throw DataError("influence_scores: all level medians are zero");
  for (double med : rep.per_level_medians)
    rep.per_level_scores.push_back(med / sum);
  return rep;
}

inline nlohmann::ordered_json influence_report_json(
    const InfluenceReport& rep, const std::string& model_hash,
    const std::string& dataset_hash) {
  nlohmann::ordered_json j;
  j["dataset_id"] = rep.dataset_id;
  j["per_level_scores"] = rep.per_level_scores;
  j["per_level_medians"] = rep.per_level_medians;
  j["per_level_pool_sizes"] = rep.per_level_pool_sizes;
  j["num_wsis"] = rep.wsi_ids.size();
  j["warnings"] = rep.warnings;
  j["provenance"] = {{"model_hash", model_hash}, {"dataset_hash", dataset_hash}};
  return j;
}

// Heatmap export for one magnification level: a CSV of raw and min-max
// scaled attention per grid cell, and a P5 PGM raster (missing cells = 0).
// A single-valued level scales to 1.0.
inline void export_heatmap(const MultiScaleGraph& g,
                           const std::vector<double>& z, int mag_level,
                           const std::filesystem::path& csv_path,
                           const std::filesystem::path& pgm_path) {
  if (z.size() != static_cast<size_t>(g.num_vertices()))
    throw DataError("export_heatmap: |z| != V");
  if (mag_level < 1 || mag_level > g.num_levels)
    throw DataError("export_heatmap: level " + std::to_string(mag_level) +
                    " not in graph");
  struct Entry {
    int row, col;
    double raw;
  };
  std::vector<Entry> entries;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  int max_row = 0, max_col = 0;
  for (size_t i = 0; i < z.size(); ++i) {
    const Vertex& v = g.vertices[i];
    if (v.mag_level != mag_level) continue;
    entries.push_back({v.row, v.col, z[i]});
    lo = std::min(lo, z[i]);
    hi = std::max(hi, z[i]);
    max_row = std::max(max_row, v.row);
    max_col = std::max(max_col, v.col);
  }
  if (entries.empty())
    throw DataError("export_heatmap: level " + std::to_string(mag_level) +
                    " has no vertices");
  auto scaled = [&](double raw) {
    return hi > lo ? (raw - lo) / (hi - lo) : 1.0;
  };

  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  csv << "row,col,attention_raw,attention_scaled\n";
  for (const auto& e : entries) {
    std::ostringstream row;
    row.precision(17);
    row << e.row << "," << e.col << "," << e.raw << "," << scaled(e.raw);
    csv << row.str() << "\n";
  }

  const int rows = max_row + 1, cols = max_col + 1;
  std::vector<uint8_t> img(static_cast<size_t>(rows) * cols, 0);
  for (const auto& e : entries)
    img[static_cast<size_t>(e.row) * cols + e.col] =
        static_cast<uint8_t>(std::lround(255.0 * scaled(e.raw)));
  std::ofstream pgm(pgm_path, std::ios::binary);
  if (!pgm) throw IoError("cannot write " + pgm_path.string());
  pgm << "P5\n" << cols << " " << rows << "\n255\n";
  pgm.write(reinterpret_cast<const char*>(img.data()),
            static_cast<std::streamsize>(img.size()));
}

}  // namespace msgcn
