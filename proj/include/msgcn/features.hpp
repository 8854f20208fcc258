#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "msgcn/io.hpp"
#include "msgcn/manifest.hpp"
#include "msgcn/rng.hpp"

namespace msgcn {

// In-memory image of one feature file: num_vectors × dim f32, row-major.
struct FeatureMatrix {
  uint32_t num_vectors = 0;
  uint32_t dim = 0;
  std::vector<float> data;

  const float* row(uint64_t i) const {
    if (i >= num_vectors)
      throw DataError("feature index out of range: " + std::to_string(i) +
                      " >= " + std::to_string(num_vectors));
    return data.data() + i * dim;
  }
};

inline void write_features(const std::filesystem::path& path,
                           const FeatureMatrix& m) {
  ByteWriter w;
  w.str("MSGF");
  w.u32(1);
  w.u32(m.num_vectors);
  w.u32(m.dim);
  w.bytes(m.data.data(), m.data.size() * sizeof(float));
  w.save(path);
}

inline FeatureMatrix load_features(const std::filesystem::path& path) {
  ByteReader r = ByteReader::from_file(path);
  if (r.str(4) != "MSGF") throw IoError("bad magic in feature file " + path.string());
  if (r.u32() != 1) throw IoError("unsupported feature file version");
  FeatureMatrix m;
  m.num_vectors = r.u32();
  m.dim = r.u32();
  m.data.resize(static_cast<size_t>(m.num_vectors) * m.dim);
  r.bytes(m.data.data(), m.data.size() * sizeof(float));
  return m;
}

inline FeatureMatrix read_features(const std::filesystem::path& path,
                                   const std::vector<uint64_t>& indices) {
  FeatureMatrix all = load_features(path);
  FeatureMatrix out;
  out.num_vectors = static_cast<uint32_t>(indices.size());
  out.dim = all.dim;
  out.data.reserve(indices.size() * all.dim);
  for (uint64_t i : indices) {
    const float* r = all.row(i);
    out.data.insert(out.data.end(), r, r + all.dim);
  }
  return out;
}

// Supplies one feature vector per tile. Implementations must be stateless
// after construction (safe to share across threads).
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual uint32_t dim() const = 0;
  virtual void fetch(const TileRecord& tile, float* out) const = 0;
  // Dimension probe given a concrete tile; file-backed providers use it to
  // learn d from the file header before the first fetch.
  virtual uint32_t dim_for(const TileRecord&) const { return dim(); }
};

// Reads feature files referenced by the manifest, resolving relative paths
// against a base directory. Files are loaded lazily and cached.
class FileFeatureProvider : public FeatureProvider {
 public:
  explicit FileFeatureProvider(std::filesystem::path base_dir)
      : base_(std::move(base_dir)) {}

  uint32_t dim() const override {
    if (dim_ == 0) throw DataError("feature dimension unknown before first fetch");
    return dim_;
  }

  void fetch(const TileRecord& tile, float* out) const override {
    const FeatureMatrix& m = file(tile.feature_file);
    const float* r = m.row(tile.feature_index);
    std::copy(r, r + m.dim, out);
  }

  uint32_t dim_for(const TileRecord& tile) const override {
    return file(tile.feature_file).dim;
  }

 private:
  const FeatureMatrix& file(const std::string& ref) const {
    auto it = cache_.find(ref);
    if (it == cache_.end()) {
      std::filesystem::path p(ref);
      if (p.is_relative()) p = base_ / p;
      it = cache_.emplace(ref, load_features(p)).first;
      if (dim_ == 0)
        dim_ = it->second.dim;
      else if (dim_ != it->second.dim)
        throw DataError("feature dimension mismatch across files: " +
                        std::to_string(dim_) + " vs " +
                        std::to_string(it->second.dim));
    }
    return it->second;
  }

  std::filesystem::path base_;
  mutable std::map<std::string, FeatureMatrix> cache_;
  mutable uint32_t dim_ = 0;
};

enum class SyntheticTask { Structure, Cellular };

// Desk-scale synthetic dataset. The class signal is a mean shift of
// ±signal_strength on a fixed 16-dimensional coordinate subspace, planted
// at level 1 for Structure (together with blob-vs-strip level-1 masks) and
// at level M for Cellular (identical masks for both classes). All other
// levels carry pure N(0, noise_sigma²) noise.
struct SyntheticDatasetSpec {
  int num_wsis = 40;
  int num_levels = 4;
  std::vector<double> level_magnifications = {1.0, 5.0, 10.0, 20.0};
  int grid_rows = 6;
  int grid_cols = 6;
  SyntheticTask task = SyntheticTask::Structure;
  double signal_strength = 1.5;
  double noise_sigma = 1.0;
  int dim = 64;
  uint64_t seed = 0;
  double class_balance = 0.5;
  // Probability that a child tile of a tissue parent is itself tissue;
  // keeps higher pyramid levels sparse enough for desk-scale graphs.
  double child_tissue_prob = 0.3;
  int signal_dims = 16;
};

inline void to_json(nlohmann::ordered_json& j, const SyntheticDatasetSpec& s) {
  j = {{"num_wsis", s.num_wsis},
       {"num_levels", s.num_levels},
       {"level_magnifications", s.level_magnifications},
       {"grid_rows", s.grid_rows},
       {"grid_cols", s.grid_cols},
       {"task", s.task == SyntheticTask::Structure ? "structure" : "cellular"},
       {"signal_strength", s.signal_strength},
       {"noise_sigma", s.noise_sigma},
       {"dim", s.dim},
       {"seed", s.seed},
       {"class_balance", s.class_balance},
       {"child_tissue_prob", s.child_tissue_prob},
       {"signal_dims", s.signal_dims}};
}

inline void from_json(const nlohmann::json& j, SyntheticDatasetSpec& s) {
  s.num_wsis = j.value("num_wsis", s.num_wsis);
  s.num_levels = j.value("num_levels", s.num_levels);
  if (j.contains("level_magnifications"))
    s.level_magnifications =
        j.at("level_magnifications").get<std::vector<double>>();
  s.grid_rows = j.value("grid_rows", s.grid_rows);
  s.grid_cols = j.value("grid_cols", s.grid_cols);
  if (j.contains("task")) {
    const std::string t = j.at("task").get<std::string>();
    if (t == "structure")
      s.task = SyntheticTask::Structure;
    else if (t == "cellular")
      s.task = SyntheticTask::Cellular;
    else
      throw DataError("unknown synthetic task: " + t);
  }
  s.signal_strength = j.value("signal_strength", s.signal_strength);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.dim = j.value("dim", s.dim);
  s.seed = j.value("seed", s.seed);
  s.class_balance = j.value("class_balance", s.class_balance);
  s.child_tissue_prob = j.value("child_tissue_prob", s.child_tissue_prob);
  s.signal_dims = j.value("signal_dims", s.signal_dims);
}

struct SyntheticPaths {
  std::filesystem::path manifest;
  std::filesystem::path labels;
  std::filesystem::path feature_dir;
};

namespace detail {

struct Cell {
  int row, col;
  bool operator<(const Cell& o) const {
    return row != o.row ? row < o.row : col < o.col;
  }
};

// 12-tile level-1 masks. Blob: 3×4 rectangle; strip: 2×6. Orientation and
// offset are randomized; Cellular uses a fixed centered blob.
inline std::set<Cell> level1_mask(const SyntheticDatasetSpec& spec, int label,
                                  Rng& rng) {
  const int R = spec.grid_rows, C = spec.grid_cols;
  int h, w;
  bool random_place = true;
  if (spec.task == SyntheticTask::Cellular) {
    h = std::min(3, R);
    w = std::min(4, C);
    random_place = false;
  } else if (label == 0) {
    h = std::min(3, R);
    w = std::min(4, C);
    if (rng.uniform() < 0.5) std::swap(h, w);
    h = std::min(h, R);
    w = std::min(w, C);
  } else {
    h = std::min(2, R);
    w = std::min(6, C);
    if (rng.uniform() < 0.5) std::swap(h, w);
    h = std::min(h, R);
    w = std::min(w, C);
  }
  int r0, c0;
  if (random_place) {
    r0 = static_cast<int>(rng.below(static_cast<uint64_t>(R - h + 1)));
    c0 = static_cast<int>(rng.below(static_cast<uint64_t>(C - w + 1)));
  } else {
    r0 = (R - h) / 2;
    c0 = (C - w) / 2;
  }
  std::set<Cell> mask;
  for (int r = r0; r < r0 + h; ++r)
    for (int c = c0; c < c0 + w; ++c) mask.insert({r, c});
  return mask;
}

}  // namespace detail

// Emits <out>/tiles.jsonl, <out>/features/<wsi>.msgf, <out>/labels.csv.
// Identical specs produce identical bytes.
inline SyntheticPaths generate_synthetic(const SyntheticDatasetSpec& spec,
                                         const std::filesystem::path& out_dir) {
  if (spec.num_wsis < 1 || spec.num_levels < 1 || spec.dim < 1)
    throw DataError("invalid synthetic spec");
  if (static_cast<int>(spec.level_magnifications.size()) != spec.num_levels)
    throw DataError("level_magnifications size must equal num_levels");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "features", ec);
  if (ec) throw IoError("cannot create output directory: " + out_dir.string());

  Rng rng(Rng::derive(spec.seed, "synth"));

  // Signal subspace: distinct coordinates, dataset-level.
  std::vector<int> all_dims(spec.dim);
  for (int i = 0; i < spec.dim; ++i) all_dims[i] = i;
  rng.shuffle(all_dims);
  const int nsig = std::min(spec.signal_dims, spec.dim);
  std::set<int> signal(all_dims.begin(), all_dims.begin() + nsig);

  // Labels balanced to within one WSI of class_balance, then shuffled.
  const int n1 = static_cast<int>(std::lround(spec.num_wsis * spec.class_balance));
  std::vector<int> labels(spec.num_wsis, 0);
  for (int i = 0; i < n1; ++i) labels[i] = 1;
  rng.shuffle(labels);

  const int signal_level =
      spec.task == SyntheticTask::Structure ? 1 : spec.num_levels;

  std::ofstream manifest(out_dir / "tiles.jsonl", std::ios::binary);
  std::ofstream labels_csv(out_dir / "labels.csv", std::ios::binary);
  if (!manifest || !labels_csv)
    throw IoError("cannot write to output directory: " + out_dir.string());
  labels_csv << "wsi_id,label\n";

  for (int w = 0; w < spec.num_wsis; ++w) {
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "wsi%04d", w);
    const std::string wsi_id = idbuf;
    labels_csv << wsi_id << "," << labels[w] << "\n";

    // Tissue masks, level by level.
    std::vector<std::set<detail::Cell>> tissue(spec.num_levels + 1);
    tissue[1] = detail::level1_mask(spec, labels[w], rng);
    for (int m = 1; m < spec.num_levels; ++m) {
      const double ratio =
          spec.level_magnifications[m] / spec.level_magnifications[m - 1];
      const int k = static_cast<int>(std::lround(ratio));
      for (const auto& parent : tissue[m])
        for (int dr = 0; dr < k; ++dr)
          for (int dc = 0; dc < k; ++dc)
            if (rng.uniform() < spec.child_tissue_prob)
              tissue[m + 1].insert({parent.row * k + dr, parent.col * k + dc});
    }

    // Feature rows for tissue tiles in (level, row, col) order.
    FeatureMatrix feats;
    feats.dim = static_cast<uint32_t>(spec.dim);
    const std::string feat_file = wsi_id + ".msgf";
    uint64_t next_index = 0;

    auto emit_tile = [&](int level, int row, int col, bool is_tissue) {
      TileRecord t;
      t.wsi_id = wsi_id;
      t.mag_level = level;
      t.magnification = spec.level_magnifications[level - 1];
      t.row = row;
      t.col = col;
      t.tissue = is_tissue;
      t.feature_file = feat_file;
      t.feature_index = is_tissue ? next_index : 0;
      nlohmann::ordered_json j;
      to_json(j, t);
      manifest << j.dump() << "\n";
      if (is_tissue) {
        ++next_index;
        const double shift =
            level == signal_level
                ? (labels[w] == 1 ? spec.signal_strength : -spec.signal_strength)
                : 0.0;
        for (int d = 0; d < spec.dim; ++d) {
          double x = spec.noise_sigma * rng.normal();
          if (shift != 0.0 && signal.count(d)) x += shift;
          feats.data.push_back(static_cast<float>(x));
        }
        ++feats.num_vectors;
      }
    };

    // Level 1 lists the full grid with tissue flags; higher levels list
    // tissue tiles only.
    for (int r = 0; r < spec.grid_rows; ++r)
      for (int c = 0; c < spec.grid_cols; ++c)
        emit_tile(1, r, c, tissue[1].count({r, c}) > 0);
    for (int m = 2; m <= spec.num_levels; ++m)
      for (const auto& cell : tissue[m]) emit_tile(m, cell.row, cell.col, true);

    write_features(out_dir / "features" / feat_file, feats);
  }

  return {out_dir / "tiles.jsonl", out_dir / "labels.csv",
          out_dir / "features"};
}

}  // namespace msgcn
