#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "msgcn/graph.hpp"
#include "msgcn/manifest.hpp"
#include "oracle.hpp"

using namespace msgcn;
namespace fs = std::filesystem;

namespace {

TileRecord tile(const std::string& wsi, int level, double mag, int row,
                int col, bool tissue = true) {
  TileRecord t;
  t.wsi_id = wsi;
  t.mag_level = level;
  t.magnification = mag;
  t.row = row;
  t.col = col;
  t.tissue = tissue;
  t.feature_file = "f.msgf";
  return t;
}

// Full grids at every level for the given base grid and ratios.
std::vector<TileRecord> full_pyramid(int rows1, int cols1,
                                     const std::vector<double>& mags) {
  std::vector<TileRecord> tiles;
  int r = rows1, c = cols1;
  double scale = 1.0;
  for (size_t m = 0; m < mags.size(); ++m) {
    if (m > 0) {
      const int k = static_cast<int>(std::lround(mags[m] / mags[m - 1]));
      r *= k;
      c *= k;
    }
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        tiles.push_back(tile("w", static_cast<int>(m) + 1, mags[m], i, j));
  }
  return tiles;
}

fs::path tmpdir() {
  auto p = fs::temp_directory_path() / "msgcn_graph_test";
  fs::create_directories(p);
  return p;
}

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p, std::ios::binary);
  for (const auto& l : lines) out << l << "\n";
}

}  // namespace

TEST_CASE("parse_manifest: basic grouping") {
  auto p = tmpdir() / "m1.jsonl";
  write_lines(p, {
    R"({"wsi_id":"w1","mag_level":1,"magnification":1.0,"row":0,"col":0,"tissue":true,"feature_file":"f","feature_index":0})",
    R"({"wsi_id":"w1","mag_level":1,"magnification":1.0,"row":0,"col":1,"tissue":true,"feature_file":"f","feature_index":1})",
    R"({"wsi_id":"w1","mag_level":1,"magnification":1.0,"row":1,"col":0,"tissue":false,"feature_file":"f","feature_index":2})",
  });
  auto groups = parse_manifest(p);
  REQUIRE(groups.size() == 1);
  CHECK(groups.at("w1").size() == 3);
}

TEST_CASE("parse_manifest: empty file") {
  auto p = tmpdir() / "empty.jsonl";
  write_lines(p, {});
  CHECK(parse_manifest(p).empty());
}

TEST_CASE("parse_manifest: duplicate key names the key") {
  auto p = tmpdir() / "dup.jsonl";
  const std::string line =
      R"({"wsi_id":"w1","mag_level":1,"magnification":1.0,"row":0,"col":0,"tissue":true,"feature_file":"f","feature_index":0})";
  write_lines(p, {line, line});
  CHECK_THROWS_WITH_AS(parse_manifest(p),
                       doctest::Contains("duplicate tile key (w1, 1, 0, 0)"),
                       DataError);
}

TEST_CASE("parse_manifest: malformed line reports line number") {
  auto p = tmpdir() / "bad.jsonl";
  write_lines(p, {
    R"({"wsi_id":"w1","mag_level":1,"magnification":1.0,"row":0,"col":0,"tissue":true,"feature_file":"f","feature_index":0})",
    "not json",
  });
  CHECK_THROWS_WITH_AS(parse_manifest(p), doctest::Contains("line 2"),
                       DataError);
}

TEST_CASE("parse_manifest: mag_level gap rejected") {
  auto p = tmpdir() / "gap.jsonl";
  write_lines(p, {
    R"({"wsi_id":"w1","mag_level":1,"magnification":1.0,"row":0,"col":0,"tissue":true,"feature_file":"f","feature_index":0})",
    R"({"wsi_id":"w1","mag_level":3,"magnification":10.0,"row":0,"col":0,"tissue":true,"feature_file":"f","feature_index":1})",
  });
  CHECK_THROWS_WITH_AS(parse_manifest(p), doctest::Contains("gap"), DataError);
}

TEST_CASE("build_graph: 2x2 over 4x4 pyramid") {
  testing::StubFeatureProvider feats(3);
  auto g = build_graph(full_pyramid(2, 2, {1.0, 2.0}), feats);
  auto s = graph_stats(g);
  CHECK(s.num_vertices == 20);
  CHECK(s.spatial_edges == 4);
  CHECK(s.magnification_edges == 16);
  CHECK(g.num_edges() == 20);
  CHECK(s.vertices_per_level == std::vector<int>{4, 16});
  CHECK(testing::edges_of(g) ==
        testing::brute_force_edges(full_pyramid(2, 2, {1.0, 2.0})));
}

TEST_CASE("build_graph: single tile") {
  testing::StubFeatureProvider feats(2);
  auto g = build_graph({tile("w", 1, 1.0, 0, 0)}, feats);
  CHECK(g.num_vertices() == 1);
  CHECK(g.num_edges() == 0);
  CHECK(g.feature_dim == 2);
}

TEST_CASE("build_graph: parent with full 5x5 child block hits the bound") {
  std::vector<TileRecord> tiles = {tile("w", 1, 1.0, 0, 0)};
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) tiles.push_back(tile("w", 2, 5.0, r, c));
  testing::StubFeatureProvider feats(1);
  auto g = build_graph(tiles, feats);
  auto s = graph_stats(g);
  CHECK(s.magnification_edges == 25);  // (5/1)^2
  CHECK(g.csr_offsets[1] - g.csr_offsets[0] == 25);  // vertex 0 is the parent
  CHECK(testing::edges_of(g) == testing::brute_force_edges(tiles));
}

TEST_CASE("build_graph: 3x1 strip is a path") {
  std::vector<TileRecord> tiles = {tile("w", 1, 1.0, 0, 0),
                                   tile("w", 1, 1.0, 1, 0),
                                   tile("w", 1, 1.0, 2, 0)};
  testing::StubFeatureProvider feats(1);
  auto s = graph_stats(build_graph(tiles, feats));
  CHECK(s.num_vertices == 3);
  CHECK(s.spatial_edges == 2);
  CHECK(s.magnification_edges == 0);
}

TEST_CASE("graph_stats: empty graph") {
  testing::StubFeatureProvider feats(1);
  auto s = graph_stats(build_graph({}, feats));
  CHECK(s.num_vertices == 0);
  CHECK(s.spatial_edges == 0);
  CHECK(s.magnification_edges == 0);
}

TEST_CASE("build_graph: non-integer magnification ratio rejected") {
  std::vector<TileRecord> tiles = {tile("w", 1, 2.0, 0, 0),
                                   tile("w", 2, 5.0, 0, 0)};
  testing::StubFeatureProvider feats(1);
  CHECK_THROWS_WITH_AS(build_graph(tiles, feats),
                       doctest::Contains("non-integer"), DataError);
}

TEST_CASE("oracle equivalence on random manifests") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const int M = 1 + static_cast<int>(rng.below(4));
    std::vector<double> mags = {1.0};
    for (int m = 1; m < M; ++m)
      mags.push_back(mags.back() * (rng.uniform() < 0.5 ? 2.0 : 5.0));
    std::vector<TileRecord> tiles;
    int r = 3, c = 3;
    double prob = 0.7;
    for (int m = 0; m < M; ++m) {
      if (m > 0) {
        const int k = static_cast<int>(std::lround(mags[m] / mags[m - 1]));
        r *= k;
        c *= k;
        prob *= 0.35;
      }
      for (int i = 0; i < r && tiles.size() < 200; ++i)
        for (int j = 0; j < c && tiles.size() < 200; ++j)
          if (rng.uniform() < prob)
            tiles.push_back(tile("w", m + 1, mags[m], i, j,
                                 rng.uniform() < 0.8));
    }
    if (tiles.empty()) continue;
    testing::StubFeatureProvider feats(1);
    auto g = build_graph(tiles, feats);
    CHECK(testing::edges_of(g) == testing::brute_force_edges(tiles));
  }
}

TEST_CASE("closed-form spatial edge count on full level-1 grids") {
  testing::StubFeatureProvider feats(1);
  for (auto [R, C] : {std::pair{6, 6}, std::pair{3, 7}, std::pair{1, 9}}) {
    std::vector<TileRecord> tiles;
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < C; ++j) tiles.push_back(tile("w", 1, 1.0, i, j));
    auto s = graph_stats(build_graph(tiles, feats));
    CHECK(s.spatial_edges == static_cast<uint64_t>(R * (C - 1) + C * (R - 1)));
  }
}

TEST_CASE("full pyramids: one parent per child") {
  testing::StubFeatureProvider feats(1);
  auto tiles = full_pyramid(2, 3, {1.0, 5.0, 10.0, 20.0});
  auto g = build_graph(tiles, feats);
  auto s = graph_stats(g);
  uint64_t above_level1 = 0;
  for (size_t m = 1; m < s.vertices_per_level.size(); ++m)
    above_level1 += s.vertices_per_level[m];
  CHECK(s.magnification_edges == above_level1);
}

TEST_CASE("determinism: identical manifest gives bit-identical serialized graph") {
  testing::StubFeatureProvider feats(4);
  auto tiles = full_pyramid(2, 2, {1.0, 2.0});
  auto d = tmpdir();
  save_graph(build_graph(tiles, feats), d / "a.msgg");
  save_graph(build_graph(tiles, feats), d / "b.msgg");
  std::ifstream fa(d / "a.msgg", std::ios::binary);
  std::ifstream fb(d / "b.msgg", std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)), {});
  std::string sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(sa == sb);
  CHECK(!sa.empty());
}

TEST_CASE("graph file round trip and corruption handling") {
  testing::StubFeatureProvider feats(4);
  auto g = build_graph(full_pyramid(2, 2, {1.0, 2.0}), feats);
  g.wsi_id = "w";
  auto d = tmpdir();
  auto p = d / "w.msgg";
  save_graph(g, p);
  auto g2 = load_graph(p);
  CHECK(g2 == g);

  // wrong magic
  {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_WITH_AS(load_graph(p), doctest::Contains("bad magic"), IoError);

  save_graph(g, p);
  // truncation
  fs::resize_file(p, fs::file_size(p) / 2);
  CHECK_THROWS_WITH_AS(load_graph(p), doctest::Contains("truncated"), IoError);

  save_graph(g, p);
  // flip a body byte -> checksum failure
  {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(fs::file_size(p)) - 12);
    char b;
    f.seekg(f.tellp());
    f.read(&b, 1);
    b ^= 0x1;
    f.seekp(static_cast<std::streamoff>(fs::file_size(p)) - 12);
    f.write(&b, 1);
  }
  CHECK_THROWS_WITH_AS(load_graph(p), doctest::Contains("checksum"), IoError);
}
