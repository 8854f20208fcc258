#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "msgcn/error.hpp"

namespace msgcn {

// One tile of one WSI at one magnification level. Levels are 1-based with
// level 1 the lowest magnification.
struct TileRecord {
  std::string wsi_id;
  int mag_level = 0;
  double magnification = 0.0;
  int row = 0;
  int col = 0;
  bool tissue = false;
  std::string feature_file;
  uint64_t feature_index = 0;
};

inline void to_json(nlohmann::ordered_json& j, const TileRecord& t) {
  j = nlohmann::ordered_json{{"wsi_id", t.wsi_id},
                             {"mag_level", t.mag_level},
                             {"magnification", t.magnification},
                             {"row", t.row},
                             {"col", t.col},
                             {"tissue", t.tissue},
                             {"feature_file", t.feature_file},
                             {"feature_index", t.feature_index}};
}

// Tiles grouped per WSI, keyed by wsi_id (sorted).
using ManifestGroups = std::map<std::string, std::vector<TileRecord>>;

namespace detail {
inline void validate_group(const std::string& wsi,
                           const std::vector<TileRecord>& tiles) {
  std::map<int, double> mag_of_level;
  for (const auto& t : tiles) {
    auto [it, fresh] = mag_of_level.emplace(t.mag_level, t.magnification);
    if (!fresh && it->second != t.magnification)
      throw DataError("inconsistent magnification at level " +
                      std::to_string(t.mag_level) + " in wsi " + wsi);
  }
  int expect = 1;
  double prev = 0.0;
  for (const auto& [level, mag] : mag_of_level) {
    if (level != expect)
      throw DataError("mag_level gap in wsi " + wsi + ": expected level " +
                      std::to_string(expect) + ", found " +
                      std::to_string(level));
    if (mag <= prev)
      throw DataError("magnification not strictly increasing in wsi " + wsi +
                      " at level " + std::to_string(level));
    prev = mag;
    ++expect;
  }
}
}  // namespace detail

// Parse a JSON Lines manifest. Duplicate (wsi_id, mag_level, row, col) keys,
// malformed lines, and per-WSI level gaps are errors.
inline ManifestGroups parse_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  ManifestGroups groups;
  std::set<std::tuple<std::string, int, int, int>> seen;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    TileRecord t;
    try {
      auto j = nlohmann::json::parse(line);
      t.wsi_id = j.at("wsi_id").get<std::string>();
      t.mag_level = j.at("mag_level").get<int>();
      t.magnification = j.at("magnification").get<double>();
      t.row = j.at("row").get<int>();
      t.col = j.at("col").get<int>();
      t.tissue = j.at("tissue").get<bool>();
      t.feature_file = j.at("feature_file").get<std::string>();
      t.feature_index = j.at("feature_index").get<uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed manifest line " + std::to_string(lineno) +
                      ": " + e.what());
    }
    if (t.mag_level < 1 || t.row < 0 || t.col < 0 ||
        t.magnification <= 0.0)
      throw DataError("invalid tile values at manifest line " +
                      std::to_string(lineno));
    auto key = std::make_tuple(t.wsi_id, t.mag_level, t.row, t.col);
    if (!seen.insert(key).second)
      throw DataError("duplicate tile key (" + t.wsi_id + ", " +
                      std::to_string(t.mag_level) + ", " +
                      std::to_string(t.row) + ", " + std::to_string(t.col) +
                      ") at manifest line " + std::to_string(lineno));
    groups[t.wsi_id].push_back(std::move(t));
  }
  for (const auto& [wsi, tiles] : groups) detail::validate_group(wsi, tiles);
  return groups;
}

}  // namespace msgcn
