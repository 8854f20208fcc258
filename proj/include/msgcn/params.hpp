#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "msgcn/io.hpp"
#include "msgcn/rng.hpp"
#include "msgcn/tensor.hpp"

namespace msgcn {

enum class InitScheme { UniformFanIn, Zeros };

// Named parameter tensors plus matching gradient slots. Entry order is
// creation order and is what the file format serializes, so identical
// creation sequences give identical files.
class ParamStore {
 public:
  explicit ParamStore(uint64_t rng_seed = 0)
      : rng_(Rng::derive(rng_seed, "init")), seed_(rng_seed) {}

  uint64_t seed() const { return seed_; }

  Mat& create(const std::string& name, int rows, int cols, InitScheme scheme) {
    if (index_.count(name)) throw DataError("duplicate parameter name: " + name);
    Entry e;
    e.name = name;
    e.value = Mat(rows, cols);
    e.grad = Mat(rows, cols);
    if (scheme == InitScheme::UniformFanIn) {
      // fan_in convention: trailing dimension, matching (out, in)-style
      // weight layouts.
      const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
      for (double& x : e.value.v) x = rng_.uniform(-bound, bound);
    }
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
    return entries_.back().value;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Mat& param(const std::string& name) { return entries_[at(name)].value; }
  const Mat& param(const std::string& name) const {
    return entries_[at(name)].value;
  }
  Mat& grad(const std::string& name) { return entries_[at(name)].grad; }

  size_t count() const { return entries_.size(); }
  const std::string& name_at(size_t i) const { return entries_[i].name; }
  Mat& value_at(size_t i) { return entries_[i].value; }
  const Mat& value_at(size_t i) const { return entries_[i].value; }
  Mat& grad_at(size_t i) { return entries_[i].grad; }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_)
      for (double& g : e.grad.v) g = 0.0;
  }

  // Values are stored as f32 on disk; saving snaps the in-memory values to
  // their stored precision so a saved model and its reload are bit-equal.
  void save(const std::filesystem::path& path) {
    for (auto& e : entries_)
      for (double& x : e.value.v) x = static_cast<double>(static_cast<float>(x));
    ByteWriter w;
    w.str("MSGP");
    w.u32(1);
    w.u32(static_cast<uint32_t>(entries_.size()));
    const size_t body_start = w.size();
    for (const auto& e : entries_) {
      w.u16(static_cast<uint16_t>(e.name.size()));
      w.str(e.name);
      w.u8(2);  // rank: all parameters here are matrices
      w.u32(static_cast<uint32_t>(e.value.rows));
      w.u32(static_cast<uint32_t>(e.value.cols));
      for (double x : e.value.v) w.f32(static_cast<float>(x));
    }
    w.u32(w.crc_from(body_start));
    w.save(path);
  }

  static ParamStore load(const std::filesystem::path& path) {
    ByteReader r = ByteReader::from_file(path);
    if (r.str(4) != "MSGP") throw IoError("bad magic in param file");
    if (r.u32() != 1) throw IoError("unsupported param file version");
    const uint32_t n = r.u32();
    const size_t body_start = r.pos();
    ParamStore ps;
    for (uint32_t i = 0; i < n; ++i) {
      const uint16_t len = r.u16();
      std::string name = r.str(len);
      const uint8_t rank = r.u8();
      if (rank != 2) throw IoError("unsupported parameter rank");
      const int rows = static_cast<int>(r.u32());
      const int cols = static_cast<int>(r.u32());
      Mat& m = ps.create(name, rows, cols, InitScheme::Zeros);
      for (double& x : m.v) x = static_cast<double>(r.f32());
    }
    const size_t body_end = r.pos();
    const uint32_t want = r.u32();
    if (r.crc_range(body_start, body_end) != want)
      throw IoError("param file checksum mismatch");
    return ps;
  }

 private:
  struct Entry {
    std::string name;
    Mat value;
    Mat grad;
  };

  size_t at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("unknown parameter: " + name);
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
  Rng rng_;
  uint64_t seed_ = 0;
};

}  // namespace msgcn
