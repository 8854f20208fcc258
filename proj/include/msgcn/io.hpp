#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "msgcn/error.hpp"

namespace msgcn {

// CRC-32 (IEEE 802.3, reflected, poly 0xEDB88320).
inline uint32_t crc32(const uint8_t* data, size_t n, uint32_t crc = 0) {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return ~crc;
}

inline uint32_t crc32(const std::vector<uint8_t>& buf) {
  return crc32(buf.data(), buf.size());
}

// Little-endian append-only buffer, flushed to disk in one write.
class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) { raw(&v, 2); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void f32(float v) { raw(&v, 4); }
  void bytes(const void* p, size_t n) { raw(p, n); }
  void str(const std::string& s) { raw(s.data(), s.size()); }

  size_t size() const { return buf_.size(); }
  const std::vector<uint8_t>& data() const { return buf_; }

  // CRC of bytes written at or after `from`.
  uint32_t crc_from(size_t from) const {
    return crc32(buf_.data() + from, buf_.size() - from);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(buf_.data()),
              static_cast<std::streamsize>(buf_.size()));
    if (!out) throw IoError("write failed: " + path.string());
  }

 private:
  void raw(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<uint8_t> buf_;
};

// Bounds-checked little-endian reader over an in-memory file image.
class ByteReader {
 public:
  explicit ByteReader(std::vector<uint8_t> buf) : buf_(std::move(buf)) {}

  static ByteReader from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open: " + path.string());
    const auto n = static_cast<size_t>(in.tellg());
    std::vector<uint8_t> buf(n);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (!in) throw IoError("read failed: " + path.string());
    return ByteReader(std::move(buf));
  }

  uint8_t u8() { return take<uint8_t>(); }
  uint16_t u16() { return take<uint16_t>(); }
  uint32_t u32() { return take<uint32_t>(); }
  uint64_t u64() { return take<uint64_t>(); }
  float f32() { return take<float>(); }

  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void bytes(void* out, size_t n) {
    need(n);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }

  size_t pos() const { return pos_; }
  size_t remaining() const { return buf_.size() - pos_; }

  uint32_t crc_range(size_t from, size_t to) const {
    return crc32(buf_.data() + from, to - from);
  }

 private:
  template <class T>
  T take() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(size_t n) const {
    if (pos_ + n > buf_.size()) throw IoError("truncated file");
  }
  std::vector<uint8_t> buf_;
  size_t pos_ = 0;
};

}  // namespace msgcn
