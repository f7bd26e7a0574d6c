#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "logonet/common.hpp"

namespace logonet {

// Little-endian byte stream helpers shared by all on-disk formats. Values are
// composed byte-by-byte, so files are identical regardless of host
// endianness.
class ByteWriter {
 public:
  void put_u8(std::uint8_t v) { buf_.push_back(v); }

  void put_u32(std::uint32_t v) {
    buf_.push_back(static_cast<std::uint8_t>(v & 0xFF));
    buf_.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
    buf_.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
    buf_.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFF));
  }

  void put_u64(std::uint64_t v) {
    put_u32(static_cast<std::uint32_t>(v & 0xFFFFFFFFull));
    put_u32(static_cast<std::uint32_t>(v >> 32));
  }

  void put_f32(float v) { put_u32(std::bit_cast<std::uint32_t>(v)); }

  void put_magic(const char (&magic)[5]) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(magic[i]));
  }

  void put_string(const std::string& s) {
    put_u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }

  const std::vector<std::uint8_t>& bytes() const { return buf_; }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(buf_.data()),
            static_cast<std::streamsize>(buf_.size()));
    if (!f) throw IoError("write failed: " + path);
  }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> bytes, std::string origin = "<memory>")
      : buf_(std::move(bytes)), origin_(std::move(origin)) {}

  static ByteReader from_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open for reading: " + path);
    const std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw IoError("read failed: " + path);
    return ByteReader(std::move(bytes), path);
  }

  std::uint8_t get_u8() {
    need(1);
    return buf_[pos_++];
  }

  std::uint32_t get_u32() {
    need(4);
    const std::uint32_t v = static_cast<std::uint32_t>(buf_[pos_]) |
                            (static_cast<std::uint32_t>(buf_[pos_ + 1]) << 8) |
                            (static_cast<std::uint32_t>(buf_[pos_ + 2]) << 16) |
                            (static_cast<std::uint32_t>(buf_[pos_ + 3]) << 24);
    pos_ += 4;
    return v;
  }

  std::uint64_t get_u64() {
    const std::uint64_t lo = get_u32();
    const std::uint64_t hi = get_u32();
    return lo | (hi << 32);
  }

  float get_f32() { return std::bit_cast<float>(get_u32()); }

  void expect_magic(const char (&magic)[5]) {
    if (remaining() < 4) throw IoError(origin_ + ": bad magic (file truncated)");
    for (int i = 0; i < 4; ++i) {
      if (buf_[pos_ + static_cast<std::size_t>(i)] != static_cast<std::uint8_t>(magic[i])) {
        throw IoError(origin_ + ": bad magic (expected " + std::string(magic, 4) + ")");
      }
    }
    pos_ += 4;
  }

  std::string get_string() {
    const std::uint32_t n = get_u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return buf_.size() - pos_; }
  const std::string& origin() const { return origin_; }

  void expect_exhausted() const {
    if (remaining() != 0) {
      throw IoError(origin_ + ": " + std::to_string(remaining()) + " trailing bytes");
    }
  }

 private:
  void need(std::size_t n) {
    if (remaining() < n) throw IoError(origin_ + ": unexpected end of file");
  }

  std::vector<std::uint8_t> buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace logonet
