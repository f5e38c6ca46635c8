#pragma once

// Little-endian binary helpers shared by the file formats.

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "binsplat/errors.hpp"

namespace binsplat::detail {

// Byte sink/source, independent of host order.
class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(double v) { u32(std::bit_cast<uint32_t>(static_cast<float>(v))); }
  void f64(double v) {
    const uint64_t b = std::bit_cast<uint64_t>(v);
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((b >> (8 * i)) & 0xFF));
  }
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw FormatError("write failed for '" + path + "'");
  }

 private:
  std::vector<char> buf_;
};

inline std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

class Reader {
 public:
  Reader(std::vector<char> data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw FormatError("'" + path_ + "': truncated file");
  }
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(data_[pos_++]);
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string magic() {
    need(4);
    std::string m(data_.data() + pos_, 4);
    pos_ += 4;
    return m;
  }
  void expect_magic(const char* expected) {
    const std::string m = magic();
    if (m != expected) throw FormatError("'" + path_ + "': expected magic " + expected + ", found '" + m + "'");
  }
  void expect_end() const {
    if (pos_ != data_.size()) throw FormatError("'" + path_ + "': trailing bytes after payload");
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  const std::string& path() const { return path_; }

 private:
  std::vector<char> data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace binsplat::detail
