#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace kshield {

// Little-endian binary readers/writers shared by every on-disk format.
// All multi-byte values are encoded explicitly byte-by-byte so the files
// are identical regardless of host endianness.

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open for writing: " + path);
  }

  void magic(const std::string& m) { out_.write(m.data(), static_cast<std::streamsize>(m.size())); }

  void u8(uint8_t v) { out_.put(static_cast<char>(v)); }

  void u16(uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    out_.write(b, 2);
  }

  void u32(uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(b, 4);
  }

  void u64(uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(b, 8);
  }

  void f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }

  void f32_array(const float* p, size_t n) {
    buf_.resize(n * 4);
    for (size_t i = 0; i < n; ++i) {
      uint32_t bits;
      std::memcpy(&bits, &p[i], 4);
      for (int k = 0; k < 4; ++k) buf_[i * 4 + k] = static_cast<char>((bits >> (8 * k)) & 0xff);
    }
    out_.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
  }

  void u64_array(const uint64_t* p, size_t n) {
    for (size_t i = 0; i < n; ++i) u64(p[i]);
  }

  void bytes(const uint8_t* p, size_t n) {
    out_.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
  }

  void name(const std::string& s) {
    if (s.size() > 0xffff) throw std::runtime_error("name too long: " + s);
    u16(static_cast<uint16_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  void close() {
    out_.close();
    if (!out_) throw std::runtime_error("write failed: " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
  std::vector<char> buf_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path)
      : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open for reading: " + path);
  }

  void expect_magic(const std::string& m) {
    std::string got(m.size(), '\0');
    in_.read(got.data(), static_cast<std::streamsize>(m.size()));
    if (in_.gcount() != static_cast<std::streamsize>(m.size()) || got != m) {
      throw std::runtime_error(path_ + ": bad magic, expected " + m);
    }
  }

  uint8_t u8() {
    uint8_t v;
    raw(&v, 1);
    return v;
  }

  uint16_t u16() {
    uint8_t b[2];
    raw(b, 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
  }

  uint32_t u32() {
    uint8_t b[4];
    raw(b, 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
  }

  uint64_t u64() {
    uint8_t b[8];
    raw(b, 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  }

  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  void f32_array(float* p, size_t n) {
    buf_.resize(n * 4);
    raw(reinterpret_cast<uint8_t*>(buf_.data()), n * 4);
    for (size_t i = 0; i < n; ++i) {
      uint32_t bits = 0;
      for (int k = 0; k < 4; ++k) {
        bits |= static_cast<uint32_t>(static_cast<uint8_t>(buf_[i * 4 + k])) << (8 * k);
      }
      std::memcpy(&p[i], &bits, 4);
    }
  }

  void u64_array(uint64_t* p, size_t n) {
    for (size_t i = 0; i < n; ++i) p[i] = u64();
  }

  void bytes(uint8_t* p, size_t n) { raw(p, n); }

  std::string name() {
    uint16_t len = u16();
    std::string s(len, '\0');
    raw(reinterpret_cast<uint8_t*>(s.data()), len);
    return s;
  }

  bool at_eof() {
    return in_.peek() == std::char_traits<char>::eof();
  }

 private:
  void raw(uint8_t* p, size_t n) {
    in_.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n)) {
      throw std::runtime_error(path_ + ": truncated file");
    }
  }

  std::string path_;
  std::ifstream in_;
  std::vector<char> buf_;
};

}  // namespace kshield
