#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace cenlab {

// Malformed or truncated serialized input.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Attempt to act on a finished episode or otherwise misuse the API.
class TerminalStateError : public std::logic_error {
 public:
  explicit TerminalStateError(const std::string& what) : std::logic_error(what) {}
};

// Little-endian byte stream writer. x86 only in practice; the explicit
// shifts keep it endian-correct anyway.
class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) {
    buf_.push_back(static_cast<uint8_t>(v));
    buf_.push_back(static_cast<uint8_t>(v >> 8));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void i16(int16_t v) { u16(static_cast<uint16_t>(v)); }
  void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
  void f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void magic(const char m[5]) { bytes(m, 4); }
  void bytes(const void* p, size_t n) {
    const auto* c = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void str(const std::string& s) {
    u16(static_cast<uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }

  const std::vector<uint8_t>& data() const { return buf_; }
  std::vector<uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const void* data, size_t len)
      : p_(static_cast<const uint8_t*>(data)), len_(len) {}
  explicit ByteReader(const std::vector<uint8_t>& v) : ByteReader(v.data(), v.size()) {}

  uint8_t u8() { return take(1)[0]; }
  uint16_t u16() {
    const uint8_t* b = take(2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
  }
  uint32_t u32() {
    const uint8_t* b = take(4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }
  uint64_t u64() {
    uint64_t lo = u32();
    uint64_t hi = u32();
    return lo | (hi << 32);
  }
  int16_t i16() { return static_cast<int16_t>(u16()); }
  int32_t i32() { return static_cast<int32_t>(u32()); }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  void expect_magic(const char m[5]) {
    const uint8_t* b = take(4);
    if (std::memcmp(b, m, 4) != 0)
      throw FormatError(std::string("bad magic, expected ") + m);
  }
  void raw(void* out, size_t n) { std::memcpy(out, take(n), n); }
  std::string str() {
    uint16_t n = u16();
    const uint8_t* b = take(n);
    return std::string(reinterpret_cast<const char*>(b), n);
  }

  size_t remaining() const { return len_ - pos_; }
  bool done() const { return pos_ == len_; }

 private:
  const uint8_t* take(size_t n) {
    if (pos_ + n > len_) throw FormatError("truncated input");
    const uint8_t* b = p_ + pos_;
    pos_ += n;
    return b;
  }
  const uint8_t* p_;
  size_t len_;
  size_t pos_ = 0;
};

}  // namespace cenlab
