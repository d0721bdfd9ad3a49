#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deepssn/error.hpp"

namespace deepssn {

/// Little-endian byte sink shared by the SSTN, SSNM and SSNI formats.
class ByteWriter {
public:
  void raw(std::string_view bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put_le(v); }
  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void i32(std::int32_t v) { put_le(static_cast<std::uint32_t>(v)); }
  void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
  void f32s(std::span<const float> vs) {
    for (float v : vs) f32(v);
  }
  void str32(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }

  const std::string& bytes() const { return buf_; }

private:
  template <class U>
  void put_le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class ByteReader {
public:
  explicit ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  std::string_view raw(std::size_t n) {
    need(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(raw(1)[0]); }
  std::uint16_t u16() { return get_le<std::uint16_t>(); }
  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  std::uint64_t u64() { return get_le<std::uint64_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(get_le<std::uint32_t>()); }
  float f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
  void f32s(std::span<float> out) {
    need(out.size() * 4);
    for (float& v : out) v = f32();
  }
  std::string str32() {
    const auto n = u32();
    return std::string(raw(n));
  }
  void expect_magic(std::string_view magic) {
    if (data_.size() < magic.size() || raw(magic.size()) != magic)
      throw FormatError(what_ + ": bad magic, expected '" + std::string(magic) + "'");
  }
  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError(what_ + ": truncated data");
  }
  template <class U>
  U get_le() {
    auto b = raw(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<std::uint8_t>(b[i])) << (8 * i);
    return v;
  }

  std::string_view data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace deepssn
