#pragma once

#include <string>
#include <string_view>

#include "deepssn/binary_io.hpp"
#include "deepssn/nn/network.hpp"

namespace deepssn::nn {

// Model checkpoint, little-endian:
//   "SSNM" | u8 version | u32 config length | config JSON |
//   u32 block count | per block: u16 name length, name, u8 rank,
//   rank x u32 dims, prod(dims) x f32.

inline constexpr std::uint8_t kCheckpointVersion = 1;

template <class T>
std::string encode_checkpoint(const Network<T>& net) {
  ByteWriter w;
  w.raw("SSNM");
  w.u8(kCheckpointVersion);
  w.str32(to_json(net.config()).dump());
  const auto bs = blocks(net.params(), net.config());
  w.u32(static_cast<std::uint32_t>(bs.size()));
  for (const auto& b : bs) {
    w.u16(static_cast<std::uint16_t>(b.name.size()));
    w.raw(b.name);
    w.u8(static_cast<std::uint8_t>(b.dims.size()));
    for (std::uint32_t d : b.dims) w.u32(d);
    for (T v : b.data) w.f32(static_cast<float>(v));
  }
  return w.bytes();
}

template <class T>
Network<T> decode_checkpoint(std::string_view bytes) {
  ByteReader r(bytes, "model checkpoint");
  r.expect_magic("SSNM");
  const auto version = r.u8();
  if (version != kCheckpointVersion) throw FormatError("model checkpoint: unsupported version " + std::to_string(version));
  NetConfig cfg;
  try {
    cfg = net_config_from_json(nlohmann::json::parse(r.str32()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model checkpoint: bad config: ") + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(std::string("model checkpoint: bad config: ") + e.what());
  }
  Parameters<T> p = zero_parameters<T>(cfg);
  auto bs = blocks(p, cfg);
  const auto count = r.u32();
  if (count != bs.size())
    throw FormatError("model checkpoint: expected " + std::to_string(bs.size()) + " blocks, found " + std::to_string(count));
  for (auto& b : bs) {
    const auto len = r.u16();
    const std::string name(r.raw(len));
    if (name != b.name) throw FormatError("model checkpoint: expected block '" + b.name + "', found '" + name + "'");
    const auto rank = r.u8();
    std::vector<std::uint32_t> dims(rank);
    for (auto& d : dims) d = r.u32();
    if (dims != b.dims) throw FormatError("model checkpoint: shape mismatch in block '" + name + "'");
    for (T& v : b.data) v = static_cast<T>(r.f32());
  }
  if (r.remaining() != 0) throw FormatError("model checkpoint: trailing bytes");
  return Network<T>(cfg, std::move(p));
}

template <class T>
void save_checkpoint(const std::string& path, const Network<T>& net) {
  write_file(path, encode_checkpoint(net));
}

template <class T>
Network<T> load_checkpoint(const std::string& path) {
  return decode_checkpoint<T>(read_file(path));
}

}  // namespace deepssn::nn
