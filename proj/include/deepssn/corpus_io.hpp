#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepssn/binary_io.hpp"
#include "deepssn/geodata.hpp"

namespace deepssn {

using json = nlohmann::json;

// Scene corpus records (one JSON object per line):
//   {"scene_id": "...", "label": 3, "extent_m": 400,
//    "objects": [{"id": "...", "layer": 7, "kind": "point", "coords": [[x, y]]}]}

inline json coords_to_json(const std::vector<Point>& pts) {
  json arr = json::array();
  for (const Point& p : pts) arr.push_back({p.x, p.y});
  return arr;
}

inline std::vector<Point> coords_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) throw ValidationError(where + ": coords must be an array of [x,y] pairs");
  std::vector<Point> pts;
  for (const json& c : j) {
    if (!c.is_array() || c.size() != 2 || !c[0].is_number() || !c[1].is_number())
      throw ValidationError(where + ": each coordinate must be [x,y] numbers");
    pts.push_back({c[0].get<double>(), c[1].get<double>()});
  }
  return pts;
}

inline json to_json(const GeoObject& o) {
  return {{"id", o.id}, {"layer", o.layer}, {"kind", std::string(to_string(o.kind))}, {"coords", coords_to_json(o.coords)}};
}

inline GeoObject object_from_json(const json& j, const std::string& fallback_id) {
  if (!j.is_object()) throw ValidationError(fallback_id + ": object record must be a JSON object");
  GeoObject o;
  o.id = j.contains("id") ? j.at("id").get<std::string>() : fallback_id;
  if (!j.contains("layer") || !j.at("layer").is_number_integer())
    throw ValidationError(o.id + ": missing integer 'layer'");
  o.layer = j.at("layer").get<int>();
  const std::string kind = j.value("kind", std::string("point"));
  auto k = kind_from_string(kind);
  if (!k) throw ValidationError(o.id + ": unknown kind '" + kind + "'");
  o.kind = *k;
  if (!j.contains("coords")) throw ValidationError(o.id + ": missing 'coords'");
  o.coords = coords_from_json(j.at("coords"), o.id);
  if (o.kind == GeometryKind::polygon) o.coords = close_ring(std::move(o.coords));
  if (auto problem = check_object(o)) throw ValidationError(*problem);
  return o;
}

inline json to_json(const SpatialScene& s) {
  json objs = json::array();
  for (const GeoObject& o : s.objects) objs.push_back(to_json(o));
  return {{"scene_id", s.scene_id}, {"label", s.label}, {"extent_m", s.extent_m}, {"objects", std::move(objs)}};
}

inline SpatialScene scene_from_json(const json& j) {
  if (!j.is_object() || !j.contains("scene_id")) throw ValidationError("scene record needs 'scene_id'");
  SpatialScene s;
  s.scene_id = j.at("scene_id").get<std::string>();
  s.label = j.value("label", 0);
  s.extent_m = j.value("extent_m", 400.0);
  if (j.contains("objects")) {
    int i = 0;
    for (const json& o : j.at("objects")) s.objects.push_back(object_from_json(o, s.scene_id + ":" + std::to_string(i++)));
  }
  return s;
}

inline std::string scene_to_line(const SpatialScene& s) { return to_json(s).dump(); }

inline std::vector<SpatialScene> parse_corpus(std::istream& in, const std::string& what = "corpus") {
  std::vector<SpatialScene> scenes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      scenes.push_back(scene_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ValidationError(what + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(what + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return scenes;
}

inline std::vector<SpatialScene> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("cannot open corpus '" + path + "'");
  return parse_corpus(in, path);
}

inline std::string corpus_to_string(const std::vector<SpatialScene>& scenes) {
  std::string out;
  for (const SpatialScene& s : scenes) {
    out += scene_to_line(s);
    out += '\n';
  }
  return out;
}

inline void write_corpus(const std::string& path, const std::vector<SpatialScene>& scenes) {
  write_file(path, corpus_to_string(scenes));
}

// Sketch documents:
//   {"sketch_id": "...", "icons": [{"type": "hospital", "kind": "point",
//     "units": "grid", "coords": [[col, row]]}], "timestamp": "...", "session": "..."}

inline json to_json(const SketchDocument& d) {
  json icons = json::array();
  for (const SketchIcon& i : d.icons) {
    json ij = {{"kind", std::string(to_string(i.kind))},
               {"units", i.units == SketchUnits::grid ? "grid" : "metric"},
               {"coords", coords_to_json(i.coords)}};
    if (!i.type.empty()) ij["type"] = i.type;
    if (i.layer) ij["layer"] = *i.layer;
    icons.push_back(std::move(ij));
  }
  return {{"sketch_id", d.sketch_id}, {"icons", std::move(icons)}, {"timestamp", d.timestamp}, {"session", d.session}};
}

inline SketchDocument sketch_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("sketch: body must be a JSON object");
  SketchDocument d;
  if (!j.contains("sketch_id") || !j.at("sketch_id").is_string())
    throw ValidationError("sketch: missing string field 'sketch_id'");
  d.sketch_id = j.at("sketch_id").get<std::string>();
  d.timestamp = j.value("timestamp", std::string());
  d.session = j.value("session", std::string());
  if (!j.contains("icons")) return d;
  if (!j.at("icons").is_array()) throw ValidationError("sketch: 'icons' must be an array");
  int idx = 0;
  for (const json& ij : j.at("icons")) {
    const std::string where = "sketch: icon " + std::to_string(idx++);
    if (!ij.is_object()) throw ValidationError(where + ": must be an object");
    SketchIcon icon;
    if (ij.contains("type")) icon.type = ij.at("type").get<std::string>();
    if (ij.contains("layer")) {
      if (!ij.at("layer").is_number_integer()) throw ValidationError(where + ": 'layer' must be an integer");
      icon.layer = ij.at("layer").get<int>();
    }
    const std::string kind = ij.value("kind", std::string("point"));
    auto k = kind_from_string(kind);
    if (!k) throw ValidationError(where + ": unknown kind '" + kind + "'");
    icon.kind = *k;
    const std::string units = ij.value("units", std::string("grid"));
    if (units == "grid") icon.units = SketchUnits::grid;
    else if (units == "metric") icon.units = SketchUnits::metric;
    else throw ValidationError(where + ": unknown units '" + units + "'");
    if (!ij.contains("coords")) throw ValidationError(where + ": missing 'coords'");
    icon.coords = coords_from_json(ij.at("coords"), where);
    d.icons.push_back(std::move(icon));
  }
  return d;
}

// Tensor cache: "SSTN", version byte, u32 channels, u32 height, u32 width,
// then channel-major float32 values, all little-endian.

inline constexpr std::uint8_t kTensorFormatVersion = 1;

inline std::string encode_tensor(const SceneTensor& t) {
  ByteWriter w;
  w.raw("SSTN");
  w.u8(kTensorFormatVersion);
  w.u32(static_cast<std::uint32_t>(t.channels()));
  w.u32(static_cast<std::uint32_t>(t.height()));
  w.u32(static_cast<std::uint32_t>(t.width()));
  w.f32s(t.values());
  return w.bytes();
}

inline SceneTensor decode_tensor(std::string_view bytes) {
  ByteReader r(bytes, "tensor cache");
  r.expect_magic("SSTN");
  const auto version = r.u8();
  if (version != kTensorFormatVersion) throw FormatError("tensor cache: unsupported version " + std::to_string(version));
  const auto c = r.u32(), h = r.u32(), w = r.u32();
  if (static_cast<std::uint64_t>(c) * h * w * 4 != r.remaining())
    throw FormatError("tensor cache: payload size does not match dims");
  SceneTensor t(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
  r.f32s(t.values());
  return t;
}

inline void write_tensor(const std::string& path, const SceneTensor& t) { write_file(path, encode_tensor(t)); }
inline SceneTensor read_tensor(const std::string& path) { return decode_tensor(read_file(path)); }

}  // namespace deepssn
