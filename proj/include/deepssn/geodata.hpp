#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deepssn/error.hpp"
#include "deepssn/geometry.hpp"

namespace deepssn {

inline constexpr int kLayerCount = 15;

/// Map layers in channel order.
inline constexpr std::array<std::string_view, kLayerCount> kLayerNames = {
    "Buildings",
    "Land uses",
    "Schools and education institutions",
    "Hotel accommodation",
    "Governmental agencies and institutes",
    "Roads and stations",
    "Greenbelt and plants",
    "Restaurants",
    "Residential areas",
    "Rivers and lakes",
    "Shopping malls and markets",
    "Office buildings and commercial districts",
    "Hospitals and health care providers",
    "Life service business",
    "Scenic spots and resorts",
};

/// Short icon names accepted in sketch documents, same order as kLayerNames.
inline constexpr std::array<std::string_view, kLayerCount> kLayerSlugs = {
    "building", "land_use",    "school",      "hotel",    "government",
    "road",     "greenbelt",   "restaurant",  "residential", "water",
    "shopping", "office",      "hospital",    "life_service", "scenic",
};

inline std::optional<int> layer_from_slug(std::string_view slug) {
  for (int i = 0; i < kLayerCount; ++i)
    if (kLayerSlugs[static_cast<std::size_t>(i)] == slug) return i;
  return std::nullopt;
}

enum class GeometryKind : std::uint8_t { point, polyline, polygon };

inline std::string_view to_string(GeometryKind k) {
  switch (k) {
    case GeometryKind::point: return "point";
    case GeometryKind::polyline: return "polyline";
    case GeometryKind::polygon: return "polygon";
  }
  return "?";
}

inline std::optional<GeometryKind> kind_from_string(std::string_view s) {
  if (s == "point") return GeometryKind::point;
  if (s == "polyline") return GeometryKind::polyline;
  if (s == "polygon") return GeometryKind::polygon;
  return std::nullopt;
}

/// One typed vector feature. Coordinates are scene-local meters with the
/// origin at the scene's southwest corner. Polygons hold a closed ring.
struct GeoObject {
  std::string id;
  int layer = 0;
  GeometryKind kind = GeometryKind::point;
  std::vector<Point> coords;

  friend bool operator==(const GeoObject&, const GeoObject&) = default;
};

inline GeoObject make_point(std::string id, int layer, Point p) {
  return {std::move(id), layer, GeometryKind::point, {p}};
}
inline GeoObject make_polyline(std::string id, int layer, std::vector<Point> pts) {
  return {std::move(id), layer, GeometryKind::polyline, std::move(pts)};
}
inline GeoObject make_polygon(std::string id, int layer, std::vector<Point> ring) {
  return {std::move(id), layer, GeometryKind::polygon, close_ring(std::move(ring))};
}

/// Checks the structural invariants; returns a diagnostic on failure.
inline std::optional<std::string> check_object(const GeoObject& o) {
  if (o.layer < 0 || o.layer >= kLayerCount)
    return "object '" + o.id + "': layer " + std::to_string(o.layer) + " outside [0,14]";
  for (const Point& p : o.coords)
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) return "object '" + o.id + "': non-finite coordinate";
  switch (o.kind) {
    case GeometryKind::point:
      if (o.coords.size() != 1) return "object '" + o.id + "': point needs exactly one coordinate";
      break;
    case GeometryKind::polyline:
      if (o.coords.size() < 2) return "object '" + o.id + "': polyline needs at least 2 points";
      break;
    case GeometryKind::polygon:
      if (o.coords.size() < 4 || !(o.coords.front() == o.coords.back()))
        return "object '" + o.id + "': polygon ring must be closed with at least 3 vertices";
      break;
  }
  return std::nullopt;
}

/// Representative point: the point itself, the polyline arc midpoint, or
/// the polygon area centroid.
inline Point anchor_point(const GeoObject& o) {
  switch (o.kind) {
    case GeometryKind::point: return o.coords.front();
    case GeometryKind::polyline: return polyline_midpoint(o.coords);
    case GeometryKind::polygon: return polygon_centroid(o.coords);
  }
  return {};
}

struct SpatialScene {
  std::string scene_id;
  int label = 0;
  double extent_m = 400.0;
  std::vector<GeoObject> objects;

  friend bool operator==(const SpatialScene&, const SpatialScene&) = default;
};

struct RasterConfig {
  int grid_cells = 40;
  double cell_size_m = 10.0;
  int channel_count = kLayerCount;

  double extent_m() const { return grid_cells * cell_size_m; }

  void validate() const {
    if (grid_cells < 4) throw ValidationError("RasterConfig: grid_cells must be >= 4");
    if (!(cell_size_m > 0.0)) throw ValidationError("RasterConfig: cell_size_m must be positive");
    if (channel_count < 1) throw ValidationError("RasterConfig: channel_count must be >= 1");
  }
};

/// Channel-major (C, H, W) grid of non-negative values. Row 0 is the
/// southern edge: row = floor(y / cell), col = floor(x / cell).
class SceneTensor {
public:
  SceneTensor() = default;
  SceneTensor(int channels, int height, int width)
      : channels_(channels), height_(height), width_(width),
        values_(static_cast<std::size_t>(channels) * height * width, 0.0f) {}

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return values_.size(); }

  float& at(int c, int row, int col) { return values_[index(c, row, col)]; }
  float at(int c, int row, int col) const { return values_[index(c, row, col)]; }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }

  std::size_t nonzero_count() const {
    std::size_t n = 0;
    for (float v : values_) n += v != 0.0f;
    return n;
  }

  /// Fraction of zero entries.
  double sparsity() const {
    return values_.empty() ? 1.0 : 1.0 - static_cast<double>(nonzero_count()) / static_cast<double>(values_.size());
  }

  friend bool operator==(const SceneTensor&, const SceneTensor&) = default;

private:
  std::size_t index(int c, int row, int col) const {
    return (static_cast<std::size_t>(c) * height_ + row) * width_ + col;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<float> values_;
};

struct UnifyResult {
  std::vector<GeoObject> objects;
  std::vector<std::string> diagnostics;
};

/// Clips an object to the half-open extent box; nothing if no part remains.
inline std::optional<GeoObject> clip_to_extent(const GeoObject& o, double extent_m) {
  const Box box{{0.0, 0.0}, {extent_m, extent_m}};
  switch (o.kind) {
    case GeometryKind::point:
      if (!box.contains_half_open(o.coords.front())) return std::nullopt;
      return o;
    case GeometryKind::polyline: {
      auto clipped = clip_polyline(o.coords, box);
      if (!clipped) return std::nullopt;
      GeoObject out = o;
      out.coords = std::move(*clipped);
      return out;
    }
    case GeometryKind::polygon: {
      bool inside = true;
      for (const Point& p : o.coords) inside = inside && box.contains_closed(p);
      if (inside) return o;
      auto clipped = clip_polygon(o.coords, box);
      if (!clipped) return std::nullopt;
      GeoObject out = o;
      out.coords = std::move(*clipped);
      return out;
    }
  }
  return std::nullopt;
}

/// Translates objects from a planar metric frame into the scene-local frame
/// and clips them to [0, extent)^2. Invalid objects are rejected with a
/// diagnostic rather than aborting the batch.
inline UnifyResult unify_coordinates(std::span<const GeoObject> objects, Point scene_origin,
                                     double extent_m = 400.0) {
  UnifyResult result;
  for (const GeoObject& o : objects) {
    if (auto problem = check_object(o)) {
      result.diagnostics.push_back(*problem);
      continue;
    }
    GeoObject local = o;
    for (Point& p : local.coords) p = p - scene_origin;
    if (auto clipped = clip_to_extent(local, extent_m)) result.objects.push_back(std::move(*clipped));
  }
  return result;
}

/// Union of two sources. A point is dropped when an already kept point of
/// the same layer lies within dedupe_radius_m; list `a` is scanned first so
/// its members win.
inline std::vector<GeoObject> merge_sources(std::span<const GeoObject> a, std::span<const GeoObject> b,
                                            double dedupe_radius_m) {
  std::vector<GeoObject> out;
  out.reserve(a.size() + b.size());
  const double r2 = dedupe_radius_m * dedupe_radius_m;
  auto duplicate = [&](const GeoObject& o) {
    if (o.kind != GeometryKind::point) return false;
    for (const GeoObject& k : out)
      if (k.kind == GeometryKind::point && k.layer == o.layer &&
          squared_distance(k.coords.front(), o.coords.front()) <= r2)
        return true;
    return false;
  };
  for (const GeoObject& o : a)
    if (!duplicate(o)) out.push_back(o);
  for (const GeoObject& o : b)
    if (!duplicate(o)) out.push_back(o);
  return out;
}

namespace detail {

inline int cell_index(double v, double cell) { return static_cast<int>(std::floor(v / cell)); }

/// Grid traversal (Amanatides-Woo) over the cells whose interior the segment
/// crosses. Cells outside [0, n)^2 are skipped.
template <class Visit>
void traverse_segment(Point a, Point b, double cell, int n, Visit&& visit) {
  int cx = cell_index(a.x, cell), cy = cell_index(a.y, cell);
  const int ex = cell_index(b.x, cell), ey = cell_index(b.y, cell);
  const double dx = b.x - a.x, dy = b.y - a.y;
  const int step_x = dx > 0 ? 1 : (dx < 0 ? -1 : 0);
  const int step_y = dy > 0 ? 1 : (dy < 0 ? -1 : 0);
  const double inf = std::numeric_limits<double>::infinity();
  const double t_delta_x = step_x ? cell / std::abs(dx) : inf;
  const double t_delta_y = step_y ? cell / std::abs(dy) : inf;
  double t_max_x = inf, t_max_y = inf;
  if (step_x > 0) t_max_x = ((cx + 1) * cell - a.x) / dx;
  if (step_x < 0) t_max_x = (cx * cell - a.x) / dx;
  if (step_y > 0) t_max_y = ((cy + 1) * cell - a.y) / dy;
  if (step_y < 0) t_max_y = (cy * cell - a.y) / dy;

  auto emit = [&] {
    if (cx >= 0 && cx < n && cy >= 0 && cy < n) visit(cy, cx);
  };
  emit();
  const int max_steps = std::abs(ex - cx) + std::abs(ey - cy);
  for (int s = 0; s < max_steps; ++s) {
    if (t_max_x < t_max_y) {
      if (t_max_x > 1.0) break;
      cx += step_x;
      t_max_x += t_delta_x;
    } else {
      if (t_max_y > 1.0) break;
      cy += step_y;
      t_max_y += t_delta_y;
    }
    emit();
  }
}

}  // namespace detail

/// Multi-channel count grid of a scene. Points add 1 to their cell, so n
/// co-located POIs give n. Polygons mark cells whose center is inside, and
/// polylines mark every traversed cell, with presence 1; a cell holding
/// both point counts and presence keeps the larger value.
inline SceneTensor rasterize(const SpatialScene& scene, const RasterConfig& cfg = {}) {
  cfg.validate();
  const int n = cfg.grid_cells;
  const double cell = cfg.cell_size_m;
  const double extent = cfg.extent_m();
  SceneTensor counts(cfg.channel_count, n, n);
  SceneTensor presence(cfg.channel_count, n, n);

  for (const GeoObject& o : scene.objects) {
    if (o.layer < 0 || o.layer >= cfg.channel_count)
      throw ValidationError("rasterize: object '" + o.id + "' has layer " + std::to_string(o.layer) +
                            " outside [0," + std::to_string(cfg.channel_count - 1) + "]");
    switch (o.kind) {
      case GeometryKind::point: {
        const Point p = o.coords.at(0);
        if (!(p.x >= 0.0 && p.x < extent && p.y >= 0.0 && p.y < extent)) break;
        counts.at(o.layer, detail::cell_index(p.y, cell), detail::cell_index(p.x, cell)) += 1.0f;
        break;
      }
      case GeometryKind::polyline: {
        const Box box{{0.0, 0.0}, {extent, extent}};
        for (std::size_t i = 1; i < o.coords.size(); ++i) {
          auto seg = clip_segment(o.coords[i - 1], o.coords[i], box);
          if (!seg) continue;
          detail::traverse_segment(seg->first, seg->second, cell, n,
                                   [&](int row, int col) { presence.at(o.layer, row, col) = 1.0f; });
        }
        break;
      }
      case GeometryKind::polygon: {
        double min_x = extent, min_y = extent, max_x = 0.0, max_y = 0.0;
        for (const Point& p : o.coords) {
          min_x = std::min(min_x, p.x);
          min_y = std::min(min_y, p.y);
          max_x = std::max(max_x, p.x);
          max_y = std::max(max_y, p.y);
        }
        const int c0 = std::max(0, detail::cell_index(min_x, cell) - 1);
        const int c1 = std::min(n - 1, detail::cell_index(max_x, cell) + 1);
        const int r0 = std::max(0, detail::cell_index(min_y, cell) - 1);
        const int r1 = std::min(n - 1, detail::cell_index(max_y, cell) + 1);
        for (int r = r0; r <= r1; ++r)
          for (int c = c0; c <= c1; ++c)
            if (point_in_polygon({(c + 0.5) * cell, (r + 0.5) * cell}, o.coords))
              presence.at(o.layer, r, c) = 1.0f;
        break;
      }
    }
  }
  auto out = counts.values();
  auto pres = presence.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], pres[i]);
  return counts;
}

enum class SketchUnits : std::uint8_t { grid, metric };

/// One icon dragged onto the sketch panel. `type` names the layer via
/// kLayerSlugs; a numeric `layer` is accepted when type is empty.
struct SketchIcon {
  std::string type;
  std::optional<int> layer;
  GeometryKind kind = GeometryKind::point;
  SketchUnits units = SketchUnits::grid;
  std::vector<Point> coords;
};

struct SketchDocument {
  std::string sketch_id;
  std::vector<SketchIcon> icons;
  std::string timestamp;
  std::string session;
};

/// Converts icon placements into scene-local GeoObjects. Grid coordinates
/// are (col, row) and map to the cell center.
inline SpatialScene sketch_to_scene(const SketchDocument& sketch, const RasterConfig& cfg = {}) {
  SpatialScene scene;
  scene.scene_id = sketch.sketch_id;
  scene.label = -1;
  scene.extent_m = cfg.extent_m();
  int idx = 0;
  for (const SketchIcon& icon : sketch.icons) {
    const std::string where = "icon " + std::to_string(idx);
    int layer = 0;
    if (!icon.type.empty()) {
      auto l = layer_from_slug(icon.type);
      if (!l) throw ValidationError(where + ": unknown icon type '" + icon.type + "'");
      layer = *l;
    } else if (icon.layer) {
      layer = *icon.layer;
    } else {
      throw ValidationError(where + ": missing icon type");
    }
    if (layer < 0 || layer >= kLayerCount)
      throw ValidationError(where + ": layer " + std::to_string(layer) + " outside [0,14]");
    GeoObject o{sketch.sketch_id + ":" + std::to_string(idx), layer, icon.kind, {}};
    for (const Point& p : icon.coords) {
      if (icon.units == SketchUnits::grid) {
        if (p.x < 0 || p.y < 0 || p.x >= cfg.grid_cells || p.y >= cfg.grid_cells)
          throw ValidationError(where + ": grid coordinate outside the panel");
        o.coords.push_back({(std::floor(p.x) + 0.5) * cfg.cell_size_m, (std::floor(p.y) + 0.5) * cfg.cell_size_m});
      } else {
        if (!(p.x >= 0 && p.y >= 0 && p.x < cfg.extent_m() && p.y < cfg.extent_m()))
          throw ValidationError(where + ": metric coordinate outside the extent");
        o.coords.push_back(p);
      }
    }
    if (o.kind == GeometryKind::polygon) o.coords = close_ring(std::move(o.coords));
    if (auto problem = check_object(o)) throw ValidationError(where + ": " + *problem);
    scene.objects.push_back(std::move(o));
    ++idx;
  }
  return scene;
}

inline SceneTensor sketch_to_tensor(const SketchDocument& sketch, const RasterConfig& cfg = {}) {
  return rasterize(sketch_to_scene(sketch, cfg), cfg);
}

}  // namespace deepssn
