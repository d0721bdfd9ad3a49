#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "deepssn/error.hpp"
#include "deepssn/geodata.hpp"
#include "deepssn/random.hpp"

namespace deepssn {

struct SyntheticConfig {
  int scenes = 64;
  std::uint64_t seed = 7;
  double extent_m = 400.0;
  int min_objects = 3;
  int max_objects = 12;
  /// Chance that a water feature is a river polyline instead of a lake.
  double river_p = 0.4;

  void validate() const {
    if (scenes < 0) throw ValidationError("synthetic: scene count must be >= 0");
    if (min_objects < 1 || max_objects < min_objects) throw ValidationError("synthetic: bad object count range");
    if (!(extent_m > 0.0)) throw ValidationError("synthetic: extent must be positive");
  }
};

inline std::string synthetic_scene_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%04d", index);
  return buf;
}

namespace detail {

// Half side lengths (min, max) for polygon layers.
inline std::pair<double, double> polygon_half_size(int layer) {
  switch (layer) {
    case 0: return {6.0, 20.0};   // building
    case 1: return {30.0, 75.0};  // land use
    case 6: return {15.0, 45.0};  // greenbelt
    case 8: return {25.0, 60.0};  // residential
    case 9: return {20.0, 50.0};  // water
    default: return {10.0, 30.0};
  }
}

inline std::vector<Point> rotated_rectangle(Point c, double hw, double hh, double angle) {
  const double ca = std::cos(angle), sa = std::sin(angle);
  std::vector<Point> ring;
  for (auto [sx, sy] : {std::pair{-1.0, -1.0}, {1.0, -1.0}, {1.0, 1.0}, {-1.0, 1.0}}) {
    const double x = sx * hw, y = sy * hh;
    ring.push_back({c.x + x * ca - y * sa, c.y + x * sa + y * ca});
  }
  return ring;
}

inline std::vector<Point> random_walk(KeyedRng& rng, Point start, int vertices, double step_lo, double step_hi) {
  std::vector<Point> pts{start};
  double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int i = 1; i < vertices; ++i) {
    heading += rng.uniform(-0.6, 0.6);
    const double step = rng.uniform(step_lo, step_hi);
    pts.push_back({pts.back().x + step * std::cos(heading), pts.back().y + step * std::sin(heading)});
  }
  return pts;
}

}  // namespace detail

/// Seeded stand-in corpus: scene i gets label i, id "s%04d" and 3-12
/// objects. Buildings, land use, greenbelt, residential and lakes are
/// rectangles; roads and rivers are polylines; the other layers are POIs.
inline std::vector<SpatialScene> generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  std::vector<SpatialScene> out;
  out.reserve(static_cast<std::size_t>(cfg.scenes));
  const double e = cfg.extent_m;
  for (int i = 0; i < cfg.scenes; ++i) {
    KeyedRng rng = KeyedRng::from(cfg.seed, "scene", i);
    SpatialScene s;
    s.scene_id = synthetic_scene_id(i);
    s.label = i;
    s.extent_m = e;
    const int n = cfg.min_objects + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_objects - cfg.min_objects + 1)));
    int serial = 0;
    while (static_cast<int>(s.objects.size()) < n) {
      const int layer = static_cast<int>(rng.below(kLayerCount));
      const std::string id = s.scene_id + "/" + std::to_string(serial++);
      const Point c{rng.uniform(0.05 * e, 0.95 * e), rng.uniform(0.05 * e, 0.95 * e)};
      GeoObject o;
      const bool river = layer == 9 && rng.bernoulli(cfg.river_p);
      if (layer == 5 || river) {
        const int vertices = 2 + static_cast<int>(rng.below(3));
        o = make_polyline(id, layer, detail::random_walk(rng, c, vertices, 0.15 * e, 0.35 * e));
      } else if (layer == 0 || layer == 1 || layer == 6 || layer == 8 || layer == 9) {
        const auto [lo, hi] = detail::polygon_half_size(layer);
        const double scale = e / 400.0;
        o = make_polygon(id, layer,
                         detail::rotated_rectangle(c, scale * rng.uniform(lo, hi), scale * rng.uniform(lo, hi),
                                                   rng.uniform(0.0, std::numbers::pi / 2.0)));
      } else {
        o = make_point(id, layer, c);
      }
      if (auto clipped = clip_to_extent(o, e)) s.objects.push_back(std::move(*clipped));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace deepssn
