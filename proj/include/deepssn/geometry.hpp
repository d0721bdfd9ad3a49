#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace deepssn {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

inline Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline Point operator*(double s, Point p) { return {s * p.x, s * p.y}; }

inline double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }
inline double squared_distance(Point a, Point b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy;
}

/// Axis-aligned box [min, max] used for clipping.
struct Box {
  Point min;
  Point max;

  bool contains_closed(Point p) const {
    return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y;
  }
  /// Half-open membership [min, max), the cell-indexing rule.
  bool contains_half_open(Point p) const {
    return p.x >= min.x && p.x < max.x && p.y >= min.y && p.y < max.y;
  }
  /// Snaps interpolation round-off back onto the box.
  Point clamp(Point p) const { return {std::clamp(p.x, min.x, max.x), std::clamp(p.y, min.y, max.y)}; }
};

/// Liang-Barsky clip of segment ab against the closed box. Returns the
/// parameter interval [t0, t1] of the surviving part, if any.
inline std::optional<std::pair<double, double>> clip_segment_params(Point a, Point b, const Box& box) {
  double t0 = 0.0, t1 = 1.0;
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {a.x - box.min.x, box.max.x - a.x, a.y - box.min.y, box.max.y - a.y};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return std::nullopt;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0.0) {
      if (r > t1) return std::nullopt;
      t0 = std::max(t0, r);
    } else {
      if (r < t0) return std::nullopt;
      t1 = std::min(t1, r);
    }
  }
  return std::pair{t0, t1};
}

inline std::optional<std::pair<Point, Point>> clip_segment(Point a, Point b, const Box& box) {
  auto t = clip_segment_params(a, b, box);
  if (!t) return std::nullopt;
  const Point d = b - a;
  const Point p0 = t->first == 0.0 ? a : box.clamp(a + t->first * d);
  const Point p1 = t->second == 1.0 ? b : box.clamp(a + t->second * d);
  return std::pair{p0, p1};
}

inline double polyline_length(std::span<const Point> pts) {
  double len = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) len += distance(pts[i - 1], pts[i]);
  return len;
}

/// Clips a polyline to the box and keeps the longest surviving piece
/// (first one on ties). Zero-length results are discarded.
inline std::optional<std::vector<Point>> clip_polyline(std::span<const Point> pts, const Box& box) {
  std::vector<std::vector<Point>> pieces;
  std::vector<Point> current;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    auto seg = clip_segment(pts[i - 1], pts[i], box);
    if (!seg || seg->first == seg->second) {
      if (current.size() >= 2) pieces.push_back(std::move(current));
      current.clear();
      continue;
    }
    if (current.empty()) {
      current = {seg->first, seg->second};
    } else if (current.back() == seg->first) {
      current.push_back(seg->second);
    } else {
      pieces.push_back(std::move(current));
      current = {seg->first, seg->second};
    }
  }
  if (current.size() >= 2) pieces.push_back(std::move(current));

  std::optional<std::vector<Point>> best;
  double best_len = 0.0;
  for (auto& piece : pieces) {
    const double len = polyline_length(piece);
    if (len > best_len) {
      best_len = len;
      best = std::move(piece);
    }
  }
  return best;
}

/// Signed shoelace area; ring may or may not repeat its first vertex.
inline double signed_area(std::span<const Point> ring) {
  double a = 0.0;
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) a += cross(ring[i], ring[(i + 1) % n]);
  return 0.5 * a;
}

inline std::vector<Point> open_ring(std::span<const Point> ring) {
  std::vector<Point> out(ring.begin(), ring.end());
  if (out.size() >= 2 && out.front() == out.back()) out.pop_back();
  return out;
}

inline std::vector<Point> close_ring(std::vector<Point> ring) {
  if (!ring.empty() && !(ring.front() == ring.back())) ring.push_back(ring.front());
  return ring;
}

/// Sutherland-Hodgman clip of a ring against the box. Returns a closed ring,
/// or nothing if the clipped area vanishes.
inline std::optional<std::vector<Point>> clip_polygon(std::span<const Point> ring, const Box& box) {
  std::vector<Point> poly = open_ring(ring);
  auto clip_edge = [&](auto inside, auto intersect) {
    std::vector<Point> out;
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Point cur = poly[i], prev = poly[(i + n - 1) % n];
      const bool cin = inside(cur), pin = inside(prev);
      if (cin) {
        if (!pin) out.push_back(intersect(prev, cur));
        out.push_back(cur);
      } else if (pin) {
        out.push_back(intersect(prev, cur));
      }
    }
    poly = std::move(out);
  };
  auto lerp_x = [&](Point a, Point b, double x) {
    const double t = (x - a.x) / (b.x - a.x);
    return box.clamp(Point{x, a.y + t * (b.y - a.y)});
  };
  auto lerp_y = [&](Point a, Point b, double y) {
    const double t = (y - a.y) / (b.y - a.y);
    return box.clamp(Point{a.x + t * (b.x - a.x), y});
  };
  clip_edge([&](Point p) { return p.x >= box.min.x; }, [&](Point a, Point b) { return lerp_x(a, b, box.min.x); });
  clip_edge([&](Point p) { return p.x <= box.max.x; }, [&](Point a, Point b) { return lerp_x(a, b, box.max.x); });
  clip_edge([&](Point p) { return p.y >= box.min.y; }, [&](Point a, Point b) { return lerp_y(a, b, box.min.y); });
  clip_edge([&](Point p) { return p.y <= box.max.y; }, [&](Point a, Point b) { return lerp_y(a, b, box.max.y); });
  if (poly.size() < 3 || std::abs(signed_area(poly)) <= 0.0) return std::nullopt;
  return close_ring(std::move(poly));
}

/// Area centroid of a ring; falls back to the vertex mean for zero area.
inline Point polygon_centroid(std::span<const Point> ring) {
  const std::vector<Point> poly = open_ring(ring);
  const double a = signed_area(poly);
  if (poly.empty()) return {};
  if (std::abs(a) < 1e-12) {
    Point m{};
    for (Point p : poly) m = m + p;
    return (1.0 / static_cast<double>(poly.size())) * m;
  }
  double cx = 0.0, cy = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point p = poly[i], q = poly[(i + 1) % n];
    const double c = cross(p, q);
    cx += (p.x + q.x) * c;
    cy += (p.y + q.y) * c;
  }
  return {cx / (6.0 * a), cy / (6.0 * a)};
}

/// Point at half the arc length of a polyline.
inline Point polyline_midpoint(std::span<const Point> pts) {
  if (pts.size() == 1) return pts[0];
  const double half = 0.5 * polyline_length(pts);
  double acc = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double len = distance(pts[i - 1], pts[i]);
    if (acc + len >= half && len > 0.0) {
      const double t = (half - acc) / len;
      return pts[i - 1] + t * (pts[i] - pts[i - 1]);
    }
    acc += len;
  }
  return pts.back();
}

/// Even-odd crossing test; boundary points are unspecified.
inline bool point_in_polygon(Point p, std::span<const Point> ring) {
  const std::vector<Point> poly = open_ring(ring);
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point a = poly[i], b = poly[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x) inside = !inside;
    }
  }
  return inside;
}

inline bool on_segment(Point p, Point a, Point b, double eps = 1e-9) {
  if (std::abs(cross(b - a, p - a)) > eps * std::max(1.0, distance(a, b))) return false;
  return p.x >= std::min(a.x, b.x) - eps && p.x <= std::max(a.x, b.x) + eps &&
         p.y >= std::min(a.y, b.y) - eps && p.y <= std::max(a.y, b.y) + eps;
}

inline bool on_boundary(Point p, std::span<const Point> ring) {
  const std::vector<Point> poly = open_ring(ring);
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i)
    if (on_segment(p, poly[i], poly[(i + 1) % n])) return true;
  return false;
}

/// True when segments ab and cd cross at a single interior point of both.
inline bool segments_properly_intersect(Point a, Point b, Point c, Point d) {
  const double d1 = cross(b - a, c - a), d2 = cross(b - a, d - a);
  const double d3 = cross(d - c, a - c), d4 = cross(d - c, b - c);
  return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

}  // namespace deepssn
