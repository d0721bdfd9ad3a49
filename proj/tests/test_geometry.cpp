#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "deepssn/geometry.hpp"

using namespace deepssn;
using Catch::Approx;

TEST_CASE("segment clip matches dense sampling", "[geometry]") {
  const Box box{{0, 0}, {100, 100}};
  std::mt19937_64 gen(42);
  std::uniform_real_distribution<double> u(-80, 180);
  for (int trial = 0; trial < 500; ++trial) {
    const Point a{u(gen), u(gen)}, b{u(gen), u(gen)};
    // Oracle: fraction of 20k samples along ab inside the closed box.
    double lo = 2, hi = -1;
    const int n = 20000;
    for (int i = 0; i <= n; ++i) {
      const double t = static_cast<double>(i) / n;
      const Point p = a + t * (b - a);
      if (box.contains_closed(p)) {
        lo = std::min(lo, t);
        hi = std::max(hi, t);
      }
    }
    const auto got = clip_segment_params(a, b, box);
    if (hi < 0) {
      // A sliver shorter than the sample spacing may be missed by the oracle.
      if (got) CHECK(got->second - got->first < 2.0 / n);
      continue;
    }
    REQUIRE(got);
    CHECK(std::abs(got->first - lo) <= 1.0 / n);
    CHECK(std::abs(got->second - hi) <= 1.0 / n);
  }
}

TEST_CASE("segment entirely outside is rejected", "[geometry]") {
  const Box box{{0, 0}, {10, 10}};
  CHECK_FALSE(clip_segment({-5, -5}, {-1, 20}, box));
  CHECK_FALSE(clip_segment({11, 0}, {20, 10}, box));
  auto inside = clip_segment({1, 1}, {2, 3}, box);
  REQUIRE(inside);
  CHECK(inside->first == Point{1, 1});
  CHECK(inside->second == Point{2, 3});
}

TEST_CASE("polyline clip keeps the longest inside piece", "[geometry]") {
  const Box box{{0, 0}, {100, 100}};
  // Enters, leaves for a long detour, re-enters for a longer run.
  std::vector<Point> pts{{90, 50}, {150, 50}, {150, 20}, {10, 20}};
  auto clipped = clip_polyline(pts, box);
  REQUIRE(clipped);
  CHECK(polyline_length(*clipped) == Approx(90.0));
  CHECK(clipped->front() == Point{100, 20});
  CHECK(clipped->back() == Point{10, 20});
}

TEST_CASE("point in polygon and boundary", "[geometry]") {
  const std::vector<Point> sq{{0, 0}, {10, 0}, {10, 10}, {0, 10}, {0, 0}};
  CHECK(point_in_polygon({5, 5}, sq));
  CHECK_FALSE(point_in_polygon({15, 5}, sq));
  CHECK(on_boundary({10, 5}, sq));
  CHECK_FALSE(on_boundary({5, 5}, sq));
  const std::vector<Point> ell{{0, 0}, {10, 0}, {10, 4}, {4, 4}, {4, 10}, {0, 10}, {0, 0}};
  CHECK(point_in_polygon({2, 8}, ell));
  CHECK_FALSE(point_in_polygon({8, 8}, ell));
}

TEST_CASE("area and centroid", "[geometry]") {
  const std::vector<Point> sq{{0, 0}, {4, 0}, {4, 2}, {0, 2}, {0, 0}};
  CHECK(signed_area(sq) == Approx(8.0));
  const Point c = polygon_centroid(sq);
  CHECK(c.x == Approx(2.0));
  CHECK(c.y == Approx(1.0));
  std::vector<Point> cw(sq.rbegin(), sq.rend());
  CHECK(signed_area(cw) == Approx(-8.0));
}

TEST_CASE("polygon clip area against grid count", "[geometry]") {
  const Box box{{0, 0}, {100, 100}};
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(-50, 150);
  for (int trial = 0; trial < 40; ++trial) {
    const double x0 = u(gen), y0 = u(gen);
    const double w = 10 + std::abs(u(gen)) / 2, h = 10 + std::abs(u(gen)) / 2;
    const std::vector<Point> rect{{x0, y0}, {x0 + w, y0}, {x0 + w, y0 + h}, {x0, y0 + h}, {x0, y0}};
    // Oracle: overlap of two axis-aligned rectangles.
    const double ox = std::max(0.0, std::min(100.0, x0 + w) - std::max(0.0, x0));
    const double oy = std::max(0.0, std::min(100.0, y0 + h) - std::max(0.0, y0));
    auto clipped = clip_polygon(rect, box);
    if (ox * oy < 1e-9) {
      CHECK((!clipped || std::abs(signed_area(*clipped)) < 1e-6));
      continue;
    }
    REQUIRE(clipped);
    CHECK(std::abs(signed_area(*clipped)) == Approx(ox * oy).epsilon(1e-9));
  }
}

TEST_CASE("polyline midpoint is the arc-length middle", "[geometry]") {
  const std::vector<Point> pts{{0, 0}, {10, 0}, {10, 30}};
  const Point m = polyline_midpoint(pts);
  CHECK(m.x == Approx(10.0));
  CHECK(m.y == Approx(10.0));
}
