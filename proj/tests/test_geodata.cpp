#include <catch_amalgamated.hpp>

#include <random>
#include <set>
#include <sstream>
#include <utility>

#include "deepssn/corpus_io.hpp"
#include "deepssn/geodata.hpp"
#include "deepssn/synthetic.hpp"

using namespace deepssn;

namespace {

int nonzero_cells(const SceneTensor& t) {
  int n = 0;
  for (float v : t.values()) n += v != 0.0f;
  return n;
}

SketchIcon grid_icon(const std::string& type, double col, double row) {
  SketchIcon i;
  i.type = type;
  i.coords = {{col, row}};
  return i;
}

}  // namespace

TEST_CASE("unify translates into the scene frame", "[geodata]") {
  const std::vector<GeoObject> objs{make_point("h", 12, {1055, 2110})};
  const auto r = unify_coordinates(objs, {1000, 2000});
  REQUIRE(r.objects.size() == 1);
  CHECK(r.objects[0].coords[0] == Point{55, 110});
  CHECK(r.diagnostics.empty());
}

TEST_CASE("unify drops points outside the extent", "[geodata]") {
  const std::vector<GeoObject> objs{make_point("a", 7, {995, 2010}), make_point("b", 7, {1400, 2010}),
                                    make_point("c", 7, {1399.9, 2010})};
  const auto r = unify_coordinates(objs, {1000, 2000});
  REQUIRE(r.objects.size() == 1);
  CHECK(r.objects[0].id == "c");
}

TEST_CASE("unify rejects non-finite coordinates with a diagnostic", "[geodata]") {
  const std::vector<GeoObject> objs{make_point("bad", 7, {std::nan(""), 1}), make_point("ok", 7, {10, 10})};
  const auto r = unify_coordinates(objs, {0, 0});
  REQUIRE(r.objects.size() == 1);
  REQUIRE(r.diagnostics.size() == 1);
  CHECK(r.diagnostics[0].find("bad") != std::string::npos);
}

TEST_CASE("unify clips a boundary-crossing polyline", "[geodata]") {
  const std::vector<GeoObject> objs{make_polyline("r", 5, {{-100, 50}, {200, 350}})};
  const auto r = unify_coordinates(objs, {0, 0});
  REQUIRE(r.objects.size() == 1);
  const auto& c = r.objects[0].coords;
  REQUIRE(c.size() == 2);
  // Oracle: line y = x + 150 enters at x = 0 and leaves through y = 400 at x = 250,
  // but the segment ends at (200, 350) first.
  CHECK(c[0].x == Catch::Approx(0.0).margin(1e-9));
  CHECK(c[0].y == Catch::Approx(150.0));
  CHECK(c[1] == Point{200, 350});
}

TEST_CASE("merge collapses same-layer points within the radius", "[geodata]") {
  const std::vector<GeoObject> a{make_point("a", 12, {10, 10})};
  const std::vector<GeoObject> b{make_point("b", 12, {12, 10})};
  const auto m = merge_sources(a, b, 5);
  REQUIRE(m.size() == 1);
  CHECK(m[0].id == "a");

  const std::vector<GeoObject> school{make_point("s", 2, {10, 10})};
  CHECK(merge_sources(a, school, 5).size() == 2);

  const std::vector<GeoObject> none;
  const std::vector<GeoObject> r{make_point("r", 7, {1, 1})};
  const auto u = merge_sources(none, r, 5);
  REQUIRE(u.size() == 1);
  CHECK(u[0] == r[0]);
}

TEST_CASE("rasterize a single hospital", "[geodata]") {
  SpatialScene s{"x", 0, 400, {make_point("h", 12, {55, 105})}};
  const SceneTensor t = rasterize(s);
  CHECK(t.channels() == 15);
  CHECK(t.height() == 40);
  CHECK(t.width() == 40);
  CHECK(t.at(12, 10, 5) == 1.0f);
  CHECK(nonzero_cells(t) == 1);
}

TEST_CASE("co-located points are counted", "[geodata]") {
  SpatialScene s{"x", 0, 400, {make_point("a", 7, {31, 31}), make_point("b", 7, {38, 39})}};
  const SceneTensor t = rasterize(s);
  CHECK(t.at(7, 3, 3) == 2.0f);
  CHECK(nonzero_cells(t) == 1);
}

TEST_CASE("empty scene rasterizes to zeros", "[geodata]") {
  const SceneTensor t = rasterize(SpatialScene{"e", 0, 400, {}});
  CHECK(t.size() == 15u * 40 * 40);
  CHECK(nonzero_cells(t) == 0);
  CHECK(t.sparsity() == 1.0);
}

TEST_CASE("out-of-range layer names the object", "[geodata]") {
  SpatialScene s{"x", 0, 400, {make_point("oops", 15, {5, 5})}};
  try {
    rasterize(s);
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("oops") != std::string::npos);
  }
}

TEST_CASE("point counts are conserved", "[geodata]") {
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> u(0, 399.999);
  std::uniform_int_distribution<int> layer(0, 14);
  for (int trial = 0; trial < 50; ++trial) {
    SpatialScene s{"p", 0, 400, {}};
    std::vector<int> per_layer(15, 0);
    for (int i = 0; i < 40; ++i) {
      const int l = layer(gen);
      ++per_layer[static_cast<std::size_t>(l)];
      s.objects.push_back(make_point("o" + std::to_string(i), l, {u(gen), u(gen)}));
    }
    const SceneTensor t = rasterize(s);
    for (int c = 0; c < 15; ++c) {
      double sum = 0;
      for (int r = 0; r < 40; ++r)
        for (int col = 0; col < 40; ++col) sum += t.at(c, r, col);
      CHECK(sum == per_layer[static_cast<std::size_t>(c)]);
    }
  }
}

TEST_CASE("polyline cells match dense sampling", "[geodata]") {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.5, 399.5);
  for (int trial = 0; trial < 100; ++trial) {
    const Point a{u(gen), u(gen)}, b{u(gen), u(gen)};
    SpatialScene s{"l", 0, 400, {make_polyline("r", 5, {a, b})}};
    const SceneTensor t = rasterize(s);
    std::set<std::pair<int, int>> sampled;
    const int n = 40000;
    for (int i = 0; i <= n; ++i) {
      const Point p = a + (static_cast<double>(i) / n) * (b - a);
      sampled.emplace(static_cast<int>(p.y / 10), static_cast<int>(p.x / 10));
    }
    std::set<std::pair<int, int>> marked;
    for (int r = 0; r < 40; ++r)
      for (int c = 0; c < 40; ++c)
        if (t.at(5, r, c) != 0.0f) marked.emplace(r, c);
    // Every sampled cell is marked; marked cells missed by sampling are
    // corner grazes of at most one sample spacing.
    for (const auto& cell : sampled) CHECK(marked.count(cell) == 1);
    CHECK(marked.size() <= sampled.size() + 2);
  }
}

TEST_CASE("polygon marks cells by center inclusion", "[geodata]") {
  SpatialScene s{"g", 0, 400, {make_polygon("p", 6, {{20, 20}, {60, 20}, {60, 40}, {20, 40}})}};
  const SceneTensor t = rasterize(s);
  for (int r = 0; r < 40; ++r)
    for (int c = 0; c < 40; ++c) {
      const bool inside = r >= 2 && r < 4 && c >= 2 && c < 6;
      CHECK((t.at(6, r, c) == 1.0f) == inside);
    }
}

TEST_CASE("sketch with three icons in three cells", "[geodata]") {
  SketchDocument d{"sk", {grid_icon("hospital", 5, 10), grid_icon("school", 20, 20), grid_icon("restaurant", 39, 0)}, "", ""};
  CHECK(nonzero_cells(sketch_to_tensor(d)) == 3);
}

TEST_CASE("grid and metric sketch coordinates agree", "[geodata]") {
  SketchDocument g{"g", {grid_icon("hospital", 5, 10)}, "", ""};
  SketchIcon m = grid_icon("hospital", 55, 105);
  m.units = SketchUnits::metric;
  SketchDocument md{"m", {m}, "", ""};
  const SceneTensor a = sketch_to_tensor(g), b = sketch_to_tensor(md);
  CHECK(a.at(12, 10, 5) == 1.0f);
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}

TEST_CASE("empty sketch gives a zero tensor", "[geodata]") {
  CHECK(nonzero_cells(sketch_to_tensor(SketchDocument{"e", {}, "", ""})) == 0);
}

TEST_CASE("unknown icon type is rejected", "[geodata]") {
  SketchDocument d{"u", {grid_icon("spaceport", 1, 1)}, "", ""};
  CHECK_THROWS_AS(sketch_to_tensor(d), ValidationError);
  SketchDocument off{"o", {grid_icon("hospital", 40, 1)}, "", ""};
  CHECK_THROWS_AS(sketch_to_tensor(off), ValidationError);
}

TEST_CASE("sketch JSON round trip", "[geodata]") {
  const auto j = nlohmann::json::parse(
      R"({"sketch_id":"q1","icons":[{"type":"hospital","coords":[[5,10]]},
          {"type":"road","kind":"polyline","coords":[[0,0],[39,39]]}],"timestamp":"t0"})");
  const SketchDocument d = sketch_from_json(j);
  REQUIRE(d.icons.size() == 2);
  CHECK(d.icons[1].kind == GeometryKind::polyline);
  const SketchDocument back = sketch_from_json(to_json(d));
  CHECK(back.icons[1].coords == d.icons[1].coords);
  CHECK_THROWS_AS(sketch_from_json(nlohmann::json::parse(R"({"icons":[]})")), ValidationError);
}

TEST_CASE("tensor cache round trip", "[geodata]") {
  const auto scenes = generate_synthetic({4, 3});
  for (const auto& s : scenes) {
    const SceneTensor t = rasterize(s);
    const std::string bytes = encode_tensor(t);
    CHECK(bytes.substr(0, 4) == "SSTN");
    const SceneTensor back = decode_tensor(bytes);
    CHECK(std::equal(t.values().begin(), t.values().end(), back.values().begin()));
    CHECK_THROWS_AS(decode_tensor(bytes.substr(0, bytes.size() - 1)), FormatError);
  }
}

TEST_CASE("corpus lines round trip", "[geodata]") {
  const auto scenes = generate_synthetic({6, 21});
  std::istringstream in(corpus_to_string(scenes));
  CHECK(parse_corpus(in) == scenes);
  std::istringstream bad("{\"scene_id\": 3}\n");
  CHECK_THROWS_AS(parse_corpus(bad), ValidationError);
}

TEST_CASE("synthetic generator is deterministic and labelled", "[geodata]") {
  const auto a = generate_synthetic({64, 7}), b = generate_synthetic({64, 7});
  REQUIRE(a.size() == 64);
  CHECK(a == b);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].label == static_cast<int>(i));
    CHECK(a[i].objects.size() >= 3);
    CHECK(a[i].objects.size() <= 12);
    for (const auto& o : a[i].objects) {
      CHECK_FALSE(check_object(o));
      for (const Point& p : o.coords) {
        CHECK(p.x >= 0);
        CHECK(p.x <= 400);
      }
    }
  }
  CHECK_FALSE(generate_synthetic({64, 8}) == a);
}
