#include <catch_amalgamated.hpp>

#include <functional>
#include <random>

#include "deepssn/qcn.hpp"
#include "deepssn/synthetic.hpp"

using namespace deepssn;
using Catch::Approx;

namespace {

// Copy of q with the proximity of the given edges toggled.
Qcn flip_edges(const Qcn& q, std::initializer_list<std::size_t> which) {
  std::vector<QcnEdge> edges = q.edges();
  for (std::size_t e : which)
    edges[e].proximity = edges[e].proximity == Proximity::near ? Proximity::far : Proximity::near;
  return Qcn(q.nodes(), edges, q.extent_m());
}

// Best score over every layer-consistent partial injection q1 -> q2.
double exhaustive_best(const Qcn& q1, const Qcn& q2) {
  NodeMatching m(q1.size(), -1);
  std::vector<bool> used(q2.size(), false);
  double best = 0;
  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (i == q1.size()) {
      best = std::max(best, matching_score(q1, q2, m));
      return;
    }
    rec(i + 1);
    for (std::size_t j = 0; j < q2.size(); ++j) {
      if (used[j] || q1.nodes()[i].layer != q2.nodes()[j].layer) continue;
      used[j] = true;
      m[i] = static_cast<int>(j);
      rec(i + 1);
      m[i] = -1;
      used[j] = false;
    }
  };
  rec(0);
  return best;
}

SpatialScene random_scene(std::mt19937_64& gen, int n, int layers) {
  std::uniform_real_distribution<double> u(0, 400);
  std::uniform_int_distribution<int> l(0, layers - 1);
  SpatialScene s{"r", 0, 400, {}};
  for (int i = 0; i < n; ++i) s.objects.push_back(make_point("o" + std::to_string(i), l(gen), {u(gen), u(gen)}));
  return s;
}

}  // namespace

TEST_CASE("direction and proximity of a point pair", "[qcn]") {
  SpatialScene s{"p", 0, 400, {make_point("A", 7, {0, 0}), make_point("B", 12, {30, 0})}};
  const Qcn q = extract_qcn(s, 50);
  REQUIRE(q.size() == 2);
  const Constraint ab = q.constraint(0, 1);
  CHECK(ab.proximity == Proximity::near);
  CHECK(ab.direction == Direction::E);
  CHECK_FALSE(ab.topology);
  CHECK(q.constraint(1, 0).direction == Direction::W);
  CHECK(extract_qcn(s, 20).constraint(0, 1).proximity == Proximity::far);
}

TEST_CASE("compass sectors and boundary ties", "[qcn]") {
  const Point o{0, 0};
  CHECK(compass_sector(o, {0, 1}) == Direction::N);
  CHECK(compass_sector(o, {1, 1}) == Direction::NE);
  CHECK(compass_sector(o, {1, -1}) == Direction::SE);
  CHECK(compass_sector(o, {0, -1}) == Direction::S);
  CHECK(compass_sector(o, {-1, -1}) == Direction::SW);
  CHECK(compass_sector(o, {-1, 0}) == Direction::W);
  CHECK(compass_sector(o, {-1, 1}) == Direction::NW);
  // Bearing exactly 22.5 degrees sits on the N/NE boundary and goes clockwise.
  const double t = std::tan(22.5 * std::numbers::pi / 180.0);
  CHECK(compass_sector(o, {t, 1}) == Direction::NE);
  CHECK_FALSE(compass_sector(o, o));
}

TEST_CASE("nested squares read as inside and contains", "[qcn]") {
  const std::vector<Point> outer{{10, 10}, {90, 10}, {90, 90}, {10, 90}};
  const std::vector<Point> inner{{30, 30}, {50, 30}, {50, 50}, {30, 50}};
  SpatialScene s{"t", 0, 400, {make_polygon("in", 8, inner), make_polygon("out", 6, outer)}};
  // Oracle: every vertex and the centroid of `inner` lies inside `outer`.
  for (const Point& p : inner) REQUIRE(point_in_polygon(p, s.objects[1].coords));
  REQUIRE(point_in_polygon(polygon_centroid(s.objects[0].coords), s.objects[1].coords));
  const Qcn q = extract_qcn(s);
  CHECK(q.constraint(0, 1).topology == Topology::inside);
  CHECK(q.constraint(1, 0).topology == Topology::contains);
}

TEST_CASE("polygon topology relations", "[qcn]") {
  const std::vector<Point> a = close_ring({{0, 0}, {10, 0}, {10, 10}, {0, 10}});
  CHECK(polygon_topology(a, a) == Topology::equal);
  CHECK(polygon_topology(a, close_ring({{5, 5}, {15, 5}, {15, 15}, {5, 15}})) == Topology::overlap);
  CHECK(polygon_topology(a, close_ring({{20, 0}, {30, 0}, {30, 10}, {20, 10}})) == Topology::disjoint);
  CHECK(polygon_topology(a, close_ring({{-5, -5}, {20, -5}, {20, 20}, {-5, 20}})) == Topology::inside);
}

TEST_CASE("empty scene has no network", "[qcn]") {
  CHECK_THROWS_WITH(extract_qcn(SpatialScene{"e", 0, 400, {}}), "empty scene has no QCN");
  CHECK_THROWS_AS(qcn_similarity(Qcn(), Qcn()), ValidationError);
}

TEST_CASE("identical networks score one, disjoint layers zero", "[qcn]") {
  for (const auto& s : generate_synthetic({12, 3})) {
    const Qcn q = extract_qcn(s);
    CHECK(qcn_similarity(q, q) == 1.0);
  }
  SpatialScene a{"a", 0, 400, {make_point("x", 7, {0, 0}), make_point("y", 12, {30, 0})}};
  SpatialScene b{"b", 0, 400, {make_point("x", 2, {0, 0}), make_point("y", 3, {30, 0})}};
  CHECK(qcn_similarity(extract_qcn(a), extract_qcn(b)) == 0.0);
}

TEST_CASE("one flipped constraint of three gives two thirds", "[qcn]") {
  SpatialScene s{"f", 0, 400, {make_point("a", 2, {50, 50}), make_point("b", 7, {120, 60}), make_point("c", 12, {80, 300})}};
  const Qcn q = extract_qcn(s);
  REQUIRE(q.edges().size() == 3);
  // Pairs (a,b), (a,c), (b,c): only (a,b) disagrees after the flip.
  CHECK(qcn_similarity(q, flip_edges(q, {0})) == Approx(2.0 / 3.0));
  CHECK(qcn_similarity(flip_edges(q, {0}), q) == Approx(2.0 / 3.0));
}

TEST_CASE("greedy matching against the exhaustive optimum", "[qcn]") {
  std::mt19937_64 gen(17);
  std::uniform_int_distribution<int> size(1, 6);
  for (int trial = 0; trial < 300; ++trial) {
    const bool unique_layers = trial % 2 == 0;
    SpatialScene a, b;
    if (unique_layers) {
      // Layers drawn without repetition make the matching forced.
      std::vector<int> layers{0, 1, 2, 3, 4, 5, 6, 7};
      std::shuffle(layers.begin(), layers.end(), gen);
      a = random_scene(gen, size(gen), 1);
      b = random_scene(gen, size(gen), 1);
      for (std::size_t i = 0; i < a.objects.size(); ++i) a.objects[i].layer = layers[i];
      std::shuffle(layers.begin(), layers.begin() + 6, gen);
      for (std::size_t i = 0; i < b.objects.size(); ++i) b.objects[i].layer = layers[i];
    } else {
      a = random_scene(gen, size(gen), 3);
      b = random_scene(gen, size(gen), 3);
    }
    const Qcn qa = extract_qcn(a), qb = extract_qcn(b);
    const double greedy = qcn_similarity(qa, qb);
    const double best = exhaustive_best(qa, qb);
    CHECK(greedy >= 0.0);
    CHECK(greedy <= best + 1e-12);
    if (unique_layers) CHECK(greedy == Approx(best));
    CHECK(qcn_similarity(qb, qa) == Approx(greedy));
  }
}

TEST_CASE("coarse candidates rank by score then id", "[qcn]") {
  SpatialScene s{"anchor", 0, 400, {}};
  const std::vector<Point> pts{{20, 20}, {150, 40}, {300, 80}, {60, 250}, {380, 380}};
  for (int i = 0; i < 5; ++i) s.objects.push_back(make_point("n" + std::to_string(i), i, pts[static_cast<std::size_t>(i)]));
  const Qcn anchor = extract_qcn(s);
  REQUIRE(anchor.edges().size() == 10);
  std::map<std::string, Qcn> corpus{{"c", flip_edges(anchor, {0})},                     // 0.9
                                    {"a", flip_edges(anchor, {0, 1, 2, 3, 4, 5})},        // 0.4
                                    {"b", flip_edges(anchor, {0, 1, 2, 3, 4, 5, 6, 7, 8})}};  // 0.1
  const auto top = coarse_positive_candidates(anchor, corpus, 2);
  REQUIRE(top.size() == 2);
  CHECK(top[0].id == "c");
  CHECK(top[0].score == Approx(0.9));
  CHECK(top[1].id == "a");
  CHECK(top[1].score == Approx(0.4));

  corpus.emplace("self", anchor);
  const auto all = coarse_positive_candidates(anchor, corpus, 50);
  REQUIRE(all.size() == 4);
  CHECK(all[0].id == "self");
  CHECK(all[0].score == 1.0);
  CHECK(all[3].id == "b");
  CHECK(coarse_positive_candidates(anchor, {}, 3).empty());
}
