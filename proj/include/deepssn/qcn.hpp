#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepssn/error.hpp"
#include "deepssn/geodata.hpp"

namespace deepssn {

enum class Topology : std::uint8_t { disjoint, overlap, contains, inside, equal };
enum class Direction : std::uint8_t { N, NE, E, SE, S, SW, W, NW };
enum class Proximity : std::uint8_t { near, far };

inline constexpr std::array<std::string_view, 5> kTopologyNames = {"disjoint", "overlap", "contains", "inside", "equal"};
inline constexpr std::array<std::string_view, 8> kDirectionNames = {"N", "NE", "E", "SE", "S", "SW", "W", "NW"};

inline Direction opposite(Direction d) { return static_cast<Direction>((static_cast<int>(d) + 4) % 8); }

/// Converse topology relation (reading the pair the other way round).
inline Topology converse(Topology t) {
  if (t == Topology::contains) return Topology::inside;
  if (t == Topology::inside) return Topology::contains;
  return t;
}

/// Eight 45-degree cones centred on the compass points. The bearing is
/// measured clockwise from north; a bearing on a cone boundary belongs to
/// the clockwise neighbour. Nothing for a zero displacement.
inline std::optional<Direction> compass_sector(Point from, Point to) {
  const double dx = to.x - from.x, dy = to.y - from.y;
  if (dx == 0.0 && dy == 0.0) return std::nullopt;
  double bearing = std::atan2(dx, dy) * 180.0 / std::numbers::pi;
  if (bearing < 0.0) bearing += 360.0;
  const int sector = static_cast<int>(std::floor((bearing + 22.5) / 45.0)) % 8;
  return static_cast<Direction>(sector);
}

struct QcnNode {
  std::string node_id;
  int layer = 0;
  Point anchor;
};

/// Constraints for one unordered pair, read from node `from` to node `to`
/// with from < to.
struct QcnEdge {
  int from = 0;
  int to = 0;
  std::optional<Topology> topology;
  std::optional<Direction> direction;
  Proximity proximity = Proximity::far;
};

/// Pairwise constraint readings for an ordered (a, b) pair, derived from
/// the stored unordered edge.
struct Constraint {
  std::optional<Topology> topology;
  std::optional<Direction> direction;
  Proximity proximity = Proximity::far;

  friend bool operator==(const Constraint&, const Constraint&) = default;
};

/// Complete constraint network over the objects of one scene.
class Qcn {
public:
  Qcn() = default;
  Qcn(std::vector<QcnNode> nodes, std::vector<QcnEdge> edges, double extent_m)
      : nodes_(std::move(nodes)), edges_(std::move(edges)), extent_m_(extent_m) {}

  const std::vector<QcnNode>& nodes() const { return nodes_; }
  const std::vector<QcnEdge>& edges() const { return edges_; }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  double extent_m() const { return extent_m_; }

  /// Reading from node a to node b (a != b).
  Constraint constraint(int a, int b) const {
    const bool flipped = a > b;
    const QcnEdge& e = edges_[pair_index(std::min(a, b), std::max(a, b))];
    Constraint c{e.topology, e.direction, e.proximity};
    if (flipped) {
      if (c.topology) c.topology = converse(*c.topology);
      if (c.direction) c.direction = opposite(*c.direction);
    }
    return c;
  }

  /// Index of the unordered pair (i < j) in the edge list.
  std::size_t pair_index(int i, int j) const {
    const auto n = static_cast<std::size_t>(nodes_.size());
    const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
    return ui * n - ui * (ui + 1) / 2 + (uj - ui - 1);
  }

private:
  std::vector<QcnNode> nodes_;
  std::vector<QcnEdge> edges_;
  double extent_m_ = 400.0;
};

/// Five-relation topology between two polygon rings, read from a to b.
inline Topology polygon_topology(std::span<const Point> a, std::span<const Point> b) {
  const std::vector<Point> ra = open_ring(a), rb = open_ring(b);
  auto inside_or_on = [](Point p, std::span<const Point> ring) {
    return on_boundary(p, ring) || point_in_polygon(p, ring);
  };
  auto all_within = [&](const std::vector<Point>& pts, std::span<const Point> ring) {
    for (Point p : pts)
      if (!inside_or_on(p, ring)) return false;
    return true;
  };
  const bool a_in_b = all_within(ra, rb) && inside_or_on(polygon_centroid(ra), rb);
  const bool b_in_a = all_within(rb, ra) && inside_or_on(polygon_centroid(rb), ra);
  if (a_in_b && b_in_a) return Topology::equal;
  if (a_in_b) return Topology::inside;
  if (b_in_a) return Topology::contains;

  for (std::size_t i = 0; i < ra.size(); ++i)
    for (std::size_t j = 0; j < rb.size(); ++j)
      if (segments_properly_intersect(ra[i], ra[(i + 1) % ra.size()], rb[j], rb[(j + 1) % rb.size()]))
        return Topology::overlap;
  for (Point p : ra)
    if (point_in_polygon(p, rb) && !on_boundary(p, rb)) return Topology::overlap;
  for (Point p : rb)
    if (point_in_polygon(p, ra) && !on_boundary(p, ra)) return Topology::overlap;
  return Topology::disjoint;
}

inline constexpr double kDefaultNearThresholdM = 100.0;

/// One node per object; each unordered pair carries proximity (anchor
/// distance against the threshold), compass direction, and topology for
/// polygon-polygon pairs.
inline Qcn extract_qcn(const SpatialScene& scene, double near_threshold_m = kDefaultNearThresholdM) {
  if (scene.objects.empty()) throw ValidationError("empty scene has no QCN");
  std::vector<QcnNode> nodes;
  nodes.reserve(scene.objects.size());
  for (const GeoObject& o : scene.objects) nodes.push_back({o.id, o.layer, anchor_point(o)});

  const int n = static_cast<int>(nodes.size());
  std::vector<QcnEdge> edges;
  edges.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      QcnEdge e;
      e.from = i;
      e.to = j;
      const Point a = nodes[static_cast<std::size_t>(i)].anchor, b = nodes[static_cast<std::size_t>(j)].anchor;
      e.proximity = distance(a, b) < near_threshold_m ? Proximity::near : Proximity::far;
      e.direction = compass_sector(a, b);
      const GeoObject& oa = scene.objects[static_cast<std::size_t>(i)];
      const GeoObject& ob = scene.objects[static_cast<std::size_t>(j)];
      if (oa.kind == GeometryKind::polygon && ob.kind == GeometryKind::polygon)
        e.topology = polygon_topology(oa.coords, ob.coords);
      edges.push_back(e);
    }
  }
  return Qcn(std::move(nodes), std::move(edges), scene.extent_m);
}

/// Node correspondence q1 -> q2 (-1 when unmatched).
using NodeMatching = std::vector<int>;

/// Greedy layer-constrained matching: candidate pairs of equal layer are
/// taken in order of normalised anchor distance (ties by node indices).
inline NodeMatching greedy_match(const Qcn& q1, const Qcn& q2) {
  struct Candidate {
    double d2;
    int i;
    int j;
  };
  std::vector<Candidate> cands;
  for (int i = 0; i < static_cast<int>(q1.size()); ++i) {
    const QcnNode& a = q1.nodes()[static_cast<std::size_t>(i)];
    const Point pa = (1.0 / q1.extent_m()) * a.anchor;
    for (int j = 0; j < static_cast<int>(q2.size()); ++j) {
      const QcnNode& b = q2.nodes()[static_cast<std::size_t>(j)];
      if (a.layer != b.layer) continue;
      cands.push_back({squared_distance(pa, (1.0 / q2.extent_m()) * b.anchor), i, j});
    }
  }
  std::sort(cands.begin(), cands.end(),
            [](const Candidate& x, const Candidate& y) { return std::tie(x.d2, x.i, x.j) < std::tie(y.d2, y.i, y.j); });
  NodeMatching match(q1.size(), -1);
  std::vector<bool> used(q2.size(), false);
  for (const Candidate& c : cands) {
    if (match[static_cast<std::size_t>(c.i)] >= 0 || used[static_cast<std::size_t>(c.j)]) continue;
    match[static_cast<std::size_t>(c.i)] = c.j;
    used[static_cast<std::size_t>(c.j)] = true;
  }
  return match;
}

/// Fraction of node pairs (over the larger network) whose matched
/// counterparts agree on proximity, direction and topology.
inline double matching_score(const Qcn& q1, const Qcn& q2, const NodeMatching& match) {
  const std::size_t n = std::max(q1.size(), q2.size());
  const std::size_t pairs = n * (n - 1) / 2;
  if (pairs == 0) {
    // Single-node networks: agreement reduces to whether the nodes matched.
    return (!match.empty() && match[0] >= 0) ? 1.0 : 0.0;
  }
  std::size_t agree = 0;
  const int m = static_cast<int>(q1.size());
  for (int i = 0; i < m; ++i) {
    const int mi = match[static_cast<std::size_t>(i)];
    if (mi < 0) continue;
    for (int k = i + 1; k < m; ++k) {
      const int mk = match[static_cast<std::size_t>(k)];
      if (mk < 0) continue;
      if (q1.constraint(i, k) == q2.constraint(mi, mk)) ++agree;
    }
  }
  return static_cast<double>(agree) / static_cast<double>(pairs);
}

inline double qcn_similarity(const Qcn& q1, const Qcn& q2) {
  if (q1.empty() || q2.empty()) throw ValidationError("qcn_similarity: empty network");
  return matching_score(q1, q2, greedy_match(q1, q2));
}

struct ScoredId {
  std::string id;
  double score = 0.0;
};

/// The top_m corpus ids by descending similarity to the anchor, ties by
/// ascending id.
inline std::vector<ScoredId> coarse_positive_candidates(const Qcn& anchor, const std::map<std::string, Qcn>& corpus,
                                                        int top_m) {
  if (top_m < 1) throw ValidationError("coarse_positive_candidates: top_m must be >= 1");
  std::vector<ScoredId> scored;
  scored.reserve(corpus.size());
  for (const auto& [id, q] : corpus) scored.push_back({id, qcn_similarity(anchor, q)});
  std::stable_sort(scored.begin(), scored.end(), [](const ScoredId& a, const ScoredId& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  if (scored.size() > static_cast<std::size_t>(top_m)) scored.resize(static_cast<std::size_t>(top_m));
  return scored;
}

/// Debug dump record: nodes plus one [from, to, topology, direction,
/// proximity] triple per pair.
inline nlohmann::json qcn_to_json(const std::string& scene_id, const Qcn& q) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const QcnNode& n : q.nodes())
    nodes.push_back({{"id", n.node_id}, {"layer", n.layer}, {"anchor", {n.anchor.x, n.anchor.y}}});
  nlohmann::json edges = nlohmann::json::array();
  for (const QcnEdge& e : q.edges()) {
    edges.push_back({e.from, e.to,
                     e.topology ? nlohmann::json(std::string(kTopologyNames[static_cast<std::size_t>(*e.topology)])) : nlohmann::json(nullptr),
                     e.direction ? nlohmann::json(std::string(kDirectionNames[static_cast<std::size_t>(*e.direction)])) : nlohmann::json(nullptr),
                     e.proximity == Proximity::near ? "near" : "far"});
  }
  return {{"scene_id", scene_id}, {"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

}  // namespace deepssn
