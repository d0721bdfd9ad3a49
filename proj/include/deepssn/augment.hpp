#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "deepssn/error.hpp"
#include "deepssn/geodata.hpp"
#include "deepssn/random.hpp"

namespace deepssn {

enum class AugmentAction : std::uint8_t { drop, shift, rotate, scale, shift_and_scale };
inline constexpr int kAugmentActionCount = 5;
inline constexpr std::array<std::string_view, kAugmentActionCount> kAugmentActionNames = {
    "drop", "shift", "rotate", "scale", "shift_and_scale"};

/// Per-layer distortion rule: with probability select_p an object is
/// perturbed by one action drawn from action_p.
struct AugmentRule {
  int layer = 0;
  double select_p = 0.0;
  std::array<double, kAugmentActionCount> action_p{1.0, 0.0, 0.0, 0.0, 0.0};
  double shift_range_m = 100.0;
  double rotate_range_deg = 45.0;
  double scale_lo = 0.2;
  double scale_hi = 1.2;
  /// True for rules not taken from the published parameter table.
  bool off_table = false;

  void validate() const {
    const std::string who = "augment rule for layer " + std::to_string(layer);
    if (layer < 0 || layer >= kLayerCount) throw ValidationError(who + ": layer outside [0,14]");
    if (select_p < 0.0 || select_p > 1.0) throw ValidationError(who + ": select_p outside [0,1]");
    double sum = 0.0;
    for (double p : action_p) {
      if (p < 0.0) throw ValidationError(who + ": negative action probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError(who + ": action probabilities must sum to 1");
    if (!(scale_lo > 0.0) || scale_hi < scale_lo) throw ValidationError(who + ": scale range must satisfy 0 < lo <= hi");
    if (shift_range_m < 0.0 || rotate_range_deg < 0.0) throw ValidationError(who + ": negative range");
  }
};

struct AugmentConfig {
  std::vector<AugmentRule> rules;
  int factor = 20;
  std::uint64_t seed = 0;

  const AugmentRule* rule_for(int layer) const {
    for (const AugmentRule& r : rules)
      if (r.layer == layer) return &r;
    return nullptr;
  }

  void validate() const {
    if (factor < 1) throw ValidationError("augment: factor must be >= 1");
    for (const AugmentRule& r : rules) r.validate();
  }
};

namespace detail {

inline AugmentRule table_rule(int layer, double select, std::array<double, 5> actions, double shift,
                              double scale_lo) {
  AugmentRule r;
  r.layer = layer;
  r.select_p = select;
  r.action_p = actions;
  r.shift_range_m = shift;
  r.rotate_range_deg = 45.0;
  r.scale_lo = scale_lo;
  r.scale_hi = 1.2;
  return r;
}

}  // namespace detail

/// Rules per layer. Layers 2-14 follow the published table; the Shopping
/// row's action probabilities total 1.1 there and are rescaled to 1.
/// Layers 0-1 get a conservative rule flagged as off_table.
inline std::vector<AugmentRule> default_rules() {
  using detail::table_rule;
  std::vector<AugmentRule> rules;
  for (int layer : {0, 1}) {
    AugmentRule r = table_rule(layer, 0.2, {0.1, 0.3, 0.2, 0.2, 0.2}, 50.0, 0.5);
    r.off_table = true;
    rules.push_back(r);
  }
  rules.push_back(table_rule(2, 0.3, {0.1, 0.3, 0.2, 0.2, 0.2}, 100.0, 0.2));   // schools
  rules.push_back(table_rule(3, 0.2, {0.2, 0.2, 0.2, 0.2, 0.2}, 100.0, 0.2));   // hotels
  rules.push_back(table_rule(4, 0.2, {0.2, 0.2, 0.2, 0.2, 0.2}, 100.0, 0.2));   // government
  rules.push_back(table_rule(5, 0.4, {0.3, 0.2, 0.2, 0.1, 0.2}, 50.0, 0.2));    // roads and stations
  rules.push_back(table_rule(6, 0.3, {0.3, 0.2, 0.1, 0.2, 0.2}, 100.0, 0.4));   // greenbelt
  rules.push_back(table_rule(7, 0.5, {0.4, 0.2, 0.1, 0.1, 0.2}, 100.0, 0.2));   // restaurants
  rules.push_back(table_rule(8, 0.3, {0.4, 0.2, 0.1, 0.1, 0.2}, 100.0, 0.2));   // residential
  rules.push_back(table_rule(9, 0.3, {0.2, 0.2, 0.2, 0.2, 0.2}, 100.0, 0.5));   // rivers and lakes
  rules.push_back(table_rule(10, 0.4, {0.2 / 1.1, 0.3 / 1.1, 0.2 / 1.1, 0.2 / 1.1, 0.2 / 1.1}, 100.0, 0.2));
  rules.push_back(table_rule(11, 0.4, {0.4, 0.2, 0.1, 0.1, 0.2}, 100.0, 0.2));  // offices
  rules.push_back(table_rule(12, 0.2, {0.2, 0.2, 0.2, 0.2, 0.2}, 100.0, 0.2));  // hospitals
  rules.push_back(table_rule(13, 0.2, {0.3, 0.2, 0.1, 0.2, 0.2}, 100.0, 0.2));  // life service
  rules.push_back(table_rule(14, 0.2, {0.2, 0.2, 0.2, 0.2, 0.2}, 100.0, 0.5));  // scenic spots
  return rules;
}

inline AugmentConfig default_augment_config(std::uint64_t seed = 0, int factor = 20) {
  return {default_rules(), factor, seed};
}

/// Draws an action index from the categorical distribution.
inline AugmentAction sample_action(const AugmentRule& rule, KeyedRng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (int i = 0; i < kAugmentActionCount; ++i) {
    acc += rule.action_p[static_cast<std::size_t>(i)];
    if (u < acc) return static_cast<AugmentAction>(i);
  }
  for (int i = kAugmentActionCount - 1; i >= 0; --i)
    if (rule.action_p[static_cast<std::size_t>(i)] > 0.0) return static_cast<AugmentAction>(i);
  return AugmentAction::drop;
}

inline std::string variant_id(const std::string& scene_id, int variant_index) {
  return scene_id + "#v" + std::to_string(variant_index);
}

/// Applies the sampled action to one object; nothing means dropped.
/// Rotation and scaling pivot on the anchor point. For point objects those
/// two actions degrade to a shift.
inline std::optional<GeoObject> perturb_object(const GeoObject& o, const AugmentRule& rule, KeyedRng& rng,
                                               double extent_m) {
  if (!rng.bernoulli(rule.select_p)) return o;
  AugmentAction action = sample_action(rule, rng);
  if (o.kind == GeometryKind::point && (action == AugmentAction::rotate || action == AugmentAction::scale))
    action = AugmentAction::shift;

  GeoObject out = o;
  const Point pivot = anchor_point(o);
  auto shift = [&] {
    const Point d{rng.uniform(-rule.shift_range_m, rule.shift_range_m),
                  rng.uniform(-rule.shift_range_m, rule.shift_range_m)};
    for (Point& p : out.coords) p = p + d;
  };
  auto scale = [&] {
    const double s = rng.uniform(rule.scale_lo, rule.scale_hi);
    for (Point& p : out.coords) p = pivot + s * (p - pivot);
  };
  switch (action) {
    case AugmentAction::drop: return std::nullopt;
    case AugmentAction::shift: shift(); break;
    case AugmentAction::rotate: {
      const double deg = rng.uniform(-rule.rotate_range_deg, rule.rotate_range_deg);
      const double rad = deg * std::numbers::pi / 180.0;
      const double c = std::cos(rad), s = std::sin(rad);
      for (Point& p : out.coords) {
        const Point d = p - pivot;
        p = pivot + Point{c * d.x - s * d.y, s * d.x + c * d.y};
      }
      break;
    }
    case AugmentAction::scale: scale(); break;
    case AugmentAction::shift_and_scale:
      if (o.kind != GeometryKind::point) scale();
      shift();
      break;
  }
  if (o.kind == GeometryKind::polygon) out.coords.back() = out.coords.front();
  return clip_to_extent(out, extent_m);
}

/// One stochastic variant of a scene. Randomness is keyed by
/// (seed, scene_id, variant_index, object index), so the result does not
/// depend on the order in which variants are produced.
inline SpatialScene augment_scene(const SpatialScene& scene, const AugmentConfig& cfg, int variant_index) {
  SpatialScene out;
  out.scene_id = variant_id(scene.scene_id, variant_index);
  out.label = scene.label;
  out.extent_m = scene.extent_m;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const GeoObject& o = scene.objects[i];
    const AugmentRule* rule = cfg.rule_for(o.layer);
    if (!rule)
      throw ValidationError("augment: no rule for layer " + std::to_string(o.layer) + " (object '" + o.id + "')");
    KeyedRng rng = KeyedRng::from(cfg.seed, scene.scene_id, variant_index, i);
    if (auto p = perturb_object(o, *rule, rng, scene.extent_m)) out.objects.push_back(std::move(*p));
  }
  return out;
}

/// Exactly cfg.factor variants per input scene, scene-major order.
inline std::vector<SpatialScene> augment_corpus(const std::vector<SpatialScene>& scenes, const AugmentConfig& cfg) {
  cfg.validate();
  std::vector<SpatialScene> out;
  out.reserve(scenes.size() * static_cast<std::size_t>(cfg.factor));
  for (const SpatialScene& s : scenes)
    for (int v = 0; v < cfg.factor; ++v) out.push_back(augment_scene(s, cfg, v));
  return out;
}

// Key-value config, one section per layer:
//
//   factor = 20
//   seed = 7
//   [layer 7]
//   select_p = 0.5
//   drop = 0.4
//   shift = 0.2
//   rotate = 0.1
//   scale = 0.1
//   shift_and_scale = 0.2
//   shift_range_m = 100
//   rotate_range_deg = 45
//   scale_range = 0.2 1.2
//
// Sections override the matching default rule; unlisted keys keep defaults.

inline AugmentConfig parse_augment_config(std::istream& in) {
  AugmentConfig cfg = default_augment_config();
  AugmentRule* current = nullptr;
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw ValidationError("augment config line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    line = line.substr(first, line.find_last_not_of(" \t\r") - first + 1);
    if (line.front() == '[') {
      int layer = -1;
      if (std::sscanf(line.c_str(), "[layer %d]", &layer) != 1) fail("expected [layer N]");
      current = nullptr;
      for (AugmentRule& r : cfg.rules)
        if (r.layer == layer) current = &r;
      if (!current) fail("layer outside [0,14]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    std::istringstream value(trim(line.substr(eq + 1)));
    auto number = [&] {
      double v = 0;
      if (!(value >> v)) fail("bad number for '" + key + "'");
      return v;
    };
    if (!current) {
      if (key == "factor") cfg.factor = static_cast<int>(number());
      else if (key == "seed") {
        if (!(value >> cfg.seed)) fail("bad seed");
      } else fail("unknown global key '" + key + "'");
      continue;
    }
    bool matched = false;
    for (int a = 0; a < kAugmentActionCount; ++a)
      if (key == kAugmentActionNames[static_cast<std::size_t>(a)]) {
        current->action_p[static_cast<std::size_t>(a)] = number();
        matched = true;
      }
    if (matched) continue;
    if (key == "select_p") current->select_p = number();
    else if (key == "shift_range_m") current->shift_range_m = number();
    else if (key == "rotate_range_deg") current->rotate_range_deg = number();
    else if (key == "scale_range") {
      current->scale_lo = number();
      current->scale_hi = number();
    } else fail("unknown rule key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

inline std::string format_augment_config(const AugmentConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  out << "factor = " << cfg.factor << "\nseed = " << cfg.seed << "\n";
  for (const AugmentRule& r : cfg.rules) {
    out << "\n[layer " << r.layer << "]  # " << kLayerNames[static_cast<std::size_t>(r.layer)] << "\n";
    out << "select_p = " << r.select_p << "\n";
    for (int a = 0; a < kAugmentActionCount; ++a)
      out << kAugmentActionNames[static_cast<std::size_t>(a)] << " = " << r.action_p[static_cast<std::size_t>(a)] << "\n";
    out << "shift_range_m = " << r.shift_range_m << "\nrotate_range_deg = " << r.rotate_range_deg
        << "\nscale_range = " << r.scale_lo << " " << r.scale_hi << "\n";
  }
  return out.str();
}

}  // namespace deepssn
