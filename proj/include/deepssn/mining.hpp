#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "deepssn/error.hpp"
#include "deepssn/geodata.hpp"
#include "deepssn/qcn.hpp"
#include "deepssn/random.hpp"

namespace deepssn {

/// Per-layer object counts of a scene. Summing one-hot category vectors
/// over the scene's objects gives exactly this histogram.
using PoiHistogram = std::array<int, kLayerCount>;

inline PoiHistogram poi_histogram(const SpatialScene& scene) {
  PoiHistogram h{};
  for (const GeoObject& o : scene.objects)
    if (o.layer >= 0 && o.layer < kLayerCount) ++h[static_cast<std::size_t>(o.layer)];
  return h;
}

inline long long histogram_distance2(const PoiHistogram& a, const PoiHistogram& b) {
  long long d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long long x = a[i] - b[i];
    d += x * x;
  }
  return d;
}

/// Indices into a scene list. Ids are carried by the scenes themselves.
struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

enum class MiningStrategy : std::uint8_t { hard, random };

struct MiningConfig {
  int k_negatives = 4;
  int top_m_coarse = 8;
  MiningStrategy strategy = MiningStrategy::hard;
  std::uint64_t seed = 0;
  double near_threshold_m = kDefaultNearThresholdM;

  void validate() const {
    if (k_negatives < 1) throw ValidationError("mining: k_negatives must be >= 1");
    if (top_m_coarse < 1) throw ValidationError("mining: top_m_coarse must be >= 1");
  }
};

/// Read-only view over a labelled corpus with the per-scene features the
/// miners need (histograms, QCNs, label groups), computed once.
class MiningCorpus {
public:
  explicit MiningCorpus(std::span<const SpatialScene> scenes, double near_threshold_m = kDefaultNearThresholdM)
      : scenes_(scenes) {
    histograms_.reserve(scenes.size());
    qcns_.reserve(scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      histograms_.push_back(poi_histogram(scenes[i]));
      if (scenes[i].objects.empty()) qcns_.emplace_back();
      else qcns_.emplace_back(extract_qcn(scenes[i], near_threshold_m));
      groups_[scenes[i].label].push_back(i);
    }
  }

  std::size_t size() const { return scenes_.size(); }
  const SpatialScene& scene(std::size_t i) const { return scenes_[i]; }
  const std::string& id(std::size_t i) const { return scenes_[i].scene_id; }
  int label(std::size_t i) const { return scenes_[i].label; }
  const PoiHistogram& histogram(std::size_t i) const { return histograms_[i]; }
  const std::optional<Qcn>& qcn(std::size_t i) const { return qcns_[i]; }
  const std::vector<std::size_t>& group(int label) const { return groups_.at(label); }
  const std::map<int, std::vector<std::size_t>>& groups() const { return groups_; }

  /// QCN similarity, with empty scenes scoring 0 against everything.
  double similarity(std::size_t a, std::size_t b) const {
    if (!qcns_[a] || !qcns_[b]) return 0.0;
    return qcn_similarity(*qcns_[a], *qcns_[b]);
  }

  std::optional<std::size_t> find(const std::string& id) const {
    for (std::size_t i = 0; i < scenes_.size(); ++i)
      if (scenes_[i].scene_id == id) return i;
    return std::nullopt;
  }

private:
  std::span<const SpatialScene> scenes_;
  std::vector<PoiHistogram> histograms_;
  std::vector<std::optional<Qcn>> qcns_;
  std::map<int, std::vector<std::size_t>> groups_;
};

/// The k different-label scenes nearest to the anchor in histogram space,
/// ordered by distance and then ascending id.
inline std::vector<std::size_t> hard_negatives(const MiningCorpus& corpus, std::size_t anchor, int k) {
  if (k < 1) throw ValidationError("hard_negatives: k must be >= 1");
  struct Cand {
    long long d2;
    std::size_t idx;
  };
  std::vector<Cand> cands;
  const int label = corpus.label(anchor);
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (corpus.label(i) != label) cands.push_back({histogram_distance2(corpus.histogram(anchor), corpus.histogram(i)), i});
  if (cands.size() < static_cast<std::size_t>(k))
    throw ValidationError("hard_negatives: anchor '" + corpus.id(anchor) + "' needs " + std::to_string(k) +
                          " different-label scenes but only " + std::to_string(cands.size()) + " exist");
  auto less = [&](const Cand& a, const Cand& b) {
    if (a.d2 != b.d2) return a.d2 < b.d2;
    return corpus.id(a.idx) < corpus.id(b.idx);
  };
  std::partial_sort(cands.begin(), cands.begin() + k, cands.end(), less);
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out.push_back(cands[static_cast<std::size_t>(i)].idx);
  return out;
}

/// Embedding table aligned with the corpus; rows are unit vectors.
using EmbeddingTable = std::vector<std::vector<float>>;

inline double embedding_distance2(std::span<const float> a, std::span<const float> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    d += x * x;
  }
  return d;
}

/// Same-label pool member farthest from the anchor in embedding space. With
/// no embeddings yet, the member with the lowest QCN similarity instead.
/// Ties go to the ascending id.
inline std::size_t hard_positive(const MiningCorpus& corpus, std::size_t anchor, std::span<const std::size_t> pool,
                                 const EmbeddingTable* embeddings) {
  if (pool.empty()) throw ValidationError("hard_positive: empty pool for anchor '" + corpus.id(anchor) + "'");
  std::size_t best = pool[0];
  double best_key = 0.0;
  bool first = true;
  for (std::size_t idx : pool) {
    if (idx == anchor) continue;
    // Larger key = harder positive.
    const double key = embeddings ? embedding_distance2((*embeddings)[anchor], (*embeddings)[idx])
                                  : -corpus.similarity(anchor, idx);
    if (first || key > best_key || (key == best_key && corpus.id(idx) < corpus.id(best))) {
      best = idx;
      best_key = key;
      first = false;
    }
  }
  if (first) throw ValidationError("hard_positive: pool holds only the anchor '" + corpus.id(anchor) + "'");
  return best;
}

/// Candidate positives: QCN coarse matches restricted to the anchor's label,
/// unioned with every same-label scene. Excludes the anchor.
inline std::vector<std::size_t> positive_pool(const MiningCorpus& corpus, std::size_t anchor, int top_m) {
  const auto& members = corpus.group(corpus.label(anchor));
  std::vector<std::pair<double, std::size_t>> coarse;
  for (std::size_t idx : members)
    if (idx != anchor) coarse.emplace_back(corpus.similarity(anchor, idx), idx);
  std::stable_sort(coarse.begin(), coarse.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return corpus.id(a.second) < corpus.id(b.second);
  });
  if (coarse.size() > static_cast<std::size_t>(top_m)) coarse.resize(static_cast<std::size_t>(top_m));
  std::vector<std::size_t> pool;
  for (const auto& c : coarse) pool.push_back(c.second);
  for (std::size_t idx : members)
    if (idx != anchor && std::find(pool.begin(), pool.end(), idx) == pool.end()) pool.push_back(idx);
  return pool;
}

inline void check_minable(const MiningCorpus& corpus) {
  if (corpus.groups().size() < 2) throw ValidationError("build_triplets: corpus needs at least 2 distinct labels");
  for (const auto& [label, members] : corpus.groups())
    if (members.size() < 2)
      throw ValidationError("build_triplets: label " + std::to_string(label) + " has fewer than 2 members");
}

/// Hard negatives do not depend on the model, so trainers compute them once.
inline std::vector<std::vector<std::size_t>> all_hard_negatives(const MiningCorpus& corpus, int k) {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(corpus.size());
  for (std::size_t a = 0; a < corpus.size(); ++a) out.push_back(hard_negatives(corpus, a, k));
  return out;
}

/// Triplets for one mining pass, k_negatives per anchor, anchor-major.
/// `round` varies the random stream between epochs.
inline std::vector<Triplet> build_triplets(const MiningCorpus& corpus, const MiningConfig& cfg,
                                           const EmbeddingTable* embeddings = nullptr, std::uint64_t round = 0,
                                           const std::vector<std::vector<std::size_t>>* cached_negatives = nullptr) {
  cfg.validate();
  check_minable(corpus);
  std::vector<Triplet> out;
  out.reserve(corpus.size() * static_cast<std::size_t>(cfg.k_negatives));
  for (std::size_t a = 0; a < corpus.size(); ++a) {
    if (cfg.strategy == MiningStrategy::hard) {
      const auto pool = positive_pool(corpus, a, cfg.top_m_coarse);
      const std::size_t pos = hard_positive(corpus, a, pool, embeddings);
      const auto negs = cached_negatives ? (*cached_negatives)[a] : hard_negatives(corpus, a, cfg.k_negatives);
      for (std::size_t neg : negs) out.push_back({a, pos, neg});
    } else {
      const auto& same = corpus.group(corpus.label(a));
      const std::size_t other_count = corpus.size() - same.size();
      if (other_count < 1) throw ValidationError("build_triplets: no different-label scene");
      KeyedRng rng = KeyedRng::from(cfg.seed, round, a);
      for (int j = 0; j < cfg.k_negatives; ++j) {
        std::size_t pos = same[rng.below(same.size() - 1)];
        if (pos == a) pos = same.back();
        // Uniform over different-label scenes by skipping the anchor's group.
        std::size_t r = rng.below(other_count);
        std::size_t neg = 0;
        for (std::size_t i = 0; i < corpus.size(); ++i) {
          if (corpus.label(i) == corpus.label(a)) continue;
          if (r-- == 0) {
            neg = i;
            break;
          }
        }
        out.push_back({a, pos, neg});
      }
    }
  }
  return out;
}

// Triplet list file: one "anchor_id<TAB>positive_id<TAB>negative_id" per line.

inline std::string format_triplets(const MiningCorpus& corpus, std::span<const Triplet> triplets) {
  std::string out;
  for (const Triplet& t : triplets) {
    out += corpus.id(t.anchor);
    out += '\t';
    out += corpus.id(t.positive);
    out += '\t';
    out += corpus.id(t.negative);
    out += '\n';
  }
  return out;
}

inline std::vector<Triplet> parse_triplets(const MiningCorpus& corpus, std::istream& in) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.size(); ++i) index.emplace(corpus.id(i), i);
  std::vector<Triplet> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string a, p, n;
    if (!std::getline(fields, a, '\t') || !std::getline(fields, p, '\t') || !std::getline(fields, n, '\t'))
      throw ValidationError("triplet file line " + std::to_string(lineno) + ": expected 3 tab-separated ids");
    auto lookup = [&](const std::string& id) {
      auto it = index.find(id);
      if (it == index.end())
        throw ValidationError("triplet file line " + std::to_string(lineno) + ": unknown scene id '" + id + "'");
      return it->second;
    };
    out.push_back({lookup(a), lookup(p), lookup(n)});
  }
  return out;
}

}  // namespace deepssn
