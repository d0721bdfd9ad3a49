#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepssn/augment.hpp"
#include "deepssn/metrics.hpp"
#include "deepssn/mining.hpp"
#include "deepssn/nn/checkpoint.hpp"
#include "deepssn/nn/train.hpp"
#include "deepssn/retrieval.hpp"
#include "deepssn/synthetic.hpp"

namespace deepssn {

/// Desk-scale retrieval experiment: a synthetic corpus is augmented; per
/// label the original plus the first `train_variants` variants form the
/// training set and the remaining variants are held-out queries whose
/// ground truth is the original scene. The index holds the originals.
struct DeskProtocol {
  SyntheticConfig corpus{};
  int factor = 20;
  int train_variants = 16;
  std::uint64_t augment_seed = 11;
  nn::NetConfig net = nn::NetConfig::desk();
  nn::TrainConfig train{32, 0.05, 15, 1, 0.2, nn::LossKind::triplet};
  MiningConfig mining{2, 8, MiningStrategy::hard, 1, kDefaultNearThresholdM};
  int result_page = 12;

  void validate() const {
    corpus.validate();
    if (factor < 2) throw ValidationError("desk protocol: factor must be >= 2");
    if (train_variants < 1 || train_variants >= factor)
      throw ValidationError("desk protocol: train_variants must lie in [1, factor)");
    net.validate();
    train.validate();
    mining.validate();
  }

  /// Training and mining seeds move together.
  DeskProtocol with_seed(std::uint64_t seed) const {
    DeskProtocol p = *this;
    p.train.seed = seed;
    p.mining.seed = seed;
    return p;
  }
};

struct DeskData {
  std::vector<SpatialScene> originals;
  std::vector<SpatialScene> train;
  std::vector<SpatialScene> queries;
  std::vector<std::string> query_truth;
  std::vector<SceneTensor> original_tensors;
  std::vector<SceneTensor> train_tensors;
  std::vector<SceneTensor> query_tensors;
};

inline std::vector<SceneTensor> rasterize_all(std::span<const SpatialScene> scenes) {
  std::vector<SceneTensor> out;
  out.reserve(scenes.size());
  for (const SpatialScene& s : scenes) out.push_back(rasterize(s));
  return out;
}

inline DeskData prepare_desk_data(const DeskProtocol& p) {
  p.validate();
  DeskData d;
  d.originals = generate_synthetic(p.corpus);
  AugmentConfig aug = default_augment_config(p.augment_seed, p.factor);
  const std::vector<SpatialScene> variants = augment_corpus(d.originals, aug);
  for (std::size_t i = 0; i < d.originals.size(); ++i) {
    d.train.push_back(d.originals[i]);
    for (int v = 0; v < p.factor; ++v) {
      const SpatialScene& s = variants[i * static_cast<std::size_t>(p.factor) + static_cast<std::size_t>(v)];
      if (v < p.train_variants) {
        d.train.push_back(s);
      } else {
        d.queries.push_back(s);
        d.query_truth.push_back(d.originals[i].scene_id);
      }
    }
  }
  d.original_tensors = rasterize_all(d.originals);
  d.train_tensors = rasterize_all(d.train);
  d.query_tensors = rasterize_all(d.queries);
  return d;
}

struct DeskOutcome {
  RetrievalMetrics heldout;
  RetrievalMetrics self;
  RetrievalMetrics histogram_baseline;
  double random_mrr = 0.0;           // simulated random rankings
  double random_mrr_expected = 0.0;  // H_n / n
  double ndcg = 0.0;
  double tau = 0.0;
  std::array<BinStats, 4> bins{};
  std::vector<std::size_t> ranks;
  std::vector<nn::EpochLog> log;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
};

/// Rank of each query's truth when originals are ordered by POI-histogram
/// distance (ties by id).
inline std::vector<std::size_t> histogram_ranks(const DeskData& d) {
  std::vector<PoiHistogram> hs;
  for (const SpatialScene& s : d.originals) hs.push_back(poi_histogram(s));
  std::vector<std::size_t> ranks;
  for (std::size_t q = 0; q < d.queries.size(); ++q) {
    const PoiHistogram hq = poi_histogram(d.queries[q]);
    std::size_t truth = 0;
    for (std::size_t i = 0; i < d.originals.size(); ++i)
      if (d.originals[i].scene_id == d.query_truth[q]) truth = i;
    const long long dt = histogram_distance2(hq, hs[truth]);
    std::size_t rank = 1;
    for (std::size_t i = 0; i < d.originals.size(); ++i) {
      const long long di = histogram_distance2(hq, hs[i]);
      if (di < dt || (di == dt && d.originals[i].scene_id < d.query_truth[q])) ++rank;
    }
    ranks.push_back(rank);
  }
  return ranks;
}

/// Scores a trained model on the desk split. nDCG and tau grade each
/// query's first result page by QCN similarity to the query scene.
template <class T>
DeskOutcome evaluate_desk(const nn::Network<T>& net, const DeskData& d, const DeskProtocol& p) {
  const auto t0 = std::chrono::steady_clock::now();
  DeskOutcome out;
  const EmbeddingIndex index = build_index(net, d.originals, 0);
  const EmbeddingTable qe = nn::embed_all(net, d.query_tensors);
  const int n = static_cast<int>(index.size());

  std::map<std::string, std::optional<Qcn>> qcn_by_id;
  for (const SpatialScene& s : d.originals)
    qcn_by_id[s.scene_id] = s.objects.empty() ? std::nullopt : std::optional<Qcn>(extract_qcn(s));

  double ndcg_sum = 0.0, tau_sum = 0.0, random_sum = 0.0;
  std::size_t graded = 0;
  std::vector<double> sparsity;
  for (std::size_t q = 0; q < d.queries.size(); ++q) {
    const RankedResult r = query(index, qe[q], n, d.queries[q].scene_id);
    out.ranks.push_back(*rank_of(r, d.query_truth[q]));
    sparsity.push_back(d.query_tensors[q].sparsity());

    KeyedRng rng = KeyedRng::from(p.train.seed, "random-ranking", q);
    random_sum += 1.0 / static_cast<double>(1 + rng.below(static_cast<std::uint64_t>(n)));

    const std::size_t page = std::min<std::size_t>(static_cast<std::size_t>(p.result_page), r.items.size());
    if (page >= 2 && !d.queries[q].objects.empty()) {
      const Qcn qq = extract_qcn(d.queries[q]);
      std::vector<double> rel, served;
      for (std::size_t i = 0; i < page; ++i) {
        const auto& qc = qcn_by_id.at(r.items[i].scene_id);
        rel.push_back(qc ? qcn_similarity(qq, *qc) : 0.0);
        served.push_back(-static_cast<double>(i));
      }
      ndcg_sum += ndcg(rel, rel);
      tau_sum += kendall_tau(served, rel);
      ++graded;
    }
  }
  out.heldout = retrieval_metrics(out.ranks);
  out.random_mrr = d.queries.empty() ? 0.0 : random_sum / static_cast<double>(d.queries.size());
  out.random_mrr_expected = random_ranking_mrr(index.size());
  out.ndcg = graded ? ndcg_sum / static_cast<double>(graded) : 0.0;
  out.tau = graded ? tau_sum / static_cast<double>(graded) : 0.0;
  if (sparsity.size() >= 4) out.bins = bin_rank_stats(sparsity_bins(sparsity), out.ranks, sparsity);
  out.histogram_baseline = retrieval_metrics(histogram_ranks(d));

  std::vector<std::size_t> self_ranks;
  for (std::size_t i = 0; i < d.originals.size(); ++i) {
    self_ranks.push_back(*rank_of(query(index, index[i].embedding, n), d.originals[i].scene_id));
  }
  out.self = retrieval_metrics(self_ranks);
  out.eval_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

/// Fresh network for the protocol's loss (with a classifier head for
/// cross-entropy).
inline nn::Network<float> desk_network(const DeskProtocol& p, const DeskData& d) {
  nn::NetConfig cfg = p.net;
  cfg.margin = p.train.margin;
  if (p.train.loss == nn::LossKind::cross_entropy) cfg.num_classes = static_cast<int>(nn::class_index(d.train).size());
  return nn::Network<float>(cfg, p.train.seed);
}

inline nn::Network<float> train_desk(const DeskProtocol& p, const DeskData& d, std::vector<nn::EpochLog>& log,
                                     const nn::EpochCallback& on_epoch = {}) {
  nn::Network<float> net = desk_network(p, d);
  if (p.train.loss == nn::LossKind::cross_entropy) {
    log = nn::train_cross_entropy(net, d.train, d.train_tensors, p.train, on_epoch);
  } else {
    const MiningCorpus corpus(d.train, p.mining.near_threshold_m);
    log = nn::train_triplet(net, corpus, d.train_tensors, p.train, p.mining, on_epoch);
  }
  return net;
}

inline DeskOutcome run_desk(const DeskProtocol& p, const DeskData& d, const nn::EpochCallback& on_epoch = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<nn::EpochLog> log;
  const nn::Network<float> net = train_desk(p, d, log, on_epoch);
  const double train_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  DeskOutcome out = evaluate_desk(net, d, p);
  out.log = std::move(log);
  out.train_seconds = train_s;
  return out;
}

inline nlohmann::json to_json(const DeskOutcome& o) {
  nlohmann::json j = to_json(o.heldout);
  j["self_retrieval"] = to_json(o.self);
  j["histogram_knn_baseline"] = to_json(o.histogram_baseline);
  j["random_ranking_mrr"] = o.random_mrr;
  j["random_ranking_mrr_expected"] = o.random_mrr_expected;
  j["ndcg"] = o.ndcg;
  j["tau"] = o.tau;
  j["sparsity_bins"] = to_json(o.bins);
  j["train_seconds"] = o.train_seconds;
  j["eval_seconds"] = o.eval_seconds;
  nlohmann::json log = nlohmann::json::array();
  for (const nn::EpochLog& e : o.log)
    log.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"triplets", e.triplet_count}, {"wall_s", e.wall_seconds}});
  j["training_log"] = std::move(log);
  return j;
}

struct AblationVariant {
  std::string name;
  DeskProtocol protocol;
};

/// One-factor-at-a-time grid around the base protocol.
inline std::vector<AblationVariant> ablation_grid(const DeskProtocol& base) {
  std::vector<AblationVariant> out;
  out.push_back({"baseline", base});
  {
    DeskProtocol p = base;
    p.train.loss = nn::LossKind::cross_entropy;
    out.push_back({"loss=cross_entropy", p});
  }
  {
    DeskProtocol p = base;
    p.mining.strategy = MiningStrategy::random;
    out.push_back({"mining=random", p});
  }
  for (const auto& ks : std::vector<std::array<int, 3>>{{11, 7, 5}, {13, 9, 7}, {7, 5, 3}, {5, 3, 1}}) {
    DeskProtocol p = base;
    for (std::size_t i = 0; i < 3 && i < p.net.conv.size(); ++i) p.net.conv[i].kernel = ks[i];
    out.push_back({"kernels=" + std::to_string(ks[0]) + "," + std::to_string(ks[1]) + "," + std::to_string(ks[2]), p});
  }
  {
    DeskProtocol p = base;
    p.net.pooling = nn::PoolingMode::single_max;
    out.push_back({"pooling=single_max", p});
  }
  for (int dim : {8, 16, 32, 64, 128}) {
    DeskProtocol p = base;
    p.net.embed_dim = dim;
    out.push_back({"embed_dim=" + std::to_string(dim), p});
  }
  return out;
}

}  // namespace deepssn
