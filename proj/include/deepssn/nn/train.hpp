#pragma once

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "deepssn/mining.hpp"
#include "deepssn/nn/network.hpp"

namespace deepssn::nn {

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  std::size_t triplet_count = 0;  // samples for cross-entropy runs
  double wall_seconds = 0.0;
};

/// "epoch<TAB>mean_loss<TAB>triplet_count<TAB>wall_s"
inline std::string format_epoch_log(const EpochLog& e) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d\t%.6f\t%zu\t%.3f", e.epoch, e.mean_loss, e.triplet_count, e.wall_seconds);
  return buf;
}

using EpochCallback = std::function<void(const EpochLog&)>;

/// Inference embeddings for every tensor, in order.
template <class T>
EmbeddingTable embed_all(const Network<T>& net, std::span<const SceneTensor> tensors, std::size_t chunk = 64) {
  EmbeddingTable out;
  out.reserve(tensors.size());
  for (std::size_t lo = 0; lo < tensors.size(); lo += chunk) {
    const std::size_t hi = std::min(tensors.size(), lo + chunk);
    std::vector<const SceneTensor*> batch;
    for (std::size_t i = lo; i < hi; ++i) batch.push_back(&tensors[i]);
    const ForwardCache<T> c = net.forward_infer(batch);
    for (const Vec<T>& e : c.embedding) {
      std::vector<float> row(static_cast<std::size_t>(e.size()));
      for (std::size_t i = 0; i < row.size(); ++i) row[i] = static_cast<float>(e[static_cast<Eigen::Index>(i)]);
      out.push_back(std::move(row));
    }
  }
  return out;
}

template <class I>
void keyed_shuffle(std::vector<I>& items, KeyedRng rng) {
  for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[rng.below(i)]);
}

/// One SGD step on a list of corpus triplets: unique scenes go through one
/// training-mode forward, the summed hinge loss is averaged over the
/// triplets. Returns the summed loss.
template <class T>
double triplet_step(Network<T>& net, std::span<const SceneTensor> tensors, std::span<const Triplet> triplets,
                    double margin, double lr, std::uint64_t dropout_key) {
  std::unordered_map<std::size_t, std::size_t> local;
  std::vector<const SceneTensor*> batch;
  auto slot = [&](std::size_t idx) {
    auto [it, fresh] = local.emplace(idx, batch.size());
    if (fresh) batch.push_back(&tensors[idx]);
    return it->second;
  };
  std::vector<BatchTriplet> bt;
  bt.reserve(triplets.size());
  for (const Triplet& t : triplets) bt.push_back({slot(t.anchor), slot(t.positive), slot(t.negative)});
  const ForwardCache<T> cache = net.forward_train(batch, dropout_key);
  std::vector<Vec<T>> d_emb;
  const T loss = triplet_objective<T>(cache, bt, static_cast<T>(margin), d_emb);
  Parameters<T> g = net.backward(cache, d_emb);
  scale_gradients(g, net.config(), T(1) / static_cast<T>(triplets.size()));
  sgd_step(net.params(), g, net.config(), lr);
  return static_cast<double>(loss);
}

/// Triplet training with mining re-run before every epoch. Hard mining uses
/// the current embeddings from the second epoch on. An anchor's triplets
/// stay adjacent so they share forward passes.
template <class T>
std::vector<EpochLog> train_triplet(Network<T>& net, const MiningCorpus& corpus, std::span<const SceneTensor> tensors,
                                    const TrainConfig& tc, const MiningConfig& mc, const EpochCallback& on_epoch = {}) {
  tc.validate();
  mc.validate();
  if (tensors.size() != corpus.size()) throw ValidationError("train: tensor count does not match the corpus");
  const bool hard = mc.strategy == MiningStrategy::hard;
  std::vector<std::vector<std::size_t>> negatives;
  if (hard) negatives = all_hard_negatives(corpus, mc.k_negatives);

  std::vector<EpochLog> log;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EmbeddingTable emb;
    if (hard && epoch > 0) emb = embed_all(net, tensors);
    const std::vector<Triplet> triplets =
        build_triplets(corpus, mc, emb.empty() ? nullptr : &emb, static_cast<std::uint64_t>(epoch), hard ? &negatives : nullptr);

    std::vector<std::size_t> starts;
    for (std::size_t i = 0; i < triplets.size(); ++i)
      if (i == 0 || triplets[i].anchor != triplets[i - 1].anchor) starts.push_back(i);
    keyed_shuffle(starts, KeyedRng::from(tc.seed, "shuffle", epoch));
    std::vector<Triplet> order;
    order.reserve(triplets.size());
    for (std::size_t s : starts)
      for (std::size_t i = s; i < triplets.size() && triplets[i].anchor == triplets[s].anchor; ++i) order.push_back(triplets[i]);

    double total = 0.0;
    const auto bs = static_cast<std::size_t>(tc.batch_size);
    for (std::size_t lo = 0, step = 0; lo < order.size(); lo += bs, ++step) {
      const std::span<const Triplet> chunk(order.data() + lo, std::min(bs, order.size() - lo));
      total += triplet_step(net, tensors, chunk, tc.margin, tc.learning_rate, KeyedRng::from(tc.seed, "dropout", epoch, step)());
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.push_back({epoch + 1, order.empty() ? 0.0 : total / static_cast<double>(order.size()), order.size(), wall});
    if (on_epoch) on_epoch(log.back());
  }
  return log;
}

/// Dense class indices for arbitrary integer labels, in ascending label order.
inline std::map<int, int> class_index(std::span<const SpatialScene> scenes) {
  std::map<int, int> m;
  for (const SpatialScene& s : scenes) m.emplace(s.label, 0);
  int i = 0;
  for (auto& [label, idx] : m) idx = i++;
  return m;
}

/// Cross-entropy baseline: a classifier head over scene labels reads the
/// pre-normalisation embedding. The network must carry a head sized to the
/// number of distinct labels.
template <class T>
std::vector<EpochLog> train_cross_entropy(Network<T>& net, std::span<const SpatialScene> scenes,
                                          std::span<const SceneTensor> tensors, const TrainConfig& tc,
                                          const EpochCallback& on_epoch = {}) {
  tc.validate();
  if (tensors.size() != scenes.size()) throw ValidationError("train: tensor count does not match the corpus");
  const auto classes = class_index(scenes);
  if (!net.params().head || net.config().num_classes != static_cast<int>(classes.size()))
    throw ValidationError("train: cross-entropy needs a classifier head with " + std::to_string(classes.size()) + " classes");
  std::vector<EpochLog> log;
  std::vector<std::size_t> order(scenes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    keyed_shuffle(order, KeyedRng::from(tc.seed, "shuffle", epoch));
    double total = 0.0;
    const auto bs = static_cast<std::size_t>(tc.batch_size);
    for (std::size_t lo = 0, step = 0; lo < order.size(); lo += bs, ++step) {
      const std::size_t hi = std::min(order.size(), lo + bs);
      std::vector<const SceneTensor*> batch;
      std::vector<int> y;
      for (std::size_t i = lo; i < hi; ++i) {
        batch.push_back(&tensors[order[i]]);
        y.push_back(classes.at(scenes[order[i]].label));
      }
      const ForwardCache<T> cache = net.forward_train(batch, KeyedRng::from(tc.seed, "dropout", epoch, step)());
      std::vector<Vec<T>> d_logits;
      total += static_cast<double>(cross_entropy_objective<T>(cache, y, d_logits));
      const std::vector<Vec<T>> d_emb(batch.size(), Vec<T>::Zero(net.config().embed_dim));
      Parameters<T> g = net.backward(cache, d_emb, d_logits);
      scale_gradients(g, net.config(), T(1) / static_cast<T>(batch.size()));
      sgd_step(net.params(), g, net.config(), tc.learning_rate);
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.push_back({epoch + 1, total / static_cast<double>(order.size()), order.size(), wall});
    if (on_epoch) on_epoch(log.back());
  }
  return log;
}

}  // namespace deepssn::nn
