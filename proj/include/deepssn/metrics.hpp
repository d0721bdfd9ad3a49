#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepssn/error.hpp"
#include "deepssn/retrieval.hpp"

namespace deepssn {

/// 1-based position of `truth` in the ranking, if present.
inline std::optional<std::size_t> rank_of(const RankedResult& r, const std::string& truth) {
  for (std::size_t i = 0; i < r.items.size(); ++i)
    if (r.items[i].scene_id == truth) return i + 1;
  return std::nullopt;
}

/// Reciprocal rank; a truth missing from a truncated ranking counts as if
/// it sat just past the end of the corpus.
inline double reciprocal_rank(std::optional<std::size_t> rank, std::size_t corpus_size) {
  if (rank) {
    if (*rank == 0) throw ValidationError("reciprocal_rank: ranks are 1-based");
    return 1.0 / static_cast<double>(*rank);
  }
  return 1.0 / static_cast<double>(corpus_size + 1);
}

/// Mean reciprocal rank of 1-based ranks.
inline double mrr(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw ValidationError("mrr: no queries");
  double sum = 0.0;
  for (std::size_t r : ranks) sum += reciprocal_rank(r, 0);
  return sum / static_cast<double>(ranks.size());
}

/// Fraction of queries whose truth ranks within the top k.
inline double precision_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t r : ranks) hits += (r >= 1 && r <= k);
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

inline double dcg(std::span<const double> rel) {
  double s = 0.0;
  for (std::size_t i = 0; i < rel.size(); ++i) s += rel[i] / std::log2(static_cast<double>(i) + 2.0);
  return s;
}

/// DCG of the presented order over DCG of the ideal order (the ideal
/// relevances are sorted descending first). All-zero ideal gives 0.
inline double ndcg(std::span<const double> ranked, std::span<const double> ideal) {
  for (double v : ranked)
    if (v < 0.0) throw ValidationError("ndcg: negative relevance");
  std::vector<double> best(ideal.begin(), ideal.end());
  for (double v : best)
    if (v < 0.0) throw ValidationError("ndcg: negative relevance");
  std::sort(best.begin(), best.end(), std::greater<>());
  const double denom = dcg(best);
  if (denom == 0.0) return 0.0;
  return std::min(1.0, dcg(ranked) / denom);
}

/// (concordant - discordant) / (n(n-1)/2); tied pairs count as neither.
inline double kendall_tau(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("kendall_tau: sequences differ in length");
  if (a.size() < 2) throw ValidationError("kendall_tau: need at least 2 items");
  long long score = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double x = a[i] - a[j], y = b[i] - b[j];
      const int s = (x > 0) - (x < 0), t = (y > 0) - (y < 0);
      score += s * t;
    }
  const double n = static_cast<double>(a.size());
  return static_cast<double>(score) / (n * (n - 1.0) / 2.0);
}

/// Fraction of zero entries of an arbitrary vector.
inline double zero_fraction(std::span<const float> v) {
  if (v.empty()) return 1.0;
  std::size_t zeros = 0;
  for (float x : v) zeros += x == 0.0f;
  return static_cast<double>(zeros) / static_cast<double>(v.size());
}

/// Quartile bins ordered sparse to dense. With sparsities sorted descending
/// as s, the cut values are c_j = s[floor(j*n/4) - 1] for j = 1..3 and a
/// query's bin is the number of cuts its sparsity falls strictly below.
inline std::vector<int> sparsity_bins(std::span<const double> sparsity) {
  const std::size_t n = sparsity.size();
  if (n < 4) throw ValidationError("sparsity_bins: need at least 4 queries");
  std::vector<double> s(sparsity.begin(), sparsity.end());
  std::sort(s.begin(), s.end(), std::greater<>());
  double cuts[3];
  for (std::size_t j = 1; j <= 3; ++j) cuts[j - 1] = s[j * n / 4 - 1];
  std::vector<int> bins;
  bins.reserve(n);
  for (double x : sparsity) bins.push_back((x < cuts[0]) + (x < cuts[1]) + (x < cuts[2]));
  return bins;
}

struct BinStats {
  std::size_t count = 0;
  double mean_rank = 0.0;
  double std_rank = 0.0;  // population
  double mean_sparsity = 0.0;
};

inline std::array<BinStats, 4> bin_rank_stats(std::span<const int> bins, std::span<const std::size_t> ranks,
                                              std::span<const double> sparsity) {
  std::array<BinStats, 4> out{};
  std::array<double, 4> sq{};
  for (std::size_t i = 0; i < bins.size(); ++i) {
    BinStats& b = out[static_cast<std::size_t>(bins[i])];
    ++b.count;
    b.mean_rank += static_cast<double>(ranks[i]);
    sq[static_cast<std::size_t>(bins[i])] += static_cast<double>(ranks[i]) * static_cast<double>(ranks[i]);
    b.mean_sparsity += sparsity[i];
  }
  for (std::size_t b = 0; b < 4; ++b) {
    if (out[b].count == 0) continue;
    const double n = static_cast<double>(out[b].count);
    out[b].mean_rank /= n;
    out[b].mean_sparsity /= n;
    out[b].std_rank = std::sqrt(std::max(0.0, sq[b] / n - out[b].mean_rank * out[b].mean_rank));
  }
  return out;
}

/// Expected MRR of a uniformly random ranking over n items, H_n / n.
inline double random_ranking_mrr(std::size_t n) {
  double h = 0.0;
  for (std::size_t i = 1; i <= n; ++i) h += 1.0 / static_cast<double>(i);
  return n == 0 ? 0.0 : h / static_cast<double>(n);
}

struct RetrievalMetrics {
  std::size_t queries = 0;
  double mrr = 0.0;
  double p_at_1 = 0.0, p_at_3 = 0.0, p_at_5 = 0.0, p_at_10 = 0.0;
};

inline RetrievalMetrics retrieval_metrics(std::span<const std::size_t> ranks) {
  RetrievalMetrics m;
  m.queries = ranks.size();
  if (ranks.empty()) return m;
  m.mrr = mrr(ranks);
  m.p_at_1 = precision_at_k(ranks, 1);
  m.p_at_3 = precision_at_k(ranks, 3);
  m.p_at_5 = precision_at_k(ranks, 5);
  m.p_at_10 = precision_at_k(ranks, 10);
  return m;
}

inline nlohmann::json to_json(const RetrievalMetrics& m) {
  return {{"queries", m.queries}, {"mrr", m.mrr}, {"p_at_1", m.p_at_1}, {"p_at_3", m.p_at_3}, {"p_at_5", m.p_at_5},
          {"p_at_10", m.p_at_10}};
}

inline nlohmann::json to_json(const std::array<BinStats, 4>& bins) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t b = 0; b < 4; ++b)
    out.push_back({{"bin", b}, {"count", bins[b].count}, {"mean_rank", bins[b].mean_rank},
                   {"std_rank", bins[b].std_rank}, {"mean_sparsity", bins[b].mean_sparsity}});
  return out;
}

}  // namespace deepssn
