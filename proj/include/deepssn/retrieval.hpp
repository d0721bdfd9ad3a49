#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <queue>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "deepssn/binary_io.hpp"
#include "deepssn/error.hpp"
#include "deepssn/geodata.hpp"
#include "deepssn/nn/network.hpp"
#include "deepssn/random.hpp"

namespace deepssn {

struct IndexEntry {
  std::string scene_id;
  int label = 0;
  std::vector<float> embedding;
};

/// Immutable set of scene embeddings tagged with the checkpoint that
/// produced them.
class EmbeddingIndex {
public:
  EmbeddingIndex() = default;
  EmbeddingIndex(std::uint64_t fingerprint, int dim, std::vector<IndexEntry> entries)
      : fingerprint_(fingerprint), dim_(dim), entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (static_cast<int>(entries_[i].embedding.size()) != dim_)
        throw ValidationError("index: entry '" + entries_[i].scene_id + "' has the wrong dimension");
      if (!by_id_.emplace(entries_[i].scene_id, i).second)
        throw ValidationError("index: duplicate scene id '" + entries_[i].scene_id + "'");
    }
  }

  std::uint64_t fingerprint() const { return fingerprint_; }
  int dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<IndexEntry>& entries() const { return entries_; }
  const IndexEntry& operator[](std::size_t i) const { return entries_[i]; }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
  }

private:
  std::uint64_t fingerprint_ = 0;
  int dim_ = 0;
  std::vector<IndexEntry> entries_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

inline std::uint64_t model_fingerprint(std::string_view checkpoint_bytes) { return fnv1a64(checkpoint_bytes); }

/// Embeds every scene with the model in inference mode.
template <class T>
EmbeddingIndex build_index(const nn::Network<T>& model, std::span<const SpatialScene> corpus, std::uint64_t fingerprint,
                           const RasterConfig& raster = {}) {
  std::vector<IndexEntry> entries;
  entries.reserve(corpus.size());
  for (const SpatialScene& s : corpus) {
    try {
      entries.push_back({s.scene_id, s.label, model.embed(rasterize(s, raster))});
    } catch (const std::exception& e) {
      throw ValidationError("index: cannot embed scene '" + s.scene_id + "': " + e.what());
    }
  }
  return EmbeddingIndex(fingerprint, model.config().embed_dim, std::move(entries));
}

/// Squared Euclidean distance accumulated in double.
inline double squared_l2(std::span<const float> a, std::span<const float> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    d += x * x;
  }
  return d;
}

struct RankedItem {
  std::string scene_id;
  double distance = 0.0;

  friend bool operator==(const RankedItem&, const RankedItem&) = default;
};

struct RankedResult {
  std::string query_id;
  std::vector<RankedItem> items;
};

namespace detail {
struct Hit {
  double d;
  std::size_t idx;
};

inline bool hit_less(const EmbeddingIndex& index, const Hit& a, const Hit& b) {
  if (a.d != b.d) return a.d < b.d;
  return index[a.idx].scene_id < index[b.idx].scene_id;
}

inline RankedResult to_result(const EmbeddingIndex& index, std::vector<Hit> hits, std::string query_id) {
  std::sort(hits.begin(), hits.end(), [&](const Hit& a, const Hit& b) { return hit_less(index, a, b); });
  RankedResult r{std::move(query_id), {}};
  r.items.reserve(hits.size());
  for (const Hit& h : hits) r.items.push_back({index[h.idx].scene_id, h.d});
  return r;
}

inline void check_query(const EmbeddingIndex& index, std::span<const float> q, int k) {
  if (index.empty()) throw ValidationError("query: empty index");
  if (k < 1) throw ValidationError("query: k must be >= 1");
  if (static_cast<int>(q.size()) != index.dim())
    throw ValidationError("query: embedding has dimension " + std::to_string(q.size()) + ", index has " +
                          std::to_string(index.dim()));
}
}  // namespace detail

/// Reference path: exhaustive scan, top k by ascending distance, ties by id.
inline RankedResult query(const EmbeddingIndex& index, std::span<const float> q, int k, std::string query_id = {}) {
  detail::check_query(index, q, k);
  std::vector<detail::Hit> hits(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) hits[i] = {squared_l2(q, index[i].embedding), i};
  const std::size_t keep = std::min(index.size(), static_cast<std::size_t>(k));
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(),
                    [&](const detail::Hit& a, const detail::Hit& b) { return detail::hit_less(index, a, b); });
  hits.resize(keep);
  return detail::to_result(index, std::move(hits), std::move(query_id));
}

/// Exact k-d tree over an index. Returns the same ranking as query().
class KdTree {
public:
  explicit KdTree(const EmbeddingIndex& index, std::size_t leaf_size = 8) : index_(&index), leaf_size_(leaf_size) {
    order_.resize(index.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (!order_.empty()) root_ = build(0, order_.size());
  }

  RankedResult query(std::span<const float> q, int k, std::string query_id = {}) const {
    detail::check_query(*index_, q, k);
    const std::size_t keep = std::min(index_->size(), static_cast<std::size_t>(k));
    auto worse = [&](const detail::Hit& a, const detail::Hit& b) { return detail::hit_less(*index_, a, b); };
    std::priority_queue<detail::Hit, std::vector<detail::Hit>, decltype(worse)> heap(worse);
    search(root_, q, keep, heap);
    std::vector<detail::Hit> hits;
    while (!heap.empty()) {
      hits.push_back(heap.top());
      heap.pop();
    }
    return detail::to_result(*index_, std::move(hits), std::move(query_id));
  }

private:
  struct Node {
    std::size_t lo = 0, hi = 0;  // range in order_
    int axis = -1;               // -1 for leaves
    double split = 0.0;
    int left = -1, right = -1;
  };

  int build(std::size_t lo, std::size_t hi) {
    Node n;
    n.lo = lo;
    n.hi = hi;
    if (hi - lo > leaf_size_) {
      // Split on the widest axis at the median.
      int axis = 0;
      double widest = -1.0;
      for (int a = 0; a < index_->dim(); ++a) {
        float mn = std::numeric_limits<float>::max(), mx = std::numeric_limits<float>::lowest();
        for (std::size_t i = lo; i < hi; ++i) {
          const float v = (*index_)[order_[i]].embedding[static_cast<std::size_t>(a)];
          mn = std::min(mn, v);
          mx = std::max(mx, v);
        }
        if (static_cast<double>(mx) - mn > widest) {
          widest = static_cast<double>(mx) - mn;
          axis = a;
        }
      }
      const std::size_t mid = lo + (hi - lo) / 2;
      auto key = [&](std::size_t idx) { return (*index_)[idx].embedding[static_cast<std::size_t>(axis)]; };
      std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(lo), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                       order_.begin() + static_cast<std::ptrdiff_t>(hi),
                       [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
      n.axis = axis;
      n.split = key(order_[mid]);
      nodes_.push_back(n);
      const int self = static_cast<int>(nodes_.size()) - 1;
      const int l = build(lo, mid);
      const int r = build(mid, hi);
      nodes_[static_cast<std::size_t>(self)].left = l;
      nodes_[static_cast<std::size_t>(self)].right = r;
      return self;
    }
    nodes_.push_back(n);
    return static_cast<int>(nodes_.size()) - 1;
  }

  template <class Heap>
  void search(int node, std::span<const float> q, std::size_t keep, Heap& heap) const {
    const Node& n = nodes_[static_cast<std::size_t>(node)];
    if (n.axis < 0) {
      for (std::size_t i = n.lo; i < n.hi; ++i) {
        const detail::Hit h{squared_l2(q, (*index_)[order_[i]].embedding), order_[i]};
        if (heap.size() < keep) heap.push(h);
        else if (detail::hit_less(*index_, h, heap.top())) {
          heap.pop();
          heap.push(h);
        }
      }
      return;
    }
    // Left holds keys <= split, right holds keys >= split.
    const double diff = static_cast<double>(q[static_cast<std::size_t>(n.axis)]) - n.split;
    const int near = diff <= 0.0 ? n.left : n.right;
    const int far = diff <= 0.0 ? n.right : n.left;
    search(near, q, keep, heap);
    // Conservative bound so rounding in the distance sum never prunes a tie.
    const double bound = diff * diff * (1.0 - 1e-9);
    if (heap.size() < keep || bound <= heap.top().d) search(far, q, keep, heap);
  }

  const EmbeddingIndex* index_;
  std::size_t leaf_size_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

// Index file, little-endian:
//   "SSNI" | u8 version | u64 model fingerprint | u32 entry count | u32 dim |
//   per entry: u32 id length, id bytes, i32 label, dim x f32.

inline constexpr std::uint8_t kIndexVersion = 1;

inline std::string encode_index(const EmbeddingIndex& index) {
  ByteWriter w;
  w.raw("SSNI");
  w.u8(kIndexVersion);
  w.u64(index.fingerprint());
  w.u32(static_cast<std::uint32_t>(index.size()));
  w.u32(static_cast<std::uint32_t>(index.dim()));
  for (const IndexEntry& e : index.entries()) {
    w.str32(e.scene_id);
    w.i32(e.label);
    w.f32s(e.embedding);
  }
  return w.bytes();
}

inline EmbeddingIndex decode_index(std::string_view bytes) {
  ByteReader r(bytes, "index file");
  r.expect_magic("SSNI");
  const auto version = r.u8();
  if (version != kIndexVersion) throw FormatError("index file: unsupported version " + std::to_string(version));
  const auto fingerprint = r.u64();
  const auto count = r.u32();
  const auto dim = r.u32();
  std::vector<IndexEntry> entries;
  entries.reserve(std::min<std::size_t>(count, r.remaining()));
  for (std::uint32_t i = 0; i < count; ++i) {
    IndexEntry e;
    e.scene_id = r.str32();
    e.label = r.i32();
    e.embedding.resize(dim);
    r.f32s(e.embedding);
    entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw FormatError("index file: trailing bytes");
  try {
    return EmbeddingIndex(fingerprint, static_cast<int>(dim), std::move(entries));
  } catch (const ValidationError& e) {
    throw FormatError(e.what());
  }
}

inline void save_index(const std::string& path, const EmbeddingIndex& index) { write_file(path, encode_index(index)); }
inline EmbeddingIndex load_index(const std::string& path) { return decode_index(read_file(path)); }

}  // namespace deepssn
