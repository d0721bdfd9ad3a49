#include <catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "deepssn/nn/checkpoint.hpp"
#include "deepssn/retrieval.hpp"
#include "deepssn/synthetic.hpp"

using namespace deepssn;

namespace {

EmbeddingIndex random_index(std::mt19937_64& gen, std::size_t n, int dim, bool coarse) {
  std::uniform_real_distribution<float> u(-1, 1);
  std::uniform_int_distribution<int> q(-2, 2);
  std::vector<IndexEntry> entries;
  for (std::size_t i = 0; i < n; ++i) {
    IndexEntry e{"s" + std::to_string((i * 7919) % 100003), static_cast<int>(i), {}};
    // Coarse values produce many exact distance ties.
    for (int d = 0; d < dim; ++d) e.embedding.push_back(coarse ? static_cast<float>(q(gen)) : u(gen));
    entries.push_back(std::move(e));
  }
  return EmbeddingIndex(1, dim, std::move(entries));
}

std::vector<RankedItem> sort_oracle(const EmbeddingIndex& index, const std::vector<float>& q, int k) {
  std::vector<RankedItem> all;
  for (const auto& e : index.entries()) all.push_back({e.scene_id, squared_l2(q, e.embedding)});
  std::stable_sort(all.begin(), all.end(), [](const RankedItem& a, const RankedItem& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.scene_id < b.scene_id;
  });
  all.resize(std::min<std::size_t>(all.size(), static_cast<std::size_t>(k)));
  return all;
}

}  // namespace

TEST_CASE("brute force and k-d tree agree with a full sort", "[retrieval]") {
  std::mt19937_64 gen(99);
  std::uniform_int_distribution<int> n(1, 300), dim(1, 12), k(1, 20);
  for (int trial = 0; trial < 1000; ++trial) {
    const bool coarse = trial % 3 == 0;
    const int d = dim(gen);
    const EmbeddingIndex index = random_index(gen, static_cast<std::size_t>(n(gen)), d, coarse);
    const KdTree tree(index, 1 + static_cast<std::size_t>(trial % 9));
    std::vector<float> q;
    std::uniform_real_distribution<float> u(-1, 1);
    std::uniform_int_distribution<int> c(-2, 2);
    for (int i = 0; i < d; ++i) q.push_back(coarse ? static_cast<float>(c(gen)) : u(gen));
    const int kk = k(gen);
    const auto expect = sort_oracle(index, q, kk);
    REQUIRE(query(index, q, kk).items == expect);
    REQUIRE(tree.query(q, kk).items == expect);
  }
}

TEST_CASE("query argument errors", "[retrieval]") {
  const EmbeddingIndex empty(0, 4, {});
  const std::vector<float> q(4, 0.0f);
  CHECK_THROWS_WITH(query(empty, q, 3), "query: empty index");
  std::mt19937_64 gen(1);
  const EmbeddingIndex index = random_index(gen, 5, 4, false);
  CHECK_THROWS_AS(query(index, q, 0), ValidationError);
  CHECK_THROWS_AS(query(index, std::vector<float>(3), 1), ValidationError);
  CHECK_THROWS_AS(EmbeddingIndex(0, 2, {{"a", 0, {1, 2}}, {"a", 0, {3, 4}}}), ValidationError);
}

TEST_CASE("index file round trip", "[retrieval]") {
  std::mt19937_64 gen(5);
  const EmbeddingIndex index = random_index(gen, 40, 8, false);
  const std::string bytes = encode_index(index);
  CHECK(bytes.substr(0, 4) == "SSNI");
  const EmbeddingIndex back = decode_index(bytes);
  CHECK(back.fingerprint() == index.fingerprint());
  REQUIRE(back.size() == index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    CHECK(back[i].scene_id == index[i].scene_id);
    CHECK(back[i].label == index[i].label);
    CHECK(back[i].embedding == index[i].embedding);
  }
  CHECK(encode_index(back) == bytes);
  CHECK_THROWS_AS(decode_index(bytes.substr(0, bytes.size() - 1)), FormatError);
  CHECK_THROWS_AS(decode_index("SSNX" + bytes.substr(4)), FormatError);
}

TEST_CASE("a corpus scene retrieves itself first", "[retrieval]") {
  const auto scenes = generate_synthetic({24, 8});
  const nn::Network<float> net(nn::NetConfig::desk(), 4);
  const auto fp = model_fingerprint(nn::encode_checkpoint(net));
  const EmbeddingIndex index = build_index(net, scenes, fp);
  CHECK(index.size() == scenes.size());
  CHECK(index.dim() == 32);
  CHECK(encode_index(build_index(net, scenes, fp)) == encode_index(index));
  const KdTree tree(index);
  for (const auto& s : scenes) {
    const auto e = net.embed(rasterize(s));
    const auto r = tree.query(e, 5);
    CHECK(r.items.front().scene_id == s.scene_id);
    CHECK(r.items.front().distance == 0.0);
  }
}

TEST_CASE("fingerprint follows the checkpoint bytes", "[retrieval]") {
  const nn::Network<float> a(nn::NetConfig::tiny(), 1), b(nn::NetConfig::tiny(), 2);
  CHECK(model_fingerprint(nn::encode_checkpoint(a)) == model_fingerprint(nn::encode_checkpoint(a)));
  CHECK(model_fingerprint(nn::encode_checkpoint(a)) != model_fingerprint(nn::encode_checkpoint(b)));
}
