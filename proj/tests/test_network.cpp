#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "deepssn/augment.hpp"
#include "deepssn/experiment.hpp"
#include "deepssn/nn/checkpoint.hpp"
#include "deepssn/nn/network.hpp"
#include "deepssn/nn/train.hpp"
#include "deepssn/synthetic.hpp"
#include "gradcheck.hpp"

using namespace deepssn;
using namespace deepssn::nn;
using Catch::Approx;

namespace {

std::vector<const SceneTensor*> ptrs(const std::vector<SceneTensor>& ts) {
  std::vector<const SceneTensor*> out;
  for (const auto& t : ts) out.push_back(&t);
  return out;
}

template <class T>
bool same_params(const Parameters<T>& a, const Parameters<T>& b, const NetConfig& cfg) {
  const auto x = blocks(a, cfg), y = blocks(b, cfg);
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::equal(x[i].data.begin(), x[i].data.end(), y[i].data.begin())) return false;
  return true;
}

Vec<double> unit(std::mt19937_64& gen, int d) {
  std::normal_distribution<double> n;
  Vec<double> v(d);
  for (int i = 0; i < d; ++i) v[i] = n(gen);
  return v.normalized();
}

NetConfig small_config() {
  NetConfig c = NetConfig::desk();
  c.conv = {{4, 11, false}, {6, 7, true}, {8, 5, true}};
  c.fc1_units = 32;
  c.embed_dim = 16;
  return c;
}

// 16 scenes: 4 labels with the original and 3 variants each.
std::vector<SpatialScene> sixteen_scenes() {
  const auto originals = generate_synthetic({4, 12});
  const auto cfg = default_augment_config(3, 3);
  std::vector<SpatialScene> out;
  for (const auto& s : originals) {
    out.push_back(s);
    for (int v = 0; v < 3; ++v) out.push_back(augment_scene(s, cfg, v));
  }
  return out;
}

const std::vector<BatchTriplet> kTriplets{{0, 1, 2}, {1, 0, 3}, {2, 3, 0}, {3, 2, 1}};

}  // namespace

TEST_CASE("parameter counts of the reference configuration", "[network]") {
  const auto counts = parameter_counts(NetConfig::reference());
  REQUIRE(counts.size() == 5);
  CHECK(counts[0].layer == "Conv1");
  CHECK(counts[0].count == 174336);
  CHECK(counts[1].layer == "Conv2-batchNorm");
  CHECK(counts[1].count == 1205504);
  CHECK(counts[2].layer == "Conv3-batchNorm");
  CHECK(counts[2].count == 2459520);
  CHECK(counts[3].layer == "Fully-connected1");
  CHECK(counts[3].count == 33034240);
  CHECK(counts[4].layer == "Fully-connected2");
  CHECK(counts[4].count == 524416);
  CHECK(total_count(counts) == 174336 + 1205504 + 2459520 + 33034240 + 524416);
}

TEST_CASE("allocated tensors agree with the configured counts", "[network]") {
  for (const NetConfig& cfg : {NetConfig::desk(), NetConfig::tiny(), small_config()}) {
    const Parameters<float> p = init_parameters<float>(cfg, 1);
    const auto a = parameter_counts(p, cfg), b = parameter_counts(cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].layer == b[i].layer);
      CHECK(a[i].count == b[i].count);
    }
  }
}

TEST_CASE("valid convolution shape chain", "[network]") {
  const auto chain = NetConfig::reference().spatial_chain();
  REQUIRE(chain.size() == 3);
  CHECK(chain[0] == std::pair{30, 30});
  CHECK(chain[1] == std::pair{24, 24});
  CHECK(chain[2] == std::pair{20, 20});
  CHECK(NetConfig::reference().pooled_length() == 8064);
  NetConfig single = NetConfig::reference();
  single.pooling = PoolingMode::single_max;
  CHECK(single.pooled_length() == 384 * 16);
  NetConfig bad = NetConfig::reference();
  bad.conv[2].kernel = 22;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("initialisation is keyed by seed and bounded", "[network]") {
  const NetConfig cfg = NetConfig::tiny();
  const auto a = init_parameters<float>(cfg, 5), b = init_parameters<float>(cfg, 5), c = init_parameters<float>(cfg, 6);
  CHECK(same_params(a, b, cfg));
  CHECK_FALSE(same_params(a, c, cfg));
  for (const auto& blk : blocks(a, cfg)) {
    if (!blk.name.ends_with(".weight")) continue;
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < blk.dims.size(); ++i) fan_in *= blk.dims[i];
    const float bound = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in)));
    for (float v : blk.data) CHECK(std::abs(v) <= bound);
  }
  CHECK((a.bn[1]->gain.array() == 1.0f).all());
  CHECK((a.bn[1]->running_var.array() == 1.0f).all());
}

TEST_CASE("full gradient check on the tiny network", "[network]") {
  Network<double> net(NetConfig::tiny(), 11);
  const auto tensors = testing::random_tensors(net.config(), 4, 5);
  // Margin 4.5 exceeds any distance difference of unit vectors, so every hinge is active.
  const auto r = testing::check_gradients(net, tensors, kTriplets, 4.5);
  INFO("worst " << r.worst_block);
  std::size_t trainable = 0;
  for (const auto& blk : blocks(net.params(), net.config())) trainable += blk.trainable ? blk.data.size() : 0;
  CHECK(r.checked == trainable);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("gradient check through the sparse first layer", "[network]") {
  Network<double> net(NetConfig::tiny(), 12);
  net.first_layer_path = FirstLayerPath::sparse;
  auto tensors = testing::random_tensors(net.config(), 4, 6);
  std::mt19937_64 gen(1);
  for (auto& t : tensors)
    for (float& v : t.values())
      if (gen() % 2 != 0) v = 0.0f;
  const auto r = testing::check_gradients(net, tensors, kTriplets, 4.5);
  INFO("worst " << r.worst_block);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("gradient check with a classifier head", "[network]") {
  NetConfig cfg = NetConfig::tiny();
  cfg.num_classes = 3;
  Network<double> net(cfg, 13);
  const auto tensors = testing::random_tensors(cfg, 4, 7);
  const auto r = testing::check_gradients(net, tensors, {}, 0.2, {0, 2, 1, 2});
  INFO("worst " << r.worst_block);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("inactive hinge gives zero gradients", "[network]") {
  Network<double> net(NetConfig::tiny(), 3);
  const auto tensors = testing::random_tensors(net.config(), 4, 8);
  auto cache = net.forward_train(ptrs(tensors), 1);
  std::vector<Vec<double>> d;
  CHECK(triplet_objective<double>(cache, kTriplets, -5.0, d) == 0.0);
  const auto g = net.backward(cache, d);
  for (const auto& blk : blocks(g, net.config()))
    for (double v : blk.data) REQUIRE(v == 0.0);
}

TEST_CASE("duplicated triplet doubles the gradient", "[network]") {
  Network<double> net(NetConfig::tiny(), 4);
  const auto tensors = testing::random_tensors(net.config(), 3, 9);
  const std::vector<BatchTriplet> once{{0, 1, 2}}, twice{{0, 1, 2}, {0, 1, 2}};
  auto c1 = net.forward_train(ptrs(tensors), 2);
  auto c2 = net.forward_train(ptrs(tensors), 2);
  std::vector<Vec<double>> d1, d2;
  const double l1 = triplet_objective<double>(c1, once, 4.5, d1);
  const double l2 = triplet_objective<double>(c2, twice, 4.5, d2);
  CHECK(l2 == 2 * l1);
  const auto g1 = net.backward(c1, d1), g2 = net.backward(c2, d2);
  const auto b1 = blocks(g1, net.config()), b2 = blocks(g2, net.config());
  for (std::size_t b = 0; b < b1.size(); ++b)
    for (std::size_t i = 0; i < b1[b].data.size(); ++i) REQUIRE(b2[b].data[i] == 2 * b1[b].data[i]);
}

TEST_CASE("triplet loss hand cases", "[network]") {
  Vec<double> a(2), p(2), n(2);
  // D(a,p) = 0.1, D(a,n) = 0.5.
  a << 0, 0;
  p << std::sqrt(0.1), 0;
  n << 0, std::sqrt(0.5);
  CHECK(triplet_loss(a, p, n, 0.2).loss == 0.0);
  // a = p, D(a,n) = 0.05.
  n << std::sqrt(0.05), 0;
  CHECK(triplet_loss(a, a, n, 0.2).loss == Approx(0.15).epsilon(1e-12));
}

TEST_CASE("triplet loss is a hinge on the distance gap", "[network]") {
  std::mt19937_64 gen(10);
  for (int i = 0; i < 10000; ++i) {
    const Vec<double> a = unit(gen, 8), p = unit(gen, 8), n = unit(gen, 8);
    const double dap = (a - p).squaredNorm(), dan = (a - n).squaredNorm();
    const auto r = triplet_loss(a, p, n, 0.2);
    REQUIRE(r.loss >= 0.0);
    REQUIRE((r.loss == 0.0) == (dan >= dap + 0.2));
  }
}

TEST_CASE("triplet loss gradient matches finite differences", "[network]") {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec<double> a = unit(gen, 6), p = unit(gen, 6), n = unit(gen, 6);
    const double m = 4.5;
    const auto r = triplet_loss(a, p, n, m);
    for (int which = 0; which < 3; ++which)
      for (int i = 0; i < 6; ++i) {
        Vec<double> x[3] = {a, p, n}, y[3] = {a, p, n};
        x[which][i] += 1e-6;
        y[which][i] -= 1e-6;
        const double fd = (triplet_loss(x[0], x[1], x[2], m).loss - triplet_loss(y[0], y[1], y[2], m).loss) / 2e-6;
        const Vec<double>& g = which == 0 ? r.d_anchor : which == 1 ? r.d_positive : r.d_negative;
        CHECK(testing::relative_error(g[i], fd) <= 1e-5);
      }
  }
}

TEST_CASE("sgd follows the gradient descent recurrence", "[network]") {
  const NetConfig cfg = NetConfig::tiny();
  Parameters<double> p = zero_parameters<double>(cfg);
  double& theta = p.fc2.bias[0];
  theta = 10.0;
  const double lr = 0.1;
  for (int t = 1; t <= 25; ++t) {
    Parameters<double> g = zero_parameters<double>(cfg);
    g.fc2.bias[0] = 2 * (theta - 3);  // d/dθ (θ - 3)²
    sgd_step(p, g, cfg, lr);
    CHECK(theta == Approx(3 + 7 * std::pow(1 - 2 * lr, t)).epsilon(1e-12));
  }
}

TEST_CASE("zero gradient or zero rate leaves the model unchanged", "[network]") {
  const NetConfig cfg = NetConfig::tiny();
  Parameters<float> p = init_parameters<float>(cfg, 3);
  const Parameters<float> before = p;
  sgd_step(p, zero_parameters<float>(cfg), cfg, 0.5);
  CHECK(same_params(p, before, cfg));
  Parameters<float> g = init_parameters<float>(cfg, 4);
  sgd_step(p, g, cfg, 0.0);
  CHECK(same_params(p, before, cfg));
}

TEST_CASE("non-finite gradient aborts the step", "[network]") {
  const NetConfig cfg = NetConfig::tiny();
  Parameters<float> p = init_parameters<float>(cfg, 3);
  const Parameters<float> before = p;
  Parameters<float> g = init_parameters<float>(cfg, 4);
  g.fc1.weight(2, 3) = std::nanf("");
  try {
    sgd_step(p, g, cfg, 0.1);
    FAIL("expected an abort");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("fc1.weight") != std::string::npos);
  }
  CHECK(same_params(p, before, cfg));
}

TEST_CASE("embeddings are unit length and deterministic", "[network]") {
  const Network<float> net(NetConfig::desk(), 2);
  for (const auto& s : generate_synthetic({6, 31})) {
    const SceneTensor t = rasterize(s);
    const auto e = net.embed(t);
    REQUIRE(e.size() == 32);
    double n = 0;
    for (float v : e) n += static_cast<double>(v) * v;
    CHECK(std::abs(std::sqrt(n) - 1.0) <= 1e-6);
    CHECK(net.embed(t) == e);
  }
  CHECK_THROWS_AS(net.embed(SceneTensor(15, 30, 40)), ValidationError);
}

TEST_CASE("sparse and dense first layers agree", "[network]") {
  Network<float> dense(NetConfig::desk(), 3), sparse(NetConfig::desk(), 3);
  dense.first_layer_path = FirstLayerPath::dense;
  sparse.first_layer_path = FirstLayerPath::sparse;
  for (const auto& s : generate_synthetic({4, 41})) {
    const SceneTensor t = rasterize(s);
    const auto a = dense.embed(t), b = sparse.embed(t);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-5f);
  }
}

TEST_CASE("infer mode leaves running statistics alone", "[network]") {
  Network<float> net(NetConfig::tiny(), 2);
  const auto tensors = testing::random_tensors(net.config(), 3, 1);
  const Parameters<float> before = net.params();
  net.forward_infer(ptrs(tensors));
  CHECK(same_params(net.params(), before, net.config()));
  net.forward_train(ptrs(tensors), 0);
  CHECK(net.params().bn[1]->running_mean != before.bn[1]->running_mean);
}

TEST_CASE("checkpoint round trip", "[network]") {
  NetConfig cfg = small_config();
  cfg.num_classes = 5;
  const Network<float> net(cfg, 9);
  const std::string bytes = encode_checkpoint(net);
  CHECK(bytes.substr(0, 4) == "SSNM");
  const Network<float> back = decode_checkpoint<float>(bytes);
  CHECK(encode_checkpoint(back) == bytes);
  CHECK(back.config().num_classes == 5);
  const SceneTensor t = rasterize(generate_synthetic({1, 3})[0]);
  CHECK(back.embed(t) == net.embed(t));

  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint<float>(bad), FormatError);
  CHECK_THROWS_AS(decode_checkpoint<float>(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(decode_checkpoint<float>(bytes + "x"), FormatError);
}

TEST_CASE("zero epochs return the initial model", "[network]") {
  const auto scenes = sixteen_scenes();
  const auto tensors = rasterize_all(scenes);
  const MiningCorpus corpus(scenes);
  Network<float> net(small_config(), 1);
  const Parameters<float> before = net.params();
  TrainConfig tc{8, 0.05, 0, 1, 0.2, LossKind::triplet};
  CHECK(train_triplet(net, corpus, tensors, tc, MiningConfig{}).empty());
  CHECK(same_params(net.params(), before, net.config()));
}

TEST_CASE("training loss falls and runs are reproducible", "[network]") {
  const auto scenes = sixteen_scenes();
  const auto tensors = rasterize_all(scenes);
  const MiningCorpus corpus(scenes);
  TrainConfig tc{8, 0.05, 10, 1, 0.2, LossKind::triplet};
  MiningConfig mc{2, 8, MiningStrategy::hard, 1};
  Network<float> a(small_config(), 1), b(small_config(), 1);
  const auto la = train_triplet(a, corpus, tensors, tc, mc);
  const auto lb = train_triplet(b, corpus, tensors, tc, mc);
  REQUIRE(la.size() == 10);
  CHECK(la.back().mean_loss < la.front().mean_loss);
  for (std::size_t i = 0; i < la.size(); ++i) {
    CHECK(la[i].epoch == static_cast<int>(i) + 1);
    CHECK(la[i].triplet_count == 32);
    CHECK(la[i].mean_loss == lb[i].mean_loss);
  }
  CHECK(encode_checkpoint(a) == encode_checkpoint(b));
  const std::string line = format_epoch_log(la[0]);
  CHECK(line.rfind("1\t", 0) == 0);
}

TEST_CASE("cross-entropy training reduces its loss", "[network]") {
  const auto scenes = sixteen_scenes();
  const auto tensors = rasterize_all(scenes);
  NetConfig cfg = small_config();
  cfg.num_classes = 4;
  Network<float> net(cfg, 2);
  TrainConfig tc{8, 0.05, 10, 2, 0.2, LossKind::cross_entropy};
  const auto log = train_cross_entropy(net, scenes, tensors, tc);
  REQUIRE(log.size() == 10);
  CHECK(log.back().mean_loss < log.front().mean_loss);
}
