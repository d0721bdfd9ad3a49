#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "deepssn/nn/network.hpp"

namespace deepssn::testing {

/// Dense random tensors so every input position carries signal.
inline std::vector<SceneTensor> random_tensors(const nn::NetConfig& cfg, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<float> u(0.0f, 2.0f);
  std::vector<SceneTensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    SceneTensor t(cfg.in_channels, cfg.in_height, cfg.in_width);
    for (float& v : t.values()) v = u(gen);
    out.push_back(std::move(t));
  }
  return out;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst_block;
  std::size_t checked = 0;
};

/// Relative error with a floor on the denominator so that gradients that
/// are zero on both sides compare as equal.
inline double relative_error(double analytic, double numeric, double floor = 1e-5) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares analytic gradients of the summed triplet loss over `triplets`
/// (plus, with a head, the summed cross-entropy against `classes`) with
/// central differences for every trainable scalar.
inline GradCheck check_gradients(nn::Network<double>& net, const std::vector<SceneTensor>& tensors,
                                 const std::vector<nn::BatchTriplet>& triplets, double margin,
                                 const std::vector<int>& classes = {}, double h = 1e-5) {
  std::vector<const SceneTensor*> batch;
  for (const SceneTensor& t : tensors) batch.push_back(&t);
  const std::uint64_t key = 77;
  auto objective = [&](nn::ForwardCache<double>& c, std::vector<nn::Vec<double>>& d_emb,
                       std::vector<nn::Vec<double>>& d_logits) {
    double loss = nn::triplet_objective<double>(c, triplets, margin, d_emb);
    if (!classes.empty()) loss += nn::cross_entropy_objective<double>(c, classes, d_logits);
    return loss;
  };
  auto value = [&] {
    auto c = net.forward_train(batch, key);
    std::vector<nn::Vec<double>> de, dl;
    return objective(c, de, dl);
  };

  auto cache = net.forward_train(batch, key);
  std::vector<nn::Vec<double>> d_emb, d_logits;
  objective(cache, d_emb, d_logits);
  const nn::Parameters<double> grads = net.backward(cache, d_emb, d_logits);

  GradCheck out;
  auto params = nn::blocks(net.params(), net.config());
  const auto g = nn::blocks(grads, net.config());
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (!params[b].trainable) continue;
    for (std::size_t i = 0; i < params[b].data.size(); ++i) {
      double& p = params[b].data[i];
      const double saved = p;
      p = saved + h;
      const double up = value();
      p = saved - h;
      const double down = value();
      p = saved;
      const double err = relative_error(g[b].data[i], (up - down) / (2 * h));
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst_block = params[b].name + "[" + std::to_string(i) + "]";
      }
      ++out.checked;
    }
  }
  return out;
}

}  // namespace deepssn::testing
