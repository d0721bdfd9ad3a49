#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepssn/error.hpp"

namespace deepssn::nn {

enum class PoolingMode : std::uint8_t { spp, single_max };
enum class LossKind : std::uint8_t { triplet, cross_entropy };

struct ConvSpec {
  int filters = 0;
  int kernel = 0;
  bool batch_norm = false;
};

/// Architecture of the embedding network:
/// conv stages (valid convolution, stride 1, optional batch norm, ReLU),
/// pyramid max pooling, fc1 + ReLU + dropout, fc2, L2 normalisation.
struct NetConfig {
  int in_channels = 15;
  int in_height = 40;
  int in_width = 40;
  std::vector<ConvSpec> conv = {{96, 11, false}, {256, 7, true}, {384, 5, true}};
  std::vector<int> spp_bins = {4, 2, 1};
  int fc1_units = 4096;
  double drop_rate = 0.2;
  int embed_dim = 128;
  double margin = 0.2;
  PoolingMode pooling = PoolingMode::spp;
  /// Classifier head size for cross-entropy training; 0 means no head.
  int num_classes = 0;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;

  /// Bins per pyramid level. single_max pools one 4x4 grid per channel.
  std::vector<int> pool_bins() const { return pooling == PoolingMode::spp ? spp_bins : std::vector<int>{4}; }

  int pooled_length() const {
    int cells = 0;
    for (int b : pool_bins()) cells += b * b;
    return conv.back().filters * cells;
  }

  int max_bin() const {
    int m = 0;
    for (int b : pool_bins()) m = std::max(m, b);
    return m;
  }

  /// Spatial (height, width) after each conv stage for the configured input.
  std::vector<std::pair<int, int>> spatial_chain() const {
    std::vector<std::pair<int, int>> out;
    int h = in_height, w = in_width;
    for (const ConvSpec& c : conv) {
      h = h - c.kernel + 1;
      w = w - c.kernel + 1;
      out.emplace_back(h, w);
    }
    return out;
  }

  void validate() const {
    if (conv.empty()) throw ValidationError("NetConfig: at least one conv stage required");
    if (embed_dim < 2) throw ValidationError("NetConfig: embed_dim must be >= 2");
    if (fc1_units < 1) throw ValidationError("NetConfig: fc1_units must be >= 1");
    if (drop_rate < 0.0 || drop_rate >= 1.0) throw ValidationError("NetConfig: drop_rate must be in [0,1)");
    for (const ConvSpec& c : conv)
      if (c.filters < 1 || c.kernel < 1) throw ValidationError("NetConfig: conv filters and kernel must be >= 1");
    for (int b : pool_bins())
      if (b < 1) throw ValidationError("NetConfig: pyramid bins must be >= 1");
    int h = in_height, w = in_width;
    for (const ConvSpec& c : conv) {
      if (c.kernel > h || c.kernel > w) throw ValidationError("NetConfig: kernel larger than its input");
      h -= c.kernel - 1;
      w -= c.kernel - 1;
    }
    if (h < max_bin() || w < max_bin())
      throw ValidationError("NetConfig: final feature map " + std::to_string(h) + "x" + std::to_string(w) +
                            " smaller than the largest pyramid level");
  }

  /// Published full-size configuration.
  static NetConfig reference() { return {}; }

  /// Desk-scale preset: same topology with 16/32/48 filters, fc1 256, d 32.
  static NetConfig desk() {
    NetConfig c;
    c.conv = {{16, 11, false}, {32, 7, true}, {48, 5, true}};
    c.fc1_units = 256;
    c.embed_dim = 32;
    return c;
  }

  /// Tiny configuration for finite-difference gradient checks.
  static NetConfig tiny() {
    NetConfig c;
    c.in_channels = 3;
    c.in_height = 12;
    c.in_width = 12;
    c.conv = {{2, 3, false}, {3, 3, true}, {4, 2, true}};
    c.fc1_units = 6;
    c.embed_dim = 4;
    c.drop_rate = 0.2;
    return c;
  }
};

inline nlohmann::json to_json(const NetConfig& c) {
  nlohmann::json conv = nlohmann::json::array();
  for (const ConvSpec& s : c.conv) conv.push_back({{"filters", s.filters}, {"kernel", s.kernel}, {"batch_norm", s.batch_norm}});
  return {{"in_channels", c.in_channels}, {"in_height", c.in_height}, {"in_width", c.in_width},
          {"conv", conv}, {"spp_bins", c.spp_bins}, {"fc1_units", c.fc1_units},
          {"drop_rate", c.drop_rate}, {"embed_dim", c.embed_dim}, {"margin", c.margin},
          {"pooling", c.pooling == PoolingMode::spp ? "spp" : "single_max"},
          {"num_classes", c.num_classes}, {"bn_momentum", c.bn_momentum}, {"bn_epsilon", c.bn_epsilon}};
}

inline NetConfig net_config_from_json(const nlohmann::json& j) {
  NetConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.in_height = j.at("in_height").get<int>();
  c.in_width = j.at("in_width").get<int>();
  c.conv.clear();
  for (const auto& s : j.at("conv"))
    c.conv.push_back({s.at("filters").get<int>(), s.at("kernel").get<int>(), s.at("batch_norm").get<bool>()});
  c.spp_bins = j.at("spp_bins").get<std::vector<int>>();
  c.fc1_units = j.at("fc1_units").get<int>();
  c.drop_rate = j.at("drop_rate").get<double>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.margin = j.at("margin").get<double>();
  c.pooling = j.at("pooling").get<std::string>() == "spp" ? PoolingMode::spp : PoolingMode::single_max;
  c.num_classes = j.value("num_classes", 0);
  c.bn_momentum = j.value("bn_momentum", 0.1);
  c.bn_epsilon = j.value("bn_epsilon", 1e-5);
  c.validate();
  return c;
}

struct TrainConfig {
  int batch_size = 512;
  double learning_rate = 0.01;
  int epochs = 20;
  std::uint64_t seed = 0;
  double margin = 0.2;
  LossKind loss = LossKind::triplet;

  void validate() const {
    if (batch_size < 1) throw ValidationError("TrainConfig: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ValidationError("TrainConfig: learning_rate must be > 0");
    if (epochs < 0) throw ValidationError("TrainConfig: epochs must be >= 0");
  }
};

}  // namespace deepssn::nn
