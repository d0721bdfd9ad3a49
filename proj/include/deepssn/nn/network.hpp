#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deepssn/error.hpp"
#include "deepssn/geodata.hpp"
#include "deepssn/nn/config.hpp"
#include "deepssn/nn/layers.hpp"
#include "deepssn/random.hpp"

namespace deepssn::nn {

template <class T>
struct ConvLayer {
  Mat<T> weight;  // filters x (channels*k*k)
  Vec<T> bias;
};

template <class T>
struct BatchNorm {
  Vec<T> gain;
  Vec<T> bias;
  Vec<T> running_mean;
  Vec<T> running_var;
};

template <class T>
struct Dense {
  Mat<T> weight;  // out x in
  Vec<T> bias;
};

/// All tensors of a network. Gradients use the same layout; the running
/// batch-norm statistics are carried but never receive gradient.
template <class T>
struct Parameters {
  std::vector<ConvLayer<T>> conv;
  std::vector<std::optional<BatchNorm<T>>> bn;
  Dense<T> fc1;
  Dense<T> fc2;
  std::optional<Dense<T>> head;
};

template <class T>
struct BlockRef {
  std::string name;
  std::string layer;  // layer group used for parameter accounting
  std::span<T> data;
  std::vector<std::uint32_t> dims;
  bool trainable = true;
};

namespace detail {
template <class M>
auto block_span(M& m) {
  return std::span(m.data(), static_cast<std::size_t>(m.size()));
}
}  // namespace detail

/// Named views over every tensor, in a fixed order.
template <class T>
std::vector<BlockRef<T>> blocks(Parameters<T>& p, const NetConfig& cfg) {
  std::vector<BlockRef<T>> out;
  auto u = [](auto v) { return static_cast<std::uint32_t>(v); };
  int in_ch = cfg.in_channels;
  for (std::size_t i = 0; i < p.conv.size(); ++i) {
    const std::string base = "conv" + std::to_string(i + 1);
    const ConvSpec& s = cfg.conv[i];
    const std::string layer = "Conv" + std::to_string(i + 1) + (s.batch_norm ? "-batchNorm" : "");
    out.push_back({base + ".weight", layer, detail::block_span(p.conv[i].weight),
                   {u(s.filters), u(in_ch), u(s.kernel), u(s.kernel)}, true});
    out.push_back({base + ".bias", layer, detail::block_span(p.conv[i].bias), {u(s.filters)}, true});
    if (p.bn[i]) {
      BatchNorm<T>& b = *p.bn[i];
      out.push_back({base + ".bn.gain", layer, detail::block_span(b.gain), {u(s.filters)}, true});
      out.push_back({base + ".bn.bias", layer, detail::block_span(b.bias), {u(s.filters)}, true});
      out.push_back({base + ".bn.running_mean", layer, detail::block_span(b.running_mean), {u(s.filters)}, false});
      out.push_back({base + ".bn.running_var", layer, detail::block_span(b.running_var), {u(s.filters)}, false});
    }
    in_ch = s.filters;
  }
  auto dense = [&](Dense<T>& d, const std::string& name, const std::string& layer) {
    out.push_back({name + ".weight", layer, detail::block_span(d.weight), {u(d.weight.rows()), u(d.weight.cols())}, true});
    out.push_back({name + ".bias", layer, detail::block_span(d.bias), {u(d.bias.size())}, true});
  };
  dense(p.fc1, "fc1", "Fully-connected1");
  dense(p.fc2, "fc2", "Fully-connected2");
  if (p.head) dense(*p.head, "head", "Classifier");
  return out;
}

template <class T>
std::vector<BlockRef<const T>> blocks(const Parameters<T>& p, const NetConfig& cfg) {
  std::vector<BlockRef<const T>> out;
  for (BlockRef<T>& b : blocks(const_cast<Parameters<T>&>(p), cfg))
    out.push_back({b.name, b.layer, std::span<const T>(b.data), b.dims, b.trainable});
  return out;
}

/// Tensors shaped for `cfg`, all zero (BN gains included).
template <class T>
Parameters<T> zero_parameters(const NetConfig& cfg) {
  Parameters<T> p;
  int in_ch = cfg.in_channels;
  for (const ConvSpec& s : cfg.conv) {
    p.conv.push_back({Mat<T>::Zero(s.filters, static_cast<Eigen::Index>(in_ch) * s.kernel * s.kernel), Vec<T>::Zero(s.filters)});
    if (s.batch_norm)
      p.bn.push_back(BatchNorm<T>{Vec<T>::Zero(s.filters), Vec<T>::Zero(s.filters), Vec<T>::Zero(s.filters),
                                  Vec<T>::Zero(s.filters)});
    else
      p.bn.push_back(std::nullopt);
    in_ch = s.filters;
  }
  p.fc1 = {Mat<T>::Zero(cfg.fc1_units, cfg.pooled_length()), Vec<T>::Zero(cfg.fc1_units)};
  p.fc2 = {Mat<T>::Zero(cfg.embed_dim, cfg.fc1_units), Vec<T>::Zero(cfg.embed_dim)};
  if (cfg.num_classes > 0) p.head = Dense<T>{Mat<T>::Zero(cfg.num_classes, cfg.embed_dim), Vec<T>::Zero(cfg.num_classes)};
  return p;
}

/// He-uniform weights U(-sqrt(6/fan_in), +sqrt(6/fan_in)), zero biases,
/// unit BN gains and running variances. Each tensor draws from its own
/// keyed stream.
template <class T>
Parameters<T> init_parameters(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Parameters<T> p = zero_parameters<T>(cfg);
  for (BlockRef<T>& b : blocks(p, cfg)) {
    const bool is_weight = b.name.ends_with(".weight");
    if (is_weight) {
      std::size_t fan_in = 1;
      for (std::size_t i = 1; i < b.dims.size(); ++i) fan_in *= b.dims[i];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      KeyedRng rng = KeyedRng::from(seed, b.name);
      for (T& v : b.data) v = static_cast<T>(rng.uniform(-bound, bound));
    } else if (b.name.ends_with(".bn.gain") || b.name.ends_with(".bn.running_var")) {
      for (T& v : b.data) v = T(1);
    }
  }
  return p;
}

struct LayerCount {
  std::string layer;
  std::size_t count = 0;
};

/// Parameter count per layer group from the configuration alone. Batch-norm
/// layers count gain, bias, running mean and running variance.
inline std::vector<LayerCount> parameter_counts(const NetConfig& cfg) {
  std::vector<LayerCount> out;
  std::size_t in_ch = static_cast<std::size_t>(cfg.in_channels);
  for (std::size_t i = 0; i < cfg.conv.size(); ++i) {
    const ConvSpec& s = cfg.conv[i];
    const auto f = static_cast<std::size_t>(s.filters), k = static_cast<std::size_t>(s.kernel);
    std::size_t n = f * in_ch * k * k + f;
    if (s.batch_norm) n += 4 * f;
    out.push_back({"Conv" + std::to_string(i + 1) + (s.batch_norm ? "-batchNorm" : ""), n});
    in_ch = f;
  }
  const auto pooled = static_cast<std::size_t>(cfg.pooled_length());
  const auto h = static_cast<std::size_t>(cfg.fc1_units), d = static_cast<std::size_t>(cfg.embed_dim);
  out.push_back({"Fully-connected1", pooled * h + h});
  out.push_back({"Fully-connected2", h * d + d});
  if (cfg.num_classes > 0) {
    const auto c = static_cast<std::size_t>(cfg.num_classes);
    out.push_back({"Classifier", d * c + c});
  }
  return out;
}

/// Parameter count per layer group of an allocated parameter set.
template <class T>
std::vector<LayerCount> parameter_counts(const Parameters<T>& p, const NetConfig& cfg) {
  std::vector<LayerCount> out;
  for (const auto& b : blocks(p, cfg)) {
    if (out.empty() || out.back().layer != b.layer) out.push_back({b.layer, 0});
    out.back().count += b.data.size();
  }
  return out;
}

inline std::size_t total_count(std::span<const LayerCount> counts) {
  std::size_t n = 0;
  for (const LayerCount& c : counts) n += c.count;
  return n;
}

/// How the first convolution reads its (typically very sparse) input.
enum class FirstLayerPath : std::uint8_t { automatic, dense, sparse };

/// Intermediate values of one forward pass over a batch, kept for backward.
template <class T>
struct ForwardCache {
  std::size_t batch = 0;
  bool training = false;
  std::vector<std::vector<SparseEntry>> sparse_input;  // per sample, when the sparse path ran
  std::vector<Mat<T>> dense_input;                      // per sample, when the dense path ran
  std::vector<std::vector<Mat<T>>> x_hat;               // [stage][sample], normalised pre-activation (BN stages)
  std::vector<std::vector<Mat<T>>> act;                 // [stage][sample], post-ReLU output
  std::vector<Vec<T>> inv_std;                          // [stage], BN stages only
  std::vector<BatchNormStats<T>> batch_stats;           // [stage], BN stages in training
  std::vector<std::vector<int>> pool_argmax;
  std::vector<Vec<T>> pooled;
  std::vector<Vec<T>> h1_pre;
  std::vector<Vec<T>> dropout_mask;  // 0 or 1/(1-rate); empty when not training
  std::vector<Vec<T>> h1;
  std::vector<Vec<T>> v;  // fc2 output before normalisation
  std::vector<T> norm;
  std::vector<Vec<T>> embedding;
  std::vector<Vec<T>> logits;
};

/// Embedding network over scene tensors.
template <class T>
class Network {
public:
  Network() = default;
  Network(NetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), params_(init_parameters<T>(cfg_, seed)) {}
  Network(NetConfig cfg, Parameters<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) { cfg_.validate(); }

  const NetConfig& config() const { return cfg_; }
  Parameters<T>& params() { return params_; }
  const Parameters<T>& params() const { return params_; }

  FirstLayerPath first_layer_path = FirstLayerPath::automatic;

  /// Training-mode pass: batch statistics, dropout keyed by
  /// (dropout_key, position in batch); updates BN running statistics.
  ForwardCache<T> forward_train(std::span<const SceneTensor* const> batch, std::uint64_t dropout_key) {
    return run(batch, true, dropout_key, &params_);
  }

  /// Inference-mode pass: running statistics, no dropout.
  ForwardCache<T> forward_infer(std::span<const SceneTensor* const> batch) const {
    return run(batch, false, 0, nullptr);
  }

  std::vector<float> embed(const SceneTensor& t) const {
    const SceneTensor* one[] = {&t};
    const ForwardCache<T> c = forward_infer(one);
    std::vector<float> out(static_cast<std::size_t>(c.embedding[0].size()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(c.embedding[0][static_cast<Eigen::Index>(i)]);
    return out;
  }

  /// Exact gradients of a scalar objective given its gradient with respect
  /// to each sample's embedding and, with a head, each sample's logits.
  Parameters<T> backward(const ForwardCache<T>& c, std::span<const Vec<T>> d_embedding,
                         std::span<const Vec<T>> d_logits = {}) const {
    if (d_embedding.size() != c.batch) throw ValidationError("backward: one embedding gradient per sample required");
    Parameters<T> g = zero_parameters<T>(cfg_);
    const std::size_t stages = cfg_.conv.size();
    const auto shapes = stage_shapes();
    std::vector<Mat<T>> d_act(c.batch);

    for (std::size_t n = 0; n < c.batch; ++n) {
      const Vec<T>& y = c.embedding[n];
      const Vec<T>& dy = d_embedding[n];
      Vec<T> dv = l2_normalize_backward(y, c.norm[n], dy);
      if (params_.head && !d_logits.empty()) {
        g.head->weight.noalias() += d_logits[n] * c.v[n].transpose();
        g.head->bias += d_logits[n];
        dv.noalias() += params_.head->weight.transpose() * d_logits[n];
      }
      g.fc2.weight.noalias() += dv * c.h1[n].transpose();
      g.fc2.bias += dv;
      Vec<T> dh = params_.fc2.weight.transpose() * dv;
      if (c.training) dh = dh.cwiseProduct(c.dropout_mask[n]);
      for (Eigen::Index i = 0; i < dh.size(); ++i)
        if (!(c.h1_pre[n][i] > T(0))) dh[i] = T(0);
      g.fc1.weight.noalias() += dh * c.pooled[n].transpose();
      g.fc1.bias += dh;
      const Vec<T> d_pooled = params_.fc1.weight.transpose() * dh;
      d_act[n] = pyramid_pool_backward(d_pooled, shapes[stages], c.pool_argmax[n]);
    }

    for (std::size_t s = stages; s-- > 0;) {
      std::vector<Mat<T>> dz(c.batch);
      for (std::size_t n = 0; n < c.batch; ++n)
        dz[n] = (c.act[s][n].array() > T(0)).select(d_act[n], T(0));
      if (params_.bn[s]) {
        batch_norm_backward<T>(dz, c.x_hat[s], params_.bn[s]->gain, c.inv_std[s], g.bn[s]->gain, g.bn[s]->bias);
      }
      const int k = cfg_.conv[s].kernel;
      if (s == 0) {
        Mat<T> d_weight_t;
        for (std::size_t n = 0; n < c.batch; ++n) {
          if (!c.sparse_input[n].empty() || c.dense_input[n].size() == 0) {
            if (d_weight_t.size() == 0) d_weight_t = Mat<T>::Zero(g.conv[0].weight.cols(), g.conv[0].weight.rows());
            conv_backward_sparse<T>(c.sparse_input[n], shapes[0], k, dz[n], d_weight_t, g.conv[0].bias);
          } else {
            conv_backward<T>(c.dense_input[n], shapes[0], params_.conv[0].weight, k, dz[n], g.conv[0].weight,
                             g.conv[0].bias, nullptr);
          }
        }
        if (d_weight_t.size() != 0) g.conv[0].weight += d_weight_t.transpose();
      } else {
        for (std::size_t n = 0; n < c.batch; ++n) {
          Mat<T> d_in;
          conv_backward<T>(c.act[s - 1][n], shapes[s], params_.conv[s].weight, k, dz[n], g.conv[s].weight,
                           g.conv[s].bias, &d_in);
          d_act[n] = std::move(d_in);
        }
      }
    }
    return g;
  }

  /// Input shape of each conv stage followed by the final feature map shape.
  std::vector<MapShape> stage_shapes() const {
    std::vector<MapShape> out{{cfg_.in_channels, cfg_.in_height, cfg_.in_width}};
    for (const ConvSpec& s : cfg_.conv)
      out.push_back({s.filters, out.back().height - s.kernel + 1, out.back().width - s.kernel + 1});
    return out;
  }

private:
  bool use_sparse(std::size_t nonzeros) const {
    if (first_layer_path != FirstLayerPath::automatic) return first_layer_path == FirstLayerPath::sparse;
    const auto& chain = cfg_.spatial_chain();
    const std::size_t dense_cols = static_cast<std::size_t>(cfg_.in_channels) * chain[0].first * chain[0].second;
    return nonzeros * 4 < dense_cols;
  }

  // `update` receives the new running statistics in training mode.
  ForwardCache<T> run(std::span<const SceneTensor* const> batch, bool training, std::uint64_t dropout_key,
                      Parameters<T>* update) const {
    if (batch.empty()) throw ValidationError("forward: empty batch");
    const auto shapes = stage_shapes();
    for (const SceneTensor* t : batch)
      if (t->channels() != cfg_.in_channels || t->height() != cfg_.in_height || t->width() != cfg_.in_width)
        throw ValidationError("forward: tensor shape " + std::to_string(t->channels()) + "x" +
                              std::to_string(t->height()) + "x" + std::to_string(t->width()) +
                              " does not match the network input");
    ForwardCache<T> c;
    c.batch = batch.size();
    c.training = training;
    const std::size_t stages = cfg_.conv.size();
    c.x_hat.resize(stages);
    c.act.resize(stages);
    c.inv_std.resize(stages);
    c.batch_stats.resize(stages);
    c.sparse_input.resize(c.batch);
    c.dense_input.resize(c.batch);

    std::vector<Mat<T>> z(c.batch);
    const Mat<T> w0_t = params_.conv[0].weight.transpose();
    for (std::size_t n = 0; n < c.batch; ++n) {
      const std::span<const float> vals = batch[n]->values();
      std::vector<SparseEntry> entries = sparse_entries(vals, shapes[0]);
      if (use_sparse(entries.size())) {
        z[n] = conv_forward_sparse<T>(entries, shapes[0], w0_t, params_.conv[0].bias, cfg_.conv[0].kernel);
        c.sparse_input[n] = std::move(entries);
      } else {
        Mat<T> in(shapes[0].channels, static_cast<Eigen::Index>(shapes[0].height) * shapes[0].width);
        for (Eigen::Index i = 0; i < in.size(); ++i) in.data()[i] = static_cast<T>(vals[static_cast<std::size_t>(i)]);
        z[n] = conv_forward<T>(in, shapes[0], params_.conv[0].weight, params_.conv[0].bias, cfg_.conv[0].kernel);
        c.dense_input[n] = std::move(in);
      }
    }

    for (std::size_t s = 0; s < stages; ++s) {
      if (s > 0)
        for (std::size_t n = 0; n < c.batch; ++n)
          z[n] = conv_forward<T>(c.act[s - 1][n], shapes[s], params_.conv[s].weight, params_.conv[s].bias,
                                 cfg_.conv[s].kernel);
      if (params_.bn[s]) {
        const BatchNorm<T>& bn = *params_.bn[s];
        // Infer mode reads running statistics; copies keep them untouched.
        Vec<T> rm = bn.running_mean, rv = bn.running_var;
        z = batch_norm_forward<T>(z, bn.gain, bn.bias, rm, rv, training, cfg_.bn_momentum, cfg_.bn_epsilon,
                                  &c.x_hat[s], &c.inv_std[s], &c.batch_stats[s]);
        if (update && training) {
          update->bn[s]->running_mean = rm;
          update->bn[s]->running_var = rv;
        }
      }
      c.act[s].resize(c.batch);
      for (std::size_t n = 0; n < c.batch; ++n) c.act[s][n] = z[n].cwiseMax(T(0));
    }

    const std::vector<int> levels = cfg_.pool_bins();
    c.pool_argmax.resize(c.batch);
    for (std::size_t n = 0; n < c.batch; ++n) {
      c.pooled.push_back(pyramid_pool<T>(c.act[stages - 1][n], shapes[stages], levels, c.pool_argmax[n]));
      Vec<T> pre = dense_forward(params_.fc1.weight, params_.fc1.bias, c.pooled[n]);
      Vec<T> h = relu(pre);
      if (training) {
        c.dropout_mask.push_back(dropout_mask<T>(h.size(), cfg_.drop_rate, KeyedRng::from(dropout_key, n)));
        h = h.cwiseProduct(c.dropout_mask.back());
      }
      Vec<T> v = dense_forward(params_.fc2.weight, params_.fc2.bias, h);
      c.embedding.push_back(l2_normalize(v));
      c.norm.push_back(v.norm());
      c.h1_pre.push_back(std::move(pre));
      c.h1.push_back(std::move(h));
      if (params_.head) c.logits.push_back(dense_forward(params_.head->weight, params_.head->bias, v));
      c.v.push_back(std::move(v));
    }
    return c;
  }

  NetConfig cfg_;
  Parameters<T> params_;
};

/// Plain SGD: p -= lr * g for every trainable tensor. Refuses to touch the
/// model if any gradient is non-finite.
template <class T>
void sgd_step(Parameters<T>& params, const Parameters<T>& grads, const NetConfig& cfg, double lr) {
  auto p = blocks(params, cfg);
  const auto g = blocks(grads, cfg);
  for (std::size_t b = 0; b < g.size(); ++b) {
    if (!g[b].trainable) continue;
    for (std::size_t i = 0; i < g[b].data.size(); ++i)
      if (!std::isfinite(static_cast<double>(g[b].data[i])))
        throw std::runtime_error("non-finite gradient in " + g[b].name + " at element " + std::to_string(i));
  }
  const T step = static_cast<T>(lr);
  for (std::size_t b = 0; b < p.size(); ++b) {
    if (!p[b].trainable) continue;
    for (std::size_t i = 0; i < p[b].data.size(); ++i) p[b].data[i] -= step * g[b].data[i];
  }
}

/// grads *= factor for every tensor.
template <class T>
void scale_gradients(Parameters<T>& grads, const NetConfig& cfg, T factor) {
  for (BlockRef<T>& b : blocks(grads, cfg))
    for (T& v : b.data) v *= factor;
}

template <class T>
struct TripletLoss {
  T loss = 0;
  Vec<T> d_anchor, d_positive, d_negative;
};

/// max(0, |a-p|^2 - |a-n|^2 + margin) and its gradients (zero when the
/// hinge is inactive).
template <class T>
TripletLoss<T> triplet_loss(const Vec<T>& a, const Vec<T>& p, const Vec<T>& n, T margin) {
  TripletLoss<T> r;
  const T value = (a - p).squaredNorm() - (a - n).squaredNorm() + margin;
  if (value > T(0)) {
    r.loss = value;
    r.d_anchor = T(2) * (n - p);
    r.d_positive = T(2) * (p - a);
    r.d_negative = T(2) * (a - n);
  } else {
    r.d_anchor = Vec<T>::Zero(a.size());
    r.d_positive = Vec<T>::Zero(a.size());
    r.d_negative = Vec<T>::Zero(a.size());
  }
  return r;
}

/// Triplets expressed as positions in a forward batch.
struct BatchTriplet {
  std::size_t anchor, positive, negative;
};

/// Summed triplet loss over a batch and per-sample embedding gradients.
template <class T>
T triplet_objective(const ForwardCache<T>& c, std::span<const BatchTriplet> triplets, T margin,
                    std::vector<Vec<T>>& d_embedding) {
  d_embedding.assign(c.batch, Vec<T>::Zero(c.embedding[0].size()));
  T total = 0;
  for (const BatchTriplet& t : triplets) {
    const TripletLoss<T> r = triplet_loss(c.embedding[t.anchor], c.embedding[t.positive], c.embedding[t.negative], margin);
    total += r.loss;
    d_embedding[t.anchor] += r.d_anchor;
    d_embedding[t.positive] += r.d_positive;
    d_embedding[t.negative] += r.d_negative;
  }
  return total;
}

/// Summed softmax cross-entropy over a batch and per-sample logit gradients.
template <class T>
T cross_entropy_objective(const ForwardCache<T>& c, std::span<const int> classes, std::vector<Vec<T>>& d_logits) {
  d_logits.clear();
  T total = 0;
  for (std::size_t n = 0; n < c.batch; ++n) {
    const Vec<T>& z = c.logits[n];
    const T mx = z.maxCoeff();
    Vec<T> p = (z.array() - mx).exp().matrix();
    const T sum = p.sum();
    p /= sum;
    const auto y = static_cast<Eigen::Index>(classes[n]);
    total += -(z[y] - mx - std::log(sum));
    p[y] -= T(1);
    d_logits.push_back(std::move(p));
  }
  return total;
}

}  // namespace deepssn::nn
