#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "deepssn/error.hpp"
#include "deepssn/random.hpp"

namespace deepssn::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Feature maps are stored as (channels x height*width) row-major matrices.
struct MapShape {
  int channels = 0;
  int height = 0;
  int width = 0;
};

/// Unfolds every KxK window of a (C x H*W) map into a column of a
/// (C*K*K x H'*W') matrix, H' = H-K+1. Row index is c*K*K + ky*K + kx.
template <class T>
Mat<T> im2col(const Mat<T>& in, MapShape s, int k) {
  const int oh = s.height - k + 1, ow = s.width - k + 1;
  Mat<T> col(static_cast<Eigen::Index>(s.channels) * k * k, static_cast<Eigen::Index>(oh) * ow);
  for (int c = 0; c < s.channels; ++c) {
    const T* src = in.row(c).data();
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (int oy = 0; oy < oh; ++oy) {
          const T* row = src + static_cast<std::ptrdiff_t>(oy + ky) * s.width + kx;
          std::copy(row, row + ow, dst + static_cast<std::ptrdiff_t>(oy) * ow);
        }
      }
  }
  return col;
}

/// Adjoint of im2col: scatter-adds columns back onto a (C x H*W) map.
template <class T>
Mat<T> col2im(const Mat<T>& col, MapShape s, int k) {
  const int oh = s.height - k + 1, ow = s.width - k + 1;
  Mat<T> out = Mat<T>::Zero(s.channels, static_cast<Eigen::Index>(s.height) * s.width);
  for (int c = 0; c < s.channels; ++c) {
    T* dst = out.row(c).data();
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (int oy = 0; oy < oh; ++oy) {
          T* row = dst + static_cast<std::ptrdiff_t>(oy + ky) * s.width + kx;
          const T* from = src + static_cast<std::ptrdiff_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) row[ox] += from[ox];
        }
      }
  }
  return out;
}

/// Valid convolution, stride 1. weight is (F x C*K*K).
inline void check_kernel(MapShape s, int k) {
  if (k > s.height || k > s.width)
    throw ValidationError("conv: kernel " + std::to_string(k) + " larger than input " + std::to_string(s.height) + "x" +
                          std::to_string(s.width));
}

template <class T>
Mat<T> conv_forward(const Mat<T>& in, MapShape s, const Mat<T>& weight, const Vec<T>& bias, int k) {
  check_kernel(s, k);
  Mat<T> out(weight.rows(), static_cast<Eigen::Index>(s.height - k + 1) * (s.width - k + 1));
  out.noalias() = weight * im2col(in, s, k);
  out.colwise() += bias;
  return out;
}

/// Accumulates weight/bias gradients; returns the input gradient when asked.
template <class T>
void conv_backward(const Mat<T>& in, MapShape s, const Mat<T>& weight, int k, const Mat<T>& d_out, Mat<T>& d_weight,
                   Vec<T>& d_bias, Mat<T>* d_in) {
  const Mat<T> col = im2col(in, s, k);
  d_weight.noalias() += d_out * col.transpose();
  d_bias += d_out.rowwise().sum();
  if (d_in) {
    Mat<T> d_col(col.rows(), col.cols());
    d_col.noalias() = weight.transpose() * d_out;
    *d_in = col2im(d_col, s, k);
  }
}

/// Non-zero entries of a sparse input map.
struct SparseEntry {
  int channel;
  int row;
  int col;
  float value;
};

inline std::vector<SparseEntry> sparse_entries(std::span<const float> values, MapShape s) {
  std::vector<SparseEntry> out;
  std::size_t i = 0;
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x, ++i)
        if (values[i] != 0.0f) out.push_back({c, y, x, values[i]});
  return out;
}

/// Calls f(weight_column, output_position, value) for every (input entry,
/// kernel offset) pair that lands inside the output map.
template <class F>
void for_each_sparse_tap(std::span<const SparseEntry> entries, MapShape s, int k, F&& f) {
  const int oh = s.height - k + 1, ow = s.width - k + 1;
  for (const SparseEntry& e : entries) {
    const int ky_lo = std::max(0, e.row - oh + 1), ky_hi = std::min(k - 1, e.row);
    const int kx_lo = std::max(0, e.col - ow + 1), kx_hi = std::min(k - 1, e.col);
    for (int ky = ky_lo; ky <= ky_hi; ++ky)
      for (int kx = kx_lo; kx <= kx_hi; ++kx)
        f((e.channel * k + ky) * k + kx, (e.row - ky) * ow + (e.col - kx), e.value);
  }
}

/// Same result as conv_forward on a mostly-zero input, touching only the
/// non-zero entries. weight_t is the transposed weight (C*K*K x F).
template <class T>
Mat<T> conv_forward_sparse(std::span<const SparseEntry> entries, MapShape s, const Mat<T>& weight_t, const Vec<T>& bias,
                           int k) {
  const Eigen::Index filters = weight_t.cols();
  const Eigen::Index positions = static_cast<Eigen::Index>(s.height - k + 1) * (s.width - k + 1);
  // Position-major accumulation keeps the filter loop contiguous.
  Mat<T> acc = Mat<T>::Zero(positions, filters);
  for_each_sparse_tap(entries, s, k, [&](int wcol, int pos, float v) {
    acc.row(pos) += static_cast<T>(v) * weight_t.row(wcol);
  });
  Mat<T> out = acc.transpose();
  out.colwise() += bias;
  return out;
}

template <class T>
void conv_backward_sparse(std::span<const SparseEntry> entries, MapShape s, int k, const Mat<T>& d_out,
                          Mat<T>& d_weight_t, Vec<T>& d_bias) {
  const Mat<T> d_out_t = d_out.transpose();
  for_each_sparse_tap(entries, s, k, [&](int wcol, int pos, float v) {
    d_weight_t.row(wcol) += static_cast<T>(v) * d_out_t.row(pos);
  });
  d_bias += d_out.rowwise().sum();
}

/// Pyramid pooling geometry: for an n-bin level over an H x W map the
/// window is ceil(H/n) and the stride floor(H/n).
struct PoolWindow {
  int size_h, size_w, stride_h, stride_w;
};

inline PoolWindow pool_window(int h, int w, int bins) {
  return {(h + bins - 1) / bins, (w + bins - 1) / bins, h / bins, w / bins};
}

/// Max pooling over each pyramid level. Output is level-major, then
/// channel-major, then row-major bins. argmax holds flat (c*H*W + y*W + x)
/// indices; ties keep the first position in scan order.
template <class T>
Vec<T> pyramid_pool(const Mat<T>& in, MapShape s, std::span<const int> levels, std::vector<int>& argmax) {
  int cells = 0;
  for (int b : levels) {
    if (s.height < b || s.width < b)
      throw ValidationError("spp: feature map " + std::to_string(s.height) + "x" + std::to_string(s.width) +
                            " smaller than " + std::to_string(b) + " bins");
    cells += b * b;
  }
  Vec<T> out(static_cast<Eigen::Index>(s.channels) * cells);
  argmax.assign(static_cast<std::size_t>(out.size()), 0);
  Eigen::Index o = 0;
  for (int bins : levels) {
    const PoolWindow pw = pool_window(s.height, s.width, bins);
    for (int c = 0; c < s.channels; ++c) {
      const T* map = in.row(c).data();
      for (int by = 0; by < bins; ++by)
        for (int bx = 0; bx < bins; ++bx, ++o) {
          const int y0 = by * pw.stride_h, x0 = bx * pw.stride_w;
          const int y1 = std::min(s.height, y0 + pw.size_h), x1 = std::min(s.width, x0 + pw.size_w);
          T best = -std::numeric_limits<T>::infinity();
          int at = y0 * s.width + x0;
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
              const T v = map[y * s.width + x];
              if (v > best) {
                best = v;
                at = y * s.width + x;
              }
            }
          out[o] = best;
          argmax[static_cast<std::size_t>(o)] = c * s.height * s.width + at;
        }
    }
  }
  return out;
}

template <class T>
Mat<T> pyramid_pool_backward(const Vec<T>& d_out, MapShape s, const std::vector<int>& argmax) {
  Mat<T> d_in = Mat<T>::Zero(s.channels, static_cast<Eigen::Index>(s.height) * s.width);
  T* flat = d_in.data();
  for (std::size_t i = 0; i < argmax.size(); ++i) flat[argmax[i]] += d_out[static_cast<Eigen::Index>(i)];
  return d_in;
}

template <class T>
Vec<T> dense_forward(const Mat<T>& weight, const Vec<T>& bias, const Vec<T>& x) {
  if (weight.cols() != x.size() || weight.rows() != bias.size())
    throw ValidationError("dense: weight is " + std::to_string(weight.rows()) + "x" + std::to_string(weight.cols()) +
                          ", input has " + std::to_string(x.size()) + " values");
  Vec<T> y = bias;
  y.noalias() += weight * x;
  return y;
}

template <class T>
Vec<T> relu(const Vec<T>& x) {
  return x.cwiseMax(T(0));
}

/// Keep-mask scaled by 1/(1-rate): each unit survives with probability 1-rate.
template <class T>
Vec<T> dropout_mask(Eigen::Index n, double rate, KeyedRng rng) {
  Vec<T> mask(n);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < n; ++i) mask[i] = rng.bernoulli(1.0 - rate) ? scale : T(0);
  return mask;
}

/// Train mode applies a keyed mask; infer mode is the identity.
template <class T>
Vec<T> dropout(const Vec<T>& x, double rate, bool training, KeyedRng rng) {
  if (!training || rate == 0.0) return x;
  return x.cwiseProduct(dropout_mask<T>(x.size(), rate, rng));
}

template <class T>
Vec<T> l2_normalize(const Vec<T>& v) {
  const T n = v.norm();
  if (!(n > T(0))) throw ValidationError("degenerate embedding");
  return v / n;
}

/// Backward of y = v/|v|: (dy - y (y . dy)) / |v|.
template <class T>
Vec<T> l2_normalize_backward(const Vec<T>& y, T norm, const Vec<T>& dy) {
  return (dy - y * y.dot(dy)) / norm;
}

/// Batch statistics per channel over (batch x spatial) positions.
template <class T>
struct BatchNormStats {
  Vec<T> mean;
  Vec<T> var;  // biased
};

template <class T>
BatchNormStats<T> batch_norm_stats(std::span<const Mat<T>> xs) {
  const Eigen::Index c = xs[0].rows();
  BatchNormStats<T> st{Vec<T>::Zero(c), Vec<T>::Zero(c)};
  T count = 0;
  for (const Mat<T>& x : xs) {
    st.mean += x.rowwise().sum();
    count += static_cast<T>(x.cols());
  }
  st.mean /= count;
  for (const Mat<T>& x : xs) st.var += (x.colwise() - st.mean).array().square().matrix().rowwise().sum();
  st.var /= count;
  return st;
}

/// y = gain * (x - mean)/sqrt(var + eps) + bias per channel. Train mode
/// uses batch statistics and folds them into the running averages; infer
/// mode uses the running statistics. x_hat receives the normalised input.
template <class T>
std::vector<Mat<T>> batch_norm_forward(std::span<const Mat<T>> xs, const Vec<T>& gain, const Vec<T>& bias,
                                       Vec<T>& running_mean, Vec<T>& running_var, bool training, double momentum,
                                       double epsilon, std::vector<Mat<T>>* x_hat = nullptr, Vec<T>* inv_std_out = nullptr,
                                       BatchNormStats<T>* stats_out = nullptr) {
  Vec<T> mean = running_mean, var = running_var;
  if (training) {
    const BatchNormStats<T> st = batch_norm_stats<T>(xs);
    mean = st.mean;
    var = st.var;
    const T m = static_cast<T>(momentum);
    running_mean = (T(1) - m) * running_mean + m * st.mean;
    running_var = (T(1) - m) * running_var + m * st.var;
    if (stats_out) *stats_out = st;
  }
  const Vec<T> inv_std = (var.array() + static_cast<T>(epsilon)).rsqrt().matrix();
  std::vector<Mat<T>> out;
  out.reserve(xs.size());
  if (x_hat) x_hat->clear();
  for (const Mat<T>& x : xs) {
    Mat<T> xh = ((x.colwise() - mean).array().colwise() * inv_std.array()).matrix();
    out.push_back(((xh.array().colwise() * gain.array()).colwise() + bias.array()).matrix());
    if (x_hat) x_hat->push_back(std::move(xh));
  }
  if (inv_std_out) *inv_std_out = inv_std;
  return out;
}

/// Backward pass of y = gain * (x - mean)/sqrt(var + eps) + bias with batch
/// statistics. d_y is overwritten with d_x.
template <class T>
void batch_norm_backward(std::span<Mat<T>> d_y, std::span<const Mat<T>> x_hat, const Vec<T>& gain, const Vec<T>& inv_std,
                         Vec<T>& d_gain, Vec<T>& d_bias) {
  const Eigen::Index c = gain.size();
  Vec<T> sum_dy = Vec<T>::Zero(c), sum_dy_xhat = Vec<T>::Zero(c);
  T count = 0;
  for (std::size_t i = 0; i < d_y.size(); ++i) {
    sum_dy += d_y[i].rowwise().sum();
    sum_dy_xhat += d_y[i].cwiseProduct(x_hat[i]).rowwise().sum();
    count += static_cast<T>(d_y[i].cols());
  }
  d_gain += sum_dy_xhat;
  d_bias += sum_dy;
  const Vec<T> mean_dy = sum_dy / count, mean_dy_xhat = sum_dy_xhat / count;
  const Vec<T> scale = gain.cwiseProduct(inv_std);
  for (std::size_t i = 0; i < d_y.size(); ++i) {
    Mat<T>& g = d_y[i];
    for (Eigen::Index r = 0; r < c; ++r)
      g.row(r) = scale[r] * (g.row(r).array() - mean_dy[r] - x_hat[i].row(r).array() * mean_dy_xhat[r]).matrix();
  }
}

}  // namespace deepssn::nn
