#pragma once

// Layer kernels with hand-written backward passes.
//
// Convolution: stride 1, zero "same" padding (top/left pad (k-1)/2, the rest
// bottom/right), lowered via im2col to one matrix product per example.
// Max pooling: 3x3 window, stride 2, -inf "same" padding, ceil(H/2) output.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "psvrt/error.hpp"
#include "psvrt/nn/tensor.hpp"

namespace psvrt::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstRowMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;

  int pad_before() const { return (kernel - 1) / 2; }
  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
  std::size_t patch_size() const { return static_cast<std::size_t>(in_channels) * kernel * kernel; }
};

inline constexpr int kPoolKernel = 3;
inline constexpr int kPoolStride = 2;

inline int pooled_side(int side) { return (side + kPoolStride - 1) / kPoolStride; }

inline int pool_pad_before(int side) {
  const int out = pooled_side(side);
  const int total = std::max((out - 1) * kPoolStride + kPoolKernel - side, 0);
  return total / 2;
}

namespace detail {

// Eight interleaved partial sums combined pairwise; vectorizes without
// reassociation, so every call with the same inputs rounds the same way.
template <typename T>
T dot_fixed_order(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  for (int l = 0; i < n; ++i, ++l) acc[l] += a[i] * b[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
}

// cols is (C*k*k) x (N*H*W), row-major; column index = n*H*W + h*W + w.
template <typename T>
void im2col(const Tensor4<T>& in, const ConvGeometry& g, std::vector<T>& cols) {
  const int N = in.batch, C = in.shape.channels, H = in.shape.height, W = in.shape.width;
  const int k = g.kernel, pad = g.pad_before();
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t width = static_cast<std::size_t>(N) * plane;
  cols.assign(g.patch_size() * width, T(0));
  for (int c = 0; c < C; ++c) {
    for (int a = 0; a < k; ++a) {
      for (int b = 0; b < k; ++b) {
        T* row = cols.data() + ((static_cast<std::size_t>(c) * k + a) * k + b) * width;
        for (int n = 0; n < N; ++n) {
          const T* src = in.example(n) + c * plane;
          T* dst = row + n * plane;
          for (int h = 0; h < H; ++h) {
            const int ih = h - pad + a;
            if (ih < 0 || ih >= H) continue;
            const int w_lo = std::max(0, pad - b);
            const int w_hi = std::min(W, W + pad - b);
            const T* s = src + static_cast<std::size_t>(ih) * W;
            T* d = dst + static_cast<std::size_t>(h) * W;
            for (int w = w_lo; w < w_hi; ++w) d[w] = s[w + b - pad];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const std::vector<T>& cols, const ConvGeometry& g, Tensor4<T>& grad_in) {
  const int N = grad_in.batch, C = grad_in.shape.channels, H = grad_in.shape.height, W = grad_in.shape.width;
  const int k = g.kernel, pad = g.pad_before();
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t width = static_cast<std::size_t>(N) * plane;
  std::fill(grad_in.values.begin(), grad_in.values.end(), T(0));
  for (int c = 0; c < C; ++c) {
    for (int a = 0; a < k; ++a) {
      for (int b = 0; b < k; ++b) {
        const T* row = cols.data() + ((static_cast<std::size_t>(c) * k + a) * k + b) * width;
        for (int n = 0; n < N; ++n) {
          T* dst = grad_in.example(n) + c * plane;
          const T* src = row + n * plane;
          for (int h = 0; h < H; ++h) {
            const int ih = h - pad + a;
            if (ih < 0 || ih >= H) continue;
            const int w_lo = std::max(0, pad - b);
            const int w_hi = std::min(W, W + pad - b);
            T* d = dst + static_cast<std::size_t>(ih) * W;
            const T* s = src + static_cast<std::size_t>(h) * W;
            for (int w = w_lo; w < w_hi; ++w) d[w + b - pad] += s[w];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Scratch buffers reused across calls to avoid per-step allocation.
template <typename T>
struct ConvWorkspace {
  std::vector<T> cols;
  std::vector<T> product;
};

template <typename T>
void conv2d_forward(const Tensor4<T>& in, std::span<const T> weights, std::span<const T> bias,
                    const ConvGeometry& g, Tensor4<T>& out, ConvWorkspace<T>& ws) {
  if (in.shape.channels != g.in_channels) throw ShapeError("conv2d: input channel mismatch");
  if (weights.size() != g.weight_count() || bias.size() != static_cast<std::size_t>(g.out_channels)) {
    throw ShapeError("conv2d: weight or bias size mismatch");
  }
  const int N = in.batch;
  const Shape out_shape{g.out_channels, in.shape.height, in.shape.width};
  const auto plane = static_cast<Eigen::Index>(out_shape.height) * out_shape.width;
  const Eigen::Index width = N * plane;
  detail::im2col(in, g, ws.cols);
  ConstRowMap<T> w(weights.data(), g.out_channels, static_cast<Eigen::Index>(g.patch_size()));
  ConstRowMap<T> cols(ws.cols.data(), static_cast<Eigen::Index>(g.patch_size()), width);
  if (out.batch != N || out.shape != out_shape) out.reshape(N, out_shape);
  // One product per example, so an example's output never depends on where
  // it sits in the batch.
  for (int n = 0; n < N; ++n) {
    RowMap<T> y(out.example(n), g.out_channels, plane);
    y.noalias() = w * cols.middleCols(n * plane, plane);
    for (int o = 0; o < g.out_channels; ++o) y.row(o).array() += bias[o];
  }
}

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& in, std::span<const T> weights, std::span<const T> bias,
                          const ConvGeometry& g) {
  Tensor4<T> out;
  ConvWorkspace<T> ws;
  conv2d_forward(in, weights, bias, g, out, ws);
  return out;
}

template <typename T>
struct ConvGradients {
  Tensor4<T> grad_input;
  std::vector<T> grad_weights;
  std::vector<T> grad_bias;
};

// Overwrites grad_weights / grad_bias and, when requested, grad_input.
template <typename T>
void conv2d_backward(const Tensor4<T>& grad_out, const Tensor4<T>& in, std::span<const T> weights,
                     const ConvGeometry& g, std::span<T> grad_weights, std::span<T> grad_bias,
                     Tensor4<T>* grad_in, ConvWorkspace<T>& ws) {
  if (grad_out.batch != in.batch || grad_out.shape != Shape{g.out_channels, in.shape.height, in.shape.width}) {
    throw ShapeError("conv2d_backward: upstream gradient shape mismatch");
  }
  if (in.shape.channels != g.in_channels || weights.size() != g.weight_count() ||
      grad_weights.size() != g.weight_count() || grad_bias.size() != static_cast<std::size_t>(g.out_channels)) {
    throw ShapeError("conv2d_backward: parameter shape mismatch");
  }
  const int N = in.batch;
  const auto plane = static_cast<Eigen::Index>(in.shape.height) * in.shape.width;
  const Eigen::Index width = N * plane;
  const auto patch = static_cast<Eigen::Index>(g.patch_size());

  ws.product.resize(static_cast<std::size_t>(g.out_channels) * width);
  for (int o = 0; o < g.out_channels; ++o) {
    T bias_sum = T(0);
    for (int n = 0; n < N; ++n) {
      const T* src = grad_out.example(n) + o * plane;
      T* dst = ws.product.data() + static_cast<std::size_t>(o) * width + n * plane;
      for (Eigen::Index i = 0; i < plane; ++i) {
        dst[i] = src[i];
        bias_sum += src[i];
      }
    }
    grad_bias[o] = bias_sum;
  }
  detail::im2col(in, g, ws.cols);
  ConstRowMap<T> gout(ws.product.data(), g.out_channels, width);
  ConstRowMap<T> cols(ws.cols.data(), patch, width);
  RowMap<T> gw(grad_weights.data(), g.out_channels, patch);
  gw.noalias() = gout * cols.transpose();
  if (grad_in != nullptr) {
    ConstRowMap<T> w(weights.data(), g.out_channels, patch);
    RowMap<T> dcols(ws.cols.data(), patch, width);
    dcols.noalias() = w.transpose() * gout;
    if (grad_in->batch != N || grad_in->shape != in.shape) grad_in->reshape(N, in.shape);
    detail::col2im(ws.cols, g, *grad_in);
  }
}

template <typename T>
ConvGradients<T> conv2d_backward(const Tensor4<T>& grad_out, const Tensor4<T>& in, std::span<const T> weights,
                                 const ConvGeometry& g) {
  ConvGradients<T> grads;
  grads.grad_weights.resize(g.weight_count());
  grads.grad_bias.resize(g.out_channels);
  ConvWorkspace<T> ws;
  conv2d_backward<T>(grad_out, in, weights, g, grads.grad_weights, grads.grad_bias, &grads.grad_input, ws);
  return grads;
}

// Flat input index of each window's maximum.
struct PoolCache {
  Shape input_shape;
  int batch = 0;
  std::vector<std::int32_t> argmax;
};

template <typename T>
void maxpool_forward(const Tensor4<T>& in, Tensor4<T>& out, PoolCache& cache) {
  const int N = in.batch, C = in.shape.channels, H = in.shape.height, W = in.shape.width;
  if (H < 1 || W < 1) throw ShapeError("maxpool: empty spatial extent");
  const int OH = pooled_side(H), OW = pooled_side(W);
  const int pad_h = pool_pad_before(H), pad_w = pool_pad_before(W);
  const Shape out_shape{C, OH, OW};
  if (out.batch != N || out.shape != out_shape) out.reshape(N, out_shape);
  cache.input_shape = in.shape;
  cache.batch = N;
  cache.argmax.resize(out.size());
  std::size_t o = 0;
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int oh = 0; oh < OH; ++oh) {
        const int h0 = std::max(oh * kPoolStride - pad_h, 0);
        const int h1 = std::min(oh * kPoolStride - pad_h + kPoolKernel, H);
        for (int ow = 0; ow < OW; ++ow, ++o) {
          const int w0 = std::max(ow * kPoolStride - pad_w, 0);
          const int w1 = std::min(ow * kPoolStride - pad_w + kPoolKernel, W);
          std::size_t best = base + static_cast<std::size_t>(h0) * W + w0;
          T best_value = in.values[best];
          for (int h = h0; h < h1; ++h) {
            for (int w = w0; w < w1; ++w) {
              const std::size_t idx = base + static_cast<std::size_t>(h) * W + w;
              if (in.values[idx] > best_value) {
                best_value = in.values[idx];
                best = idx;
              }
            }
          }
          out.values[o] = best_value;
          cache.argmax[o] = static_cast<std::int32_t>(best);
        }
      }
    }
  }
}

template <typename T>
Tensor4<T> maxpool_forward(const Tensor4<T>& in, PoolCache& cache) {
  Tensor4<T> out;
  maxpool_forward(in, out, cache);
  return out;
}

template <typename T>
void maxpool_backward(const Tensor4<T>& grad_out, const PoolCache& cache, Tensor4<T>& grad_in) {
  if (grad_out.size() != cache.argmax.size() || grad_out.batch != cache.batch) {
    throw ShapeError("maxpool_backward: stale cache");
  }
  if (grad_in.batch != cache.batch || grad_in.shape != cache.input_shape) {
    grad_in.reshape(cache.batch, cache.input_shape);
  } else {
    std::fill(grad_in.values.begin(), grad_in.values.end(), T(0));
  }
  for (std::size_t o = 0; o < cache.argmax.size(); ++o) grad_in.values[cache.argmax[o]] += grad_out.values[o];
}

template <typename T>
Tensor4<T> maxpool_backward(const Tensor4<T>& grad_out, const PoolCache& cache) {
  Tensor4<T> grad_in;
  maxpool_backward(grad_out, cache, grad_in);
  return grad_in;
}

template <typename T>
void relu_forward(const Tensor4<T>& in, Tensor4<T>& out) {
  if (out.batch != in.batch || out.shape != in.shape) out.reshape(in.batch, in.shape);
  for (std::size_t i = 0; i < in.size(); ++i) out.values[i] = in.values[i] > T(0) ? in.values[i] : T(0);
}

// Subgradient at exactly 0 is 0.
template <typename T>
void relu_backward(const Tensor4<T>& grad_out, const Tensor4<T>& in, Tensor4<T>& grad_in) {
  if (grad_out.size() != in.size()) throw ShapeError("relu_backward: shape mismatch");
  if (grad_in.batch != in.batch || grad_in.shape != in.shape) grad_in.reshape(in.batch, in.shape);
  for (std::size_t i = 0; i < in.size(); ++i) grad_in.values[i] = in.values[i] > T(0) ? grad_out.values[i] : T(0);
}

// Affine map on flattened examples: out = in * W^T + b, W is (units x fan_in).
template <typename T>
void dense_forward(const Tensor4<T>& in, std::span<const T> weights, std::span<const T> bias, int units,
                   Tensor4<T>& out) {
  const auto fan_in = static_cast<Eigen::Index>(in.per_example());
  if (weights.size() != static_cast<std::size_t>(units) * fan_in || bias.size() != static_cast<std::size_t>(units)) {
    throw ShapeError("dense: weight or bias size mismatch");
  }
  const Shape out_shape{units, 1, 1};
  if (out.batch != in.batch || out.shape != out_shape) out.reshape(in.batch, out_shape);
  // Fixed summation order: the result depends neither on the example's
  // position in the batch nor on buffer alignment.
  for (int n = 0; n < in.batch; ++n) {
    const T* x = in.example(n);
    T* y = out.example(n);
    for (int u = 0; u < units; ++u) {
      y[u] = bias[u] + detail::dot_fixed_order(x, weights.data() + static_cast<std::size_t>(u) * fan_in,
                                               static_cast<std::size_t>(fan_in));
    }
  }
}

template <typename T>
void dense_backward(const Tensor4<T>& grad_out, const Tensor4<T>& in, std::span<const T> weights, int units,
                    std::span<T> grad_weights, std::span<T> grad_bias, Tensor4<T>* grad_in) {
  const auto fan_in = static_cast<Eigen::Index>(in.per_example());
  if (grad_out.batch != in.batch || grad_out.per_example() != static_cast<std::size_t>(units)) {
    throw ShapeError("dense_backward: upstream gradient shape mismatch");
  }
  if (grad_weights.size() != static_cast<std::size_t>(units) * fan_in ||
      grad_bias.size() != static_cast<std::size_t>(units)) {
    throw ShapeError("dense_backward: parameter shape mismatch");
  }
  ConstRowMap<T> x(in.values.data(), in.batch, fan_in);
  ConstRowMap<T> gy(grad_out.values.data(), in.batch, units);
  RowMap<T> gw(grad_weights.data(), units, fan_in);
  gw.noalias() = gy.transpose() * x;
  // Plain loop: Eigen's vectorized partial reduction sums in an order that
  // depends on buffer alignment.
  std::fill(grad_bias.begin(), grad_bias.end(), T(0));
  for (int n = 0; n < in.batch; ++n) {
    const T* row = grad_out.example(n);
    for (int u = 0; u < units; ++u) grad_bias[u] += row[u];
  }
  if (grad_in != nullptr) {
    if (grad_in->batch != in.batch || grad_in->shape != in.shape) grad_in->reshape(in.batch, in.shape);
    ConstRowMap<T> w(weights.data(), units, fan_in);
    RowMap<T> gx(grad_in->values.data(), in.batch, fan_in);
    gx.noalias() = gy * w;
  }
}

template <typename T>
struct LossAndGrad {
  T loss = T(0);
  Tensor4<T> grad_logits;
};

// Mean softmax cross-entropy over the batch; grad = (softmax - onehot) / N.
template <typename T>
LossAndGrad<T> softmax_xent(const Tensor4<T>& logits, std::span<const int> labels) {
  const int N = logits.batch;
  const int classes = static_cast<int>(logits.per_example());
  if (labels.size() != static_cast<std::size_t>(N)) throw ShapeError("softmax_xent: label count mismatch");
  LossAndGrad<T> r;
  r.grad_logits.reshape(N, logits.shape);
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    const int y = labels[n];
    if (y < 0 || y >= classes) throw InvalidArgument("softmax_xent: label out of range");
    const T* z = logits.example(n);
    T* g = r.grad_logits.example(n);
    const T shift = *std::max_element(z, z + classes);
    T denom = T(0);
    for (int c = 0; c < classes; ++c) {
      g[c] = std::exp(z[c] - shift);
      denom += g[c];
    }
    const T log_denom = std::log(denom);
    total += static_cast<double>(log_denom - (z[y] - shift));
    for (int c = 0; c < classes; ++c) g[c] = (g[c] / denom - (c == y ? T(1) : T(0))) / static_cast<T>(N);
  }
  r.loss = static_cast<T>(total / N);
  if (!std::isfinite(r.loss)) throw NumericFault("non-finite loss");
  return r;
}

// Index of the largest logit per example; ties go to the lower class index.
template <typename T>
std::vector<int> argmax_rows(const Tensor4<T>& logits) {
  std::vector<int> out(logits.batch);
  const int classes = static_cast<int>(logits.per_example());
  for (int n = 0; n < logits.batch; ++n) {
    const T* z = logits.example(n);
    out[n] = static_cast<int>(std::max_element(z, z + classes) - z);
  }
  return out;
}

}  // namespace psvrt::nn
