#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "psvrt/error.hpp"
#include "psvrt/nn/adam.hpp"
#include "psvrt/nn/init.hpp"
#include "psvrt/nn/ops.hpp"
#include "psvrt/nn/spec.hpp"
#include "psvrt/nn/tensor.hpp"
#include "psvrt/rng.hpp"

namespace psvrt::nn {

inline constexpr std::uint64_t kInitStream = 0x1417;

// A compiled NetworkSpec: parameters, gradients and the activations cached
// by the last forward pass. Not safe for concurrent use; independent
// instances are.
template <typename T>
class Network {
 public:
  Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
    const auto resolved = resolve(spec_);
    Rng rng(seed, kInitStream);
    for (const auto& r : resolved) {
      Layer layer;
      layer.resolved = r;
      layer.weights.assign(r.weight_count, T(0));
      layer.bias.assign(r.bias_count, T(0));
      layer.grad_weights.assign(r.weight_count, T(0));
      layer.grad_bias.assign(r.bias_count, T(0));
      if (r.spec.kind == LayerKind::Conv) {
        layer.geometry = {r.input.channels, r.spec.units, r.spec.kernel};
        const auto area = static_cast<std::size_t>(r.spec.kernel) * r.spec.kernel;
        xavier_init<T>(rng, r.input.channels * area, r.spec.units * area, layer.weights);
      } else if (r.spec.kind == LayerKind::Dense || r.spec.kind == LayerKind::Classifier) {
        xavier_init<T>(rng, r.input.size(), static_cast<std::size_t>(r.spec.units), layer.weights);
      }
      layers_.push_back(std::move(layer));
    }
    activations_.resize(layers_.size() + 1);
    gradients_.resize(layers_.size() + 1);
  }

  const NetworkSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  Shape input_shape() const { return {spec_.input_channels, spec_.input_side, spec_.input_side}; }
  std::size_t layer_count() const { return layers_.size(); }
  const ResolvedLayer& layer(std::size_t i) const { return layers_[i].resolved; }

  std::size_t param_count() const {
    std::size_t total = 0;
    for (const auto& l : layers_) total += l.weights.size() + l.bias.size();
    return total;
  }

  // Weight then bias block for each parameterized layer, in layer order.
  std::vector<ParamBlock<T>> parameters() {
    std::vector<ParamBlock<T>> blocks;
    for (auto& l : layers_) {
      if (l.weights.empty()) continue;
      blocks.push_back({std::span<T>(l.weights), std::span<T>(l.grad_weights)});
      blocks.push_back({std::span<T>(l.bias), std::span<T>(l.grad_bias)});
    }
    return blocks;
  }

  const Tensor4<T>& forward(const Tensor4<T>& input) {
    if (input.shape != input_shape()) throw ShapeError("network input shape mismatch");
    activations_[0] = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Layer& l = layers_[i];
      const Tensor4<T>& in = activations_[i];
      Tensor4<T>& out = activations_[i + 1];
      switch (l.resolved.spec.kind) {
        case LayerKind::Conv:
          conv2d_forward<T>(in, l.weights, l.bias, l.geometry, out, workspace_);
          break;
        case LayerKind::Pool:
          maxpool_forward(in, out, l.pool);
          break;
        case LayerKind::ReLU:
          relu_forward(in, out);
          break;
        case LayerKind::Dense:
        case LayerKind::Classifier:
          dense_forward<T>(in, l.weights, l.bias, l.resolved.spec.units, out);
          break;
      }
      require_finite(out, "forward pass");
    }
    return activations_.back();
  }

  const Tensor4<T>& logits() const { return activations_.back(); }

  // Backpropagates d(loss)/d(logits) through the cached forward pass and
  // overwrites every parameter gradient.
  void backward(const Tensor4<T>& grad_logits) {
    if (grad_logits.batch != activations_.back().batch || grad_logits.shape != activations_.back().shape) {
      throw ShapeError("backward: gradient does not match last forward pass");
    }
    gradients_.back() = grad_logits;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      Layer& l = layers_[i];
      const Tensor4<T>& in = activations_[i];
      const Tensor4<T>& g_out = gradients_[i + 1];
      Tensor4<T>* g_in = i > 0 ? &gradients_[i] : nullptr;
      switch (l.resolved.spec.kind) {
        case LayerKind::Conv:
          conv2d_backward<T>(g_out, in, l.weights, l.geometry, l.grad_weights, l.grad_bias, g_in, workspace_);
          break;
        case LayerKind::Pool:
          if (g_in) maxpool_backward(g_out, l.pool, *g_in);
          break;
        case LayerKind::ReLU:
          if (g_in) relu_backward(g_out, in, *g_in);
          break;
        case LayerKind::Dense:
        case LayerKind::Classifier:
          dense_backward<T>(g_out, in, l.weights, l.resolved.spec.units, l.grad_weights, l.grad_bias, g_in);
          break;
      }
    }
  }

  // Forward, mean cross-entropy, backward. Returns the loss.
  T loss_and_backward(const Tensor4<T>& input, std::span<const int> labels) {
    forward(input);
    auto lg = softmax_xent(activations_.back(), labels);
    backward(lg.grad_logits);
    return lg.loss;
  }

  T loss(const Tensor4<T>& input, std::span<const int> labels) {
    forward(input);
    return softmax_xent(activations_.back(), labels).loss;
  }

  // Hash of the piecewise-linear regime of the last forward pass: every ReLU
  // on/off bit and every pool argmax. Equal signatures mean the loss is
  // smooth along the segment between the two parameter settings.
  std::uint64_t kink_signature() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) { h = (h ^ v) * 0x100000001b3ULL; };
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto kind = layers_[i].resolved.spec.kind;
      if (kind == LayerKind::ReLU) {
        for (T v : activations_[i].values) mix(v > T(0));
      } else if (kind == LayerKind::Pool) {
        for (auto a : layers_[i].pool.argmax) mix(static_cast<std::uint32_t>(a));
      }
    }
    return h;
  }

 private:
  struct Layer {
    ResolvedLayer resolved;
    ConvGeometry geometry;
    std::vector<T> weights;
    std::vector<T> bias;
    std::vector<T> grad_weights;
    std::vector<T> grad_bias;
    PoolCache pool;
  };

  NetworkSpec spec_;
  std::uint64_t seed_;
  std::vector<Layer> layers_;
  std::vector<Tensor4<T>> activations_;
  std::vector<Tensor4<T>> gradients_;
  ConvWorkspace<T> workspace_;
};

// |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor keeps
// gradients that are zero on both sides from dividing rounding noise by ~0.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_at_kinks = 0;
};

// Compares backprop against central differences of the mean cross-entropy
// on up to `max_params` parameters, drawn uniformly without replacement
// (all of them when the network is small enough). A parameter whose +-eps
// perturbation flips a ReLU or a pool argmax straddles a kink, where the
// central difference does not estimate the derivative; it is skipped and
// counted, and the next candidate is drawn instead.
inline GradCheckResult grad_check(Network<double>& net, const Tensor4<double>& input, std::span<const int> labels,
                                  double eps, Rng& rng, std::size_t max_params = 1000) {
  net.loss_and_backward(input, labels);
  const auto base = net.kink_signature();
  auto blocks = net.parameters();
  struct Ref {
    std::size_t block;
    std::size_t index;
  };
  std::vector<Ref> refs;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t i = 0; i < blocks[b].values.size(); ++i) refs.push_back({b, i});
  }
  std::vector<double> analytic;
  analytic.reserve(refs.size());
  for (const auto& r : refs) analytic.push_back(blocks[r.block].grads[r.index]);

  GradCheckResult result;
  for (std::size_t i = 0; i < refs.size() && result.checked < max_params; ++i) {
    // Lazy Fisher-Yates: position i receives a uniform pick from the rest.
    const std::size_t pick = i + rng.below(refs.size() - i);
    std::swap(refs[i], refs[pick]);
    std::swap(analytic[i], analytic[pick]);
    double& p = blocks[refs[i].block].values[refs[i].index];
    const double saved = p;
    p = saved + eps;
    const double plus = net.loss(input, labels);
    const bool smooth_plus = net.kink_signature() == base;
    p = saved - eps;
    const double minus = net.loss(input, labels);
    const bool smooth_minus = net.kink_signature() == base;
    p = saved;
    if (!smooth_plus || !smooth_minus) {
      ++result.skipped_at_kinks;
      continue;
    }
    const double numeric = (plus - minus) / (2 * eps);
    result.max_relative_error = std::max(result.max_relative_error, relative_error(analytic[i], numeric));
    ++result.checked;
  }
  return result;
}

// Adds U(-scale, scale) to every bias. Freshly initialized biases are zero,
// which puts blank-image activations exactly on the ReLU kink; gradient
// checks jitter them first.
template <typename T>
void jitter_biases(Network<T>& net, Rng& rng, double scale) {
  auto blocks = net.parameters();
  for (std::size_t b = 1; b < blocks.size(); b += 2) {
    for (auto& v : blocks[b].values) v += static_cast<T>(rng.uniform(-scale, scale));
  }
}

}  // namespace psvrt::nn
