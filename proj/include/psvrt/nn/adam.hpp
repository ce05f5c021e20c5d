#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "psvrt/error.hpp"

namespace psvrt::nn {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::int64_t step = 0;
};

template <typename T>
struct ParamBlock {
  std::span<T> values;
  std::span<T> grads;
};

// One bias-corrected Adam update over every block. Moments are allocated on
// the first call. Gradients are validated before anything is modified.
template <typename T>
void adam_step(std::span<const ParamBlock<T>> blocks, AdamState<T>& state) {
  for (const auto& b : blocks) {
    if (b.values.size() != b.grads.size()) throw ShapeError("adam_step: parameter/gradient size mismatch");
    for (T g : b.grads) {
      if (!std::isfinite(g)) throw NumericFault("non-finite gradient in adam_step");
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& b : blocks) {
      state.first_moment.emplace_back(b.values.size(), T(0));
      state.second_moment.emplace_back(b.values.size(), T(0));
    }
  }
  if (state.first_moment.size() != blocks.size()) throw ShapeError("adam_step: block count changed");

  const AdamConfig& c = state.config;
  ++state.step;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const T step_size = static_cast<T>(c.learning_rate / correction1);
  const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(correction2));
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2), eps = static_cast<T>(c.epsilon);

  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != blocks[i].values.size()) throw ShapeError("adam_step: moment shape mismatch");
    T* p = blocks[i].values.data();
    const T* g = blocks[i].grads.data();
    for (std::size_t j = 0; j < m.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      p[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_c2 + eps);
    }
  }
}

}  // namespace psvrt::nn
