#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "psvrt/error.hpp"

namespace psvrt::nn {

// Per-example feature shape (channels, height, width).
struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const { return static_cast<std::size_t>(channels) * height * width; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

// Dense NCHW tensor. Dense-layer activations use H = W = 1.
template <typename T>
struct Tensor4 {
  int batch = 0;
  Shape shape;
  std::vector<T> values;

  Tensor4() = default;
  Tensor4(int n, Shape s, T fill = T(0)) : batch(n), shape(s), values(static_cast<std::size_t>(n) * s.size(), fill) {}

  std::size_t size() const { return values.size(); }
  std::size_t per_example() const { return shape.size(); }

  T* example(int i) { return values.data() + static_cast<std::size_t>(i) * per_example(); }
  const T* example(int i) const { return values.data() + static_cast<std::size_t>(i) * per_example(); }

  T& at(int n, int c, int h, int w) {
    return values[((static_cast<std::size_t>(n) * shape.channels + c) * shape.height + h) * shape.width + w];
  }
  T at(int n, int c, int h, int w) const {
    return values[((static_cast<std::size_t>(n) * shape.channels + c) * shape.height + h) * shape.width + w];
  }

  void reshape(int n, Shape s) {
    batch = n;
    shape = s;
    values.assign(static_cast<std::size_t>(n) * s.size(), T(0));
  }
};

template <typename T>
void require_finite(std::span<const T> values, const char* where) {
  for (T v : values) {
    if (!std::isfinite(v)) throw NumericFault(std::string("non-finite value in ") + where);
  }
}

template <typename T>
void require_finite(const Tensor4<T>& t, const char* where) {
  require_finite(std::span<const T>(t.values), where);
}

}  // namespace psvrt::nn
