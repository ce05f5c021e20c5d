#pragma once

#include <cmath>
#include <cstddef>
#include <span>

#include "psvrt/error.hpp"
#include "psvrt/rng.hpp"

namespace psvrt::nn {

inline double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

// Glorot uniform on [-bound, bound].
template <typename T>
void xavier_init(Rng& rng, std::size_t fan_in, std::size_t fan_out, std::span<T> out) {
  if (fan_in == 0 || fan_out == 0) throw InvalidArgument("xavier_init: fans must be positive");
  const double bound = xavier_bound(fan_in, fan_out);
  for (auto& v : out) v = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace psvrt::nn
