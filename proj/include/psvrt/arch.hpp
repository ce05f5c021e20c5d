#pragma once

// Builders for the evaluated architectures. Every conv is followed by ReLU;
// the head is three ReLU dense layers and a 2-way classifier.

#include <cstdio>
#include <string>
#include <vector>

#include "psvrt/error.hpp"
#include "psvrt/nn/spec.hpp"

namespace psvrt::arch {

using nn::NetworkSpec;

inline constexpr int kDefaultInputSide = 60;

namespace detail {

inline void add_head(NetworkSpec& spec, int units) {
  for (int i = 0; i < 3; ++i) {
    spec.layers.push_back(nn::dense(units));
    spec.layers.push_back(nn::relu());
  }
  spec.layers.push_back(nn::classifier(2));
}

inline void add_conv_block(NetworkSpec& spec, int filters, int kernel, bool pooled) {
  spec.layers.push_back(nn::conv(filters, kernel));
  spec.layers.push_back(nn::relu());
  if (pooled) spec.layers.push_back(nn::pool());
}

// One block per entry, filters doubling from `first_filters`; the first conv
// uses `first_kernel`, the rest 2x2.
inline NetworkSpec doubling_stack(std::string name, int input_side, int depth, int first_filters, int first_kernel,
                                  int head_units) {
  NetworkSpec spec{std::move(name), input_side, 1, {}};
  int filters = first_filters;
  for (int i = 0; i < depth; ++i) {
    add_conv_block(spec, filters, i == 0 ? first_kernel : 2, true);
    filters *= 2;
  }
  add_head(spec, head_units);
  return spec;
}

}  // namespace detail

// First-layer filter count paired with each first-layer kernel side.
inline int svrt_first_filters(int first_kernel) {
  switch (first_kernel) {
    case 2: return 6;
    case 4: return 12;
    case 6: return 18;
    default: throw InvalidArgument("svrt_grid: first kernel must be 2, 4 or 6");
  }
}

inline NetworkSpec svrt_grid(int depth, int first_kernel, int input_side = kDefaultInputSide) {
  if (depth != 2 && depth != 4 && depth != 6) throw InvalidArgument("svrt_grid: depth must be 2, 4 or 6");
  return detail::doubling_stack("svrt-d" + std::to_string(depth) + "-k" + std::to_string(first_kernel), input_side,
                                depth, svrt_first_filters(first_kernel), first_kernel, 1024);
}

inline NetworkSpec psvrt_baseline(int input_side = kDefaultInputSide) {
  return detail::doubling_stack("psvrt-baseline", input_side, 4, 8, 4, 256);
}

// Baseline depth with doubled filters and 4x the dense width.
inline NetworkSpec wide_control(int input_side = kDefaultInputSide) {
  return detail::doubling_stack("wide-control", input_side, 4, 16, 4, 1024);
}

// Each baseline conv is followed by an extra 2x2 conv with the same filter
// count. Pools stay at the four original positions.
inline NetworkSpec deep_control(int input_side = kDefaultInputSide) {
  NetworkSpec spec{"deep-control", input_side, 1, {}};
  int filters = 8;
  for (int i = 0; i < 4; ++i) {
    detail::add_conv_block(spec, filters, i == 0 ? 4 : 2, false);
    detail::add_conv_block(spec, filters, 2, true);
    filters *= 2;
  }
  detail::add_head(spec, 256);
  return spec;
}

inline std::vector<std::string> known_architectures() {
  std::vector<std::string> names = {"psvrt-baseline", "wide-control", "deep-control"};
  for (int depth : {2, 4, 6}) {
    for (int kernel : {2, 4, 6}) names.push_back("svrt-d" + std::to_string(depth) + "-k" + std::to_string(kernel));
  }
  return names;
}

inline NetworkSpec by_name(const std::string& name, int input_side = kDefaultInputSide) {
  if (name == "psvrt-baseline" || name == "baseline") return psvrt_baseline(input_side);
  if (name == "wide-control" || name == "wide") return wide_control(input_side);
  if (name == "deep-control" || name == "deep") return deep_control(input_side);
  int depth = 0, kernel = 0;
  char tail = 0;
  if (std::sscanf(name.c_str(), "svrt-d%d-k%d%c", &depth, &kernel, &tail) == 2) {
    return svrt_grid(depth, kernel, input_side);
  }
  throw InvalidArgument("unknown architecture '" + name + "'");
}

inline std::size_t param_count(const NetworkSpec& spec) { return nn::param_count(spec); }

inline int conv_layer_count(const NetworkSpec& spec) {
  int count = 0;
  for (const auto& l : spec.layers) count += l.kind == nn::LayerKind::Conv;
  return count;
}

inline std::vector<int> conv_filters(const NetworkSpec& spec) {
  std::vector<int> out;
  for (const auto& l : spec.layers) {
    if (l.kind == nn::LayerKind::Conv) out.push_back(l.units);
  }
  return out;
}

}  // namespace psvrt::arch
