#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "psvrt/error.hpp"
#include "psvrt/nn/ops.hpp"
#include "psvrt/nn/tensor.hpp"

namespace psvrt::nn {

enum class LayerKind { Conv, Pool, ReLU, Dense, Classifier };

// `units` is the output channel count for Conv, the width for Dense and the
// class count for Classifier. Convs always use stride 1; pools are 3x3/2.
struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  int units = 0;
  int kernel = 0;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline LayerSpec conv(int out_channels, int kernel) { return {LayerKind::Conv, out_channels, kernel}; }
inline LayerSpec pool() { return {LayerKind::Pool, 0, kPoolKernel}; }
inline LayerSpec relu() { return {LayerKind::ReLU, 0, 0}; }
inline LayerSpec dense(int units) { return {LayerKind::Dense, units, 0}; }
inline LayerSpec classifier(int classes = 2) { return {LayerKind::Classifier, classes, 0}; }

struct NetworkSpec {
  std::string name;
  int input_side = 0;
  int input_channels = 1;
  std::vector<LayerSpec> layers;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

struct ResolvedLayer {
  LayerSpec spec;
  Shape input;
  Shape output;
  std::size_t weight_count = 0;
  std::size_t bias_count = 0;

  std::size_t param_count() const { return weight_count + bias_count; }
};

// Walks the layer list and fixes every intermediate shape.
inline std::vector<ResolvedLayer> resolve(const NetworkSpec& spec) {
  if (spec.input_side < 1 || spec.input_channels < 1) throw ShapeError("network input must be at least 1x1x1");
  std::vector<ResolvedLayer> out;
  Shape shape{spec.input_channels, spec.input_side, spec.input_side};
  for (const auto& layer : spec.layers) {
    ResolvedLayer r{layer, shape, shape, 0, 0};
    switch (layer.kind) {
      case LayerKind::Conv:
        if (layer.units < 1 || layer.kernel < 1) throw ShapeError("conv needs positive filters and kernel");
        r.output = {layer.units, shape.height, shape.width};
        r.weight_count = static_cast<std::size_t>(layer.units) * shape.channels * layer.kernel * layer.kernel;
        r.bias_count = layer.units;
        break;
      case LayerKind::Pool:
        r.output = {shape.channels, pooled_side(shape.height), pooled_side(shape.width)};
        break;
      case LayerKind::ReLU:
        break;
      case LayerKind::Dense:
      case LayerKind::Classifier:
        if (layer.units < 1) throw ShapeError("dense layer needs positive width");
        r.output = {layer.units, 1, 1};
        r.weight_count = static_cast<std::size_t>(layer.units) * shape.size();
        r.bias_count = layer.units;
        break;
    }
    if (r.output.height < 1 || r.output.width < 1) throw ShapeError("spatial collapse in " + spec.name);
    shape = r.output;
    out.push_back(r);
  }
  if (out.empty() || out.back().spec.kind != LayerKind::Classifier) {
    throw ShapeError("network must end with a classifier layer");
  }
  return out;
}

inline std::size_t param_count(const NetworkSpec& spec) {
  std::size_t total = 0;
  for (const auto& r : resolve(spec)) total += r.param_count();
  return total;
}

inline Shape output_shape(const NetworkSpec& spec) { return resolve(spec).back().output; }

// Line-oriented text form:
//   network <name>
//   input <side> <channels>
//   conv <filters> <kernel> | pool | relu | dense <units> | classifier <classes>
//   end
inline std::string to_text(const NetworkSpec& spec) {
  std::ostringstream os;
  os << "network " << spec.name << '\n' << "input " << spec.input_side << ' ' << spec.input_channels << '\n';
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::Conv: os << "conv " << l.units << ' ' << l.kernel << '\n'; break;
      case LayerKind::Pool: os << "pool\n"; break;
      case LayerKind::ReLU: os << "relu\n"; break;
      case LayerKind::Dense: os << "dense " << l.units << '\n'; break;
      case LayerKind::Classifier: os << "classifier " << l.units << '\n'; break;
    }
  }
  os << "end\n";
  return os.str();
}

inline NetworkSpec from_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  NetworkSpec spec;
  bool header = false, ended = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "network") {
      ls >> spec.name;
      header = true;
    } else if (word == "input") {
      ls >> spec.input_side >> spec.input_channels;
    } else if (word == "conv") {
      LayerSpec l = conv(0, 0);
      ls >> l.units >> l.kernel;
      spec.layers.push_back(l);
    } else if (word == "pool") {
      spec.layers.push_back(pool());
    } else if (word == "relu") {
      spec.layers.push_back(relu());
    } else if (word == "dense") {
      LayerSpec l = dense(0);
      ls >> l.units;
      spec.layers.push_back(l);
    } else if (word == "classifier") {
      LayerSpec l = classifier(0);
      ls >> l.units;
      spec.layers.push_back(l);
    } else if (word == "end") {
      ended = true;
      break;
    } else {
      throw FormatError("unknown network spec line: " + line);
    }
    if (ls.fail()) throw FormatError("malformed network spec line: " + line);
  }
  if (!header || !ended) throw FormatError("incomplete network spec text");
  return spec;
}

}  // namespace psvrt::nn
