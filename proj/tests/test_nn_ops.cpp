#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>

#include "psvrt/nn/adam.hpp"
#include "psvrt/nn/init.hpp"
#include "psvrt/nn/ops.hpp"
#include "psvrt/rng.hpp"
#include "support/oracles.hpp"

using namespace psvrt;
using namespace psvrt::nn;

namespace {

constexpr double kStep = 1e-5;
constexpr double kFdTolerance = 1e-6;

Tensor4<double> random_tensor(Rng& rng, int n, Shape s) {
  Tensor4<double> t(n, s);
  for (auto& v : t.values) v = rng.uniform(-1.0, 1.0);
  return t;
}

std::vector<double> random_vector(Rng& rng, std::size_t size) {
  std::vector<double> v(size);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// Central-difference gradient of f with respect to every entry of `x`.
std::vector<double> numeric_gradient(std::vector<double>& x, const std::function<double()>& f) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + kStep;
    const double plus = f();
    x[i] = saved - kStep;
    const double minus = f();
    x[i] = saved;
    g[i] = (plus - minus) / (2 * kStep);
  }
  return g;
}

// Relative error with the denominator floored at kScaleFloor. Central
// differences of an O(10) loss carry ~1e-10 of rounding noise at this step,
// so below the floor the bound acts as an absolute 1e-9.
constexpr double kScaleFloor = 1e-3;

double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), kScaleFloor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

}  // namespace

TEST(Conv, HandComputedExample) {
  // 2x2 input [[1,2],[3,4]], 2x2 kernel of ones, zero padding after:
  // out = [[1+2+3+4, 2+4], [3+4, 4]].
  Tensor4<double> in(1, {1, 2, 2});
  in.values = {1, 2, 3, 4};
  const std::vector<double> w = {1, 1, 1, 1}, b = {0};
  const auto out = conv2d_forward<double>(in, w, b, ConvGeometry{1, 1, 2});
  EXPECT_EQ(out.values, (std::vector<double>{10, 6, 7, 4}));

  // Single-pixel input with that kernel picks out the top-left tap only.
  Tensor4<double> one(1, {1, 2, 2});
  one.values = {1, 0, 0, 0};
  const std::vector<double> taps = {4, 2, 2, 1};
  const auto r = conv2d_forward<double>(one, taps, b, ConvGeometry{1, 1, 2});
  EXPECT_EQ(r.values, (std::vector<double>{4, 0, 0, 0}));
}

TEST(Conv, IdentityKernelAndBias) {
  Rng rng(1);
  const auto in = random_tensor(rng, 2, {1, 6, 6});
  std::vector<double> w(9, 0.0);
  w[4] = 1.0;
  const std::vector<double> b = {0.25};
  const auto out = conv2d_forward<double>(in, w, b, ConvGeometry{1, 1, 3});
  for (std::size_t i = 0; i < in.size(); ++i) EXPECT_DOUBLE_EQ(out.values[i], in.values[i] + 0.25);
}

TEST(Conv, MatchesDirectLoopOracle) {
  Rng rng(2);
  for (int kernel : {1, 2, 3, 4, 6}) {
    const auto in = random_tensor(rng, 3, {2, 7, 5});
    const auto w = random_vector(rng, 3 * 2 * kernel * kernel);
    const auto b = random_vector(rng, 3);
    const auto out = conv2d_forward<double>(in, w, b, ConvGeometry{2, 3, kernel});
    const auto ref = oracle::conv(in, w, b, 3, kernel);
    ASSERT_EQ(out.shape, ref.shape);
    for (std::size_t i = 0; i < out.size(); ++i) ASSERT_NEAR(out.values[i], ref.values[i], 1e-12) << kernel;
  }
}

TEST(Conv, ZeroUpstreamGivesZeroGradients) {
  Rng rng(3);
  const auto in = random_tensor(rng, 2, {2, 5, 5});
  const auto w = random_vector(rng, 3 * 2 * 4);
  Tensor4<double> zero(2, {3, 5, 5});
  const auto g = conv2d_backward<double>(zero, in, w, ConvGeometry{2, 3, 2});
  for (double v : g.grad_weights) EXPECT_EQ(v, 0.0);
  for (double v : g.grad_bias) EXPECT_EQ(v, 0.0);
  for (double v : g.grad_input.values) EXPECT_EQ(v, 0.0);
}

TEST(Conv, GradientsMatchFiniteDifferences) {
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(100 + trial);
    const int kernel = 2 + trial % 3;
    const ConvGeometry g{2, 3, kernel};
    auto in = random_tensor(rng, 2, {2, 5, 5});
    auto w = random_vector(rng, g.weight_count());
    auto b = random_vector(rng, 3);
    const auto probe = random_vector(rng, 2 * 3 * 25);
    // loss = sum(out * probe) so d loss / d out = probe.
    auto loss = [&] { return dot(conv2d_forward<double>(in, w, b, g).values, probe); };
    Tensor4<double> upstream(2, {3, 5, 5});
    upstream.values = probe;
    const auto grads = conv2d_backward<double>(upstream, in, w, g);
    ASSERT_LT(max_relative_error(grads.grad_weights, numeric_gradient(w, loss)), kFdTolerance);
    ASSERT_LT(max_relative_error(grads.grad_bias, numeric_gradient(b, loss)), kFdTolerance);
    ASSERT_LT(max_relative_error(grads.grad_input.values, numeric_gradient(in.values, loss)), kFdTolerance);
  }
}

TEST(Conv, BackwardIsLinearInUpstream) {
  Rng rng(4);
  const ConvGeometry g{2, 2, 3};
  const auto in = random_tensor(rng, 2, {2, 6, 6});
  const auto w = random_vector(rng, g.weight_count());
  const auto a = random_tensor(rng, 2, {2, 6, 6});
  const auto c = random_tensor(rng, 2, {2, 6, 6});
  Tensor4<double> sum = a;
  for (std::size_t i = 0; i < sum.size(); ++i) sum.values[i] += c.values[i];
  const auto ga = conv2d_backward<double>(a, in, w, g);
  const auto gc = conv2d_backward<double>(c, in, w, g);
  const auto gs = conv2d_backward<double>(sum, in, w, g);
  for (std::size_t i = 0; i < gs.grad_weights.size(); ++i) {
    EXPECT_NEAR(gs.grad_weights[i], ga.grad_weights[i] + gc.grad_weights[i], 1e-12);
  }
  for (std::size_t i = 0; i < gs.grad_input.size(); ++i) {
    EXPECT_NEAR(gs.grad_input.values[i], ga.grad_input.values[i] + gc.grad_input.values[i], 1e-12);
  }
}

TEST(Conv, ShapeMismatchThrows) {
  Tensor4<double> in(1, {2, 4, 4});
  const std::vector<double> w(4), b(1);
  EXPECT_THROW(conv2d_forward<double>(in, w, b, ConvGeometry{1, 1, 2}), ShapeError);
}

TEST(MaxPool, ShapeChain) {
  EXPECT_EQ(pooled_side(60), 30);
  EXPECT_EQ(pooled_side(30), 15);
  EXPECT_EQ(pooled_side(15), 8);
  EXPECT_EQ(pooled_side(8), 4);
  EXPECT_EQ(pooled_side(1), 1);
  Tensor4<double> t(1, {1, 60, 60});
  PoolCache cache;
  for (int expected : {30, 15, 8, 4}) {
    t = maxpool_forward(t, cache);
    EXPECT_EQ(t.shape.height, expected);
    EXPECT_EQ(t.shape.width, expected);
  }
}

TEST(MaxPool, ConstantImage) {
  Tensor4<double> t(2, {3, 7, 9}, 0.75);
  PoolCache cache;
  const auto out = maxpool_forward(t, cache);
  EXPECT_EQ(out.shape, (Shape{3, 4, 5}));
  for (double v : out.values) EXPECT_EQ(v, 0.75);
}

TEST(MaxPool, IncreasingRasterPicksBottomRight) {
  // 5x5 raster 0..24; output 3x3 with one column/row of padding on each side,
  // windows cover rows {-1,0,1}, {1,2,3}, {3,4,5}.
  Tensor4<double> t(1, {1, 5, 5});
  std::iota(t.values.begin(), t.values.end(), 0.0);
  PoolCache cache;
  const auto out = maxpool_forward(t, cache);
  EXPECT_EQ(out.values, (std::vector<double>{6, 8, 9, 16, 18, 19, 21, 23, 24}));
}

TEST(MaxPool, MatchesOracleOnRandomInputs) {
  Rng rng(5);
  for (int side : {1, 2, 3, 4, 7, 8, 15, 16}) {
    const auto in = random_tensor(rng, 2, {3, side, side + 1});
    PoolCache cache;
    const auto out = maxpool_forward(in, cache);
    const auto ref = oracle::maxpool(in);
    ASSERT_EQ(out.shape, ref.shape);
    EXPECT_EQ(out.values, ref.values);
  }
}

TEST(MaxPool, TiesBreakToFirstScanPosition) {
  Tensor4<double> t(1, {1, 3, 3}, 1.0);
  PoolCache cache;
  maxpool_forward(t, cache);
  // One 2x2 output; first window spans rows/cols {0,1} with no before-padding
  // of its own beyond -1, so its first in-bounds element is index 0.
  EXPECT_EQ(cache.argmax[0], 0);
}

TEST(MaxPool, BackwardRoutesAndConservesMass) {
  Rng rng(6);
  const auto in = random_tensor(rng, 2, {2, 7, 7});
  PoolCache cache;
  const auto out = maxpool_forward(in, cache);
  Tensor4<double> zero(out.batch, out.shape);
  for (double v : maxpool_backward(zero, cache).values) EXPECT_EQ(v, 0.0);
  const auto up = random_tensor(rng, out.batch, out.shape);
  const auto grad = maxpool_backward(up, cache);
  const double in_sum = std::accumulate(grad.values.begin(), grad.values.end(), 0.0);
  const double out_sum = std::accumulate(up.values.begin(), up.values.end(), 0.0);
  EXPECT_NEAR(in_sum, out_sum, 1e-12);
}

TEST(MaxPool, GradientsMatchFiniteDifferences) {
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(200 + trial);
    auto in = random_tensor(rng, 1, {2, 7, 7});  // continuous values: ties have probability 0
    PoolCache cache;
    const auto out = maxpool_forward(in, cache);
    const auto probe = random_vector(rng, out.size());
    auto loss = [&] {
      PoolCache c;
      return dot(maxpool_forward(in, c).values, probe);
    };
    Tensor4<double> up(out.batch, out.shape);
    up.values = probe;
    const auto grad = maxpool_backward(up, cache);
    ASSERT_LT(max_relative_error(grad.values, numeric_gradient(in.values, loss)), kFdTolerance);
  }
}

TEST(Relu, ForwardBackwardAndKink) {
  Tensor4<double> in(1, {1, 1, 4});
  in.values = {-1.0, 0.0, 0.5, 2.0};
  Tensor4<double> out, grad;
  relu_forward(in, out);
  EXPECT_EQ(out.values, (std::vector<double>{0, 0, 0.5, 2.0}));
  Tensor4<double> up(1, {1, 1, 4}, 1.0);
  relu_backward(up, in, grad);
  EXPECT_EQ(grad.values, (std::vector<double>{0, 0, 1, 1}));
}

TEST(Relu, GradientsMatchFiniteDifferences) {
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(300 + trial);
    auto in = random_tensor(rng, 3, {2, 3, 3});
    for (auto& v : in.values) {
      if (std::abs(v) < 1e-3) v = 0.5;  // stay away from the kink
    }
    const auto probe = random_vector(rng, in.size());
    auto loss = [&] {
      Tensor4<double> o;
      relu_forward(in, o);
      return dot(o.values, probe);
    };
    Tensor4<double> up(in.batch, in.shape), grad;
    up.values = probe;
    relu_backward(up, in, grad);
    ASSERT_LT(max_relative_error(grad.values, numeric_gradient(in.values, loss)), kFdTolerance);
  }
}

TEST(Dense, GradientsMatchFiniteDifferences) {
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(400 + trial);
    const int units = 4;
    auto in = random_tensor(rng, 3, {2, 2, 3});
    auto w = random_vector(rng, units * 12);
    auto b = random_vector(rng, units);
    const auto probe = random_vector(rng, 3 * units);
    auto loss = [&] {
      Tensor4<double> o;
      dense_forward<double>(in, w, b, units, o);
      return dot(o.values, probe);
    };
    Tensor4<double> up(3, {units, 1, 1}), gin;
    up.values = probe;
    std::vector<double> gw(w.size()), gb(b.size());
    dense_backward<double>(up, in, w, units, gw, gb, &gin);
    ASSERT_LT(max_relative_error(gw, numeric_gradient(w, loss)), kFdTolerance);
    ASSERT_LT(max_relative_error(gb, numeric_gradient(b, loss)), kFdTolerance);
    ASSERT_LT(max_relative_error(gin.values, numeric_gradient(in.values, loss)), kFdTolerance);
  }
}

TEST(Dense, AffineHandExample) {
  Tensor4<double> in(1, {3, 1, 1});
  in.values = {1, 2, 3};
  const std::vector<double> w = {1, 0, -1, 0.5, 0.5, 0.5}, b = {10, -1};
  Tensor4<double> out;
  dense_forward<double>(in, w, b, 2, out);
  EXPECT_EQ(out.values, (std::vector<double>{8, 2}));
}

// Weights and gradients placed at every offset within a cache line: results
// must be bit-identical, or training would depend on where malloc put them.
TEST(Determinism, LayerResultsIgnoreBufferAlignment) {
  Rng rng(31);
  auto random_floats = [&rng](std::size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    return v;
  };
  Tensor4<float> in(20, {3, 9, 9}), upstream(20, {4, 9, 9}), dense_up(20, {64, 1, 1});
  in.values = random_floats(in.size());
  upstream.values = random_floats(upstream.size());
  dense_up.values = random_floats(dense_up.size());
  const ConvGeometry g{3, 4, 3};
  const int units = 64;
  const std::size_t fan_in = in.per_example();
  const auto conv_w = random_floats(g.weight_count()), conv_b = random_floats(4);
  const auto dense_w = random_floats(units * fan_in), dense_b = random_floats(units);

  std::vector<float> reference;
  for (std::size_t offset = 0; offset < 8; ++offset) {
    // A buffer holding `values` starting `offset` elements in.
    auto shifted = [offset](const std::vector<float>& values) {
      std::vector<float> buf(values.size() + 8);
      std::copy(values.begin(), values.end(), buf.begin() + offset);
      return buf;
    };
    auto at = [offset](std::vector<float>& buf, std::size_t n) { return std::span<float>(buf.data() + offset, n); };
    auto cw = shifted(conv_w), cb = shifted(conv_b), dw = shifted(dense_w), db = shifted(dense_b);
    std::vector<float> cgw(g.weight_count() + 8), cgb(4 + 8), dgw(units * fan_in + 8), dgb(units + 8);

    std::vector<float> results;
    auto take = [&results](std::span<const float> r) { results.insert(results.end(), r.begin(), r.end()); };
    Tensor4<float> out, grad_in, dense_out, dense_grad_in;
    ConvWorkspace<float> ws;
    conv2d_forward<float>(in, at(cw, g.weight_count()), at(cb, 4), g, out, ws);
    conv2d_backward<float>(upstream, in, at(cw, g.weight_count()), g, at(cgw, g.weight_count()), at(cgb, 4),
                           &grad_in, ws);
    dense_forward<float>(in, at(dw, units * fan_in), at(db, units), units, dense_out);
    dense_backward<float>(dense_up, in, at(dw, units * fan_in), units, at(dgw, units * fan_in), at(dgb, units),
                          &dense_grad_in);
    take(out.values);
    take(at(cgw, g.weight_count()));
    take(at(cgb, 4));
    take(grad_in.values);
    take(dense_out.values);
    take(at(dgw, units * fan_in));
    take(at(dgb, units));
    take(dense_grad_in.values);
    if (offset == 0) {
      reference = results;
    } else {
      ASSERT_TRUE(results == reference) << "offset " << offset;
    }
  }
}

TEST(SoftmaxXent, SymmetricCase) {
  Tensor4<double> logits(1, {2, 1, 1});
  const std::vector<int> labels = {0};
  const auto r = softmax_xent(logits, std::span<const int>(labels));
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-15);
  EXPECT_NEAR(r.grad_logits.values[0], -0.5, 1e-15);
  EXPECT_NEAR(r.grad_logits.values[1], 0.5, 1e-15);
}

TEST(SoftmaxXent, StableForLargeLogits) {
  Tensor4<double> logits(2, {2, 1, 1});
  logits.values = {1000, -1000, -1e4, 1e4};
  const std::vector<int> labels = {0, 1};
  const auto r = softmax_xent(logits, std::span<const int>(labels));
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
  for (double g : r.grad_logits.values) EXPECT_TRUE(std::isfinite(g));

  Tensor4<float> wrong(1, {2, 1, 1});
  wrong.values = {1e4f, -1e4f};
  const std::vector<int> one = {1};
  const auto f = softmax_xent(wrong, std::span<const int>(one));
  EXPECT_TRUE(std::isfinite(f.loss));
  EXPECT_NEAR(f.loss, 2e4f, 1.0f);
}

TEST(SoftmaxXent, GradientsMatchFiniteDifferences) {
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(500 + trial);
    auto logits = random_tensor(rng, 4, {2, 1, 1});
    std::vector<int> labels(4);
    for (auto& y : labels) y = static_cast<int>(rng.below(2));
    auto loss = [&] { return softmax_xent(logits, std::span<const int>(labels)).loss; };
    const auto r = softmax_xent(logits, std::span<const int>(labels));
    ASSERT_LT(max_relative_error(r.grad_logits.values, numeric_gradient(logits.values, loss)), kFdTolerance);
  }
}

TEST(SoftmaxXent, RejectsBadLabels) {
  Tensor4<double> logits(1, {2, 1, 1});
  const std::vector<int> bad = {2};
  EXPECT_THROW(softmax_xent(logits, std::span<const int>(bad)), InvalidArgument);
}

TEST(Xavier, BoundAndMoments) {
  EXPECT_DOUBLE_EQ(xavier_bound(3, 3), 1.0);
  std::vector<double> w(9);
  Rng rng(7);
  xavier_init<double>(rng, 3, 3, w);
  for (double v : w) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }

  const std::size_t fan_in = 64, fan_out = 32;
  std::vector<double> big(100'000);
  Rng rng2(8);
  xavier_init<double>(rng2, fan_in, fan_out, big);
  const double mean = std::accumulate(big.begin(), big.end(), 0.0) / big.size();
  double var = 0;
  for (double v : big) var += (v - mean) * (v - mean);
  var /= big.size();
  const double expected = 2.0 / (fan_in + fan_out);
  EXPECT_NEAR(var, expected, 0.05 * expected);

  std::vector<double> again(100'000);
  Rng rng3(8);
  xavier_init<double>(rng3, fan_in, fan_out, again);
  EXPECT_EQ(big, again);
}

TEST(Adam, FirstStepIsSignStep) {
  for (double g : {3.0, -0.02, 1e-3}) {
    std::vector<double> p = {1.0}, grad = {g};
    AdamState<double> state{AdamConfig{}, {}, {}, 0};
    const std::vector<ParamBlock<double>> blocks = {{p, grad}};
    adam_step<double>(blocks, state);
    const double lr = 1e-4, eps = 1e-8;
    const double change = p[0] - 1.0;
    // Bias-corrected moments are g and g^2, so the step is lr * g / (|g| + eps):
    // a sign step short by lr * eps / (|g| + eps). 1e-15 covers rounding near 1.0.
    EXPECT_NEAR(change, -lr * g / (std::abs(g) + eps), 1e-15);
    EXPECT_NEAR(std::abs(change), lr, lr * eps / (std::abs(g) + eps) + 1e-15);
    EXPECT_EQ(state.step, 1);
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<double> p = {0.3, -2.0}, grad = {0.0, 0.0};
  AdamState<double> state{AdamConfig{}, {}, {}, 0};
  const std::vector<ParamBlock<double>> blocks = {{p, grad}};
  for (int i = 0; i < 100; ++i) adam_step<double>(blocks, state);
  EXPECT_EQ(p, (std::vector<double>{0.3, -2.0}));
}

TEST(Adam, MinimizesQuadratic) {
  std::vector<double> theta = {1.0}, grad = {0.0};
  AdamConfig config;
  config.learning_rate = 0.1;
  AdamState<double> state{config, {}, {}, 0};
  const std::vector<ParamBlock<double>> blocks = {{theta, grad}};
  for (int i = 0; i < 200; ++i) {
    grad[0] = 2 * theta[0];
    adam_step<double>(blocks, state);
  }
  EXPECT_LT(std::abs(theta[0]), 0.1);
}

TEST(Adam, QuadraticMatchesScalarSimulation) {
  // Independent re-derivation of the update in long double.
  long double th = 1.0L, m = 0, v = 0;
  std::vector<double> theta = {1.0}, grad = {0.0};
  AdamConfig config;
  config.learning_rate = 0.1;
  AdamState<double> state{config, {}, {}, 0};
  const std::vector<ParamBlock<double>> blocks = {{theta, grad}};
  for (int t = 1; t <= 200; ++t) {
    const long double g = 2 * th;
    m = 0.9L * m + 0.1L * g;
    v = 0.999L * v + 0.001L * g * g;
    const long double mhat = m / (1 - std::pow(0.9L, t));
    const long double vhat = v / (1 - std::pow(0.999L, t));
    th -= 0.1L * mhat / (std::sqrt(vhat) + 1e-8L);
    grad[0] = 2 * theta[0];
    adam_step<double>(blocks, state);
  }
  EXPECT_NEAR(theta[0], static_cast<double>(th), 1e-9);
}

TEST(Adam, NonFiniteGradientFaultsWithoutUpdating) {
  std::vector<double> p = {1.0}, grad = {std::nan("")};
  AdamState<double> state{AdamConfig{}, {}, {}, 0};
  const std::vector<ParamBlock<double>> blocks = {{p, grad}};
  EXPECT_THROW(adam_step<double>(blocks, state), NumericFault);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(state.step, 0);
}

TEST(Tensor, RequireFinite) {
  Tensor4<float> t(1, {1, 1, 2});
  EXPECT_NO_THROW(require_finite(t, "t"));
  t.values[1] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(require_finite(t, "t"), NumericFault);
}
