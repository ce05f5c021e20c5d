#pragma once

// Streaming training trials, learning curves and ALC aggregation.
//
// A trial trains a freshly initialized network on an endless stream of
// balanced batches and, every `eval_interval` batches, records the accuracy
// over the training batches since the previous sample and over a fixed
// held-out set. ALC is the mean of the held-out samples.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "psvrt/error.hpp"
#include "psvrt/generator.hpp"
#include "psvrt/nn/network.hpp"
#include "psvrt/rng.hpp"

namespace psvrt::train {

inline constexpr std::uint64_t kTrialStream = 0x7121;
inline constexpr std::uint64_t kTrainDataStream = 0x7d47;
inline constexpr std::uint64_t kEvalDataStream = 0xe7a1;

inline constexpr std::int64_t kPaperImageBudget = 20'000'000;

struct TrainConfig {
  int batch_size = 50;
  std::int64_t image_budget = 500'000;
  int eval_interval = 200;
  int eval_set_size = 2'000;
  double learned_threshold = 0.55;
  int trials = 10;
  std::uint64_t base_seed = 1;
  nn::AdamConfig adam;
  int workers = 1;

  void validate() const {
    if (batch_size <= 0 || batch_size % 2 != 0) throw InvalidArgument("batch_size must be positive and even");
    if (image_budget <= 0 || image_budget % batch_size != 0) {
      throw InvalidArgument("image_budget must be a positive multiple of batch_size");
    }
    if (eval_interval <= 0) throw InvalidArgument("eval_interval must be positive");
    if (eval_set_size <= 0 || eval_set_size % 2 != 0) throw InvalidArgument("eval_set_size must be positive and even");
    if (!(learned_threshold > 0.5 && learned_threshold < 1.0)) {
      throw InvalidArgument("learned_threshold must lie in (0.5, 1)");
    }
    if (trials <= 0) throw InvalidArgument("trials must be positive");
    if (workers <= 0) throw InvalidArgument("workers must be positive");
  }
};

struct CurvePoint {
  std::int64_t images_seen = 0;
  double train_accuracy = 0.0;
  double eval_accuracy = 0.0;

  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

struct LearningCurve {
  std::vector<CurvePoint> points;

  bool empty() const { return points.empty(); }
  friend bool operator==(const LearningCurve&, const LearningCurve&) = default;
};

// Mean of the held-out accuracy samples. Samples are uniformly spaced, so
// this is the normalized area under the curve.
inline double alc(const LearningCurve& curve) {
  if (curve.empty()) throw InvalidArgument("alc of an empty curve");
  double sum = 0.0;
  for (const auto& p : curve.points) sum += p.eval_accuracy;
  return sum / static_cast<double>(curve.points.size());
}

inline bool crossed_threshold(const LearningCurve& curve, double threshold) {
  return std::any_of(curve.points.begin(), curve.points.end(),
                     [&](const CurvePoint& p) { return p.eval_accuracy > threshold; });
}

struct TrialResult {
  int trial_index = 0;
  std::uint64_t seed = 0;
  LearningCurve curve;
  double alc = 0.5;
  bool learned = false;
  double final_accuracy = 0.5;
  bool fault = false;
  std::string fault_message;
  double wall_seconds = 0.0;
};

struct ConditionSummary {
  std::string architecture;
  Task task = Task::SD;
  ImageParams params{4, 60, 2};
  std::optional<double> mean_alc;
  std::optional<double> min_alc;
  std::optional<double> max_alc;
  int non_learned = 0;
  std::vector<TrialResult> trials;

  int learned() const { return static_cast<int>(trials.size()) - non_learned; }
};

inline std::string condition_key(const std::string& architecture, Task task, const ImageParams& p) {
  return architecture + "-" + std::string(to_string(task)) + "-m" + std::to_string(p.m()) + "-n" +
         std::to_string(p.n()) + "-k" + std::to_string(p.k());
}

inline std::uint64_t trial_seed(const TrainConfig& config, int trial_index) {
  return derive_seed(config.base_seed, kTrialStream, static_cast<std::uint64_t>(trial_index));
}

// Network input tensor and labels for a set of samples.
struct LabeledBatch {
  nn::Tensor4<float> images;
  std::vector<int> labels;
};

inline void fill_batch(std::span<const Sample> samples, Task task, int n, LabeledBatch& out) {
  const nn::Shape shape{1, n, n};
  const int count = static_cast<int>(samples.size());
  if (out.images.batch != count || out.images.shape != shape) out.images.reshape(count, shape);
  out.labels.resize(count);
  for (int i = 0; i < count; ++i) {
    const auto& px = samples[i].image.pixels;
    std::copy(px.begin(), px.end(), out.images.example(i));
    out.labels[i] = samples[i].label(task);
  }
}

// Fixed balanced held-out set, identical for every trial of a condition.
inline std::vector<Sample> make_eval_set(const ImageParams& params, Task task, const TrainConfig& config) {
  std::vector<Sample> out;
  out.reserve(config.eval_set_size);
  int chunk = 0;
  while (static_cast<int>(out.size()) < config.eval_set_size) {
    const int size = std::min(config.batch_size, config.eval_set_size - static_cast<int>(out.size()));
    Rng rng = batch_rng(params, kEvalDataStream, static_cast<std::uint64_t>(chunk++));
    for (auto& s : generate_batch(rng, params, task, size)) out.push_back(std::move(s));
  }
  return out;
}

template <typename T>
double accuracy(nn::Network<T>& net, std::span<const Sample> samples, Task task, int chunk_size,
                LabeledBatch& scratch) {
  std::int64_t correct = 0;
  for (std::size_t start = 0; start < samples.size(); start += chunk_size) {
    const std::size_t len = std::min<std::size_t>(chunk_size, samples.size() - start);
    fill_batch(samples.subspan(start, len), task, net.spec().input_side, scratch);
    const auto predicted = nn::argmax_rows(net.forward(scratch.images));
    for (std::size_t i = 0; i < len; ++i) correct += predicted[i] == scratch.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

// Training batch `index` of trial `trial_index`. Streams never repeat an index.
inline std::vector<Sample> training_batch(const ImageParams& params, Task task, const TrainConfig& config,
                                          int trial_index, std::int64_t index) {
  Rng rng(derive_seed(params.seed(), kTrainDataStream, static_cast<std::uint64_t>(trial_index)), 0,
          static_cast<std::uint64_t>(index));
  return generate_batch(rng, params, task, config.batch_size);
}

struct TrialHooks {
  std::function<void(const CurvePoint&)> on_sample;
  // Receives the trained network and the number of optimizer steps taken.
  std::function<void(nn::Network<float>&, std::int64_t)> on_finish;
};

inline TrialResult train_trial(const nn::NetworkSpec& spec, const ImageParams& params, Task task,
                               const TrainConfig& config, int trial_index,
                               const std::vector<Sample>* eval_set = nullptr, const TrialHooks& hooks = {}) {
  config.validate();
  if (spec.input_side != params.n()) throw ShapeError("network input side does not match image side");
  const auto started = std::chrono::steady_clock::now();

  TrialResult result;
  result.trial_index = trial_index;
  result.seed = trial_seed(config, trial_index);

  std::vector<Sample> own_eval;
  if (eval_set == nullptr) {
    own_eval = make_eval_set(params, task, config);
    eval_set = &own_eval;
  }

  try {
    nn::Network<float> net(spec, result.seed);
    nn::AdamState<float> adam{config.adam, {}, {}, 0};
    const auto blocks = net.parameters();
    LabeledBatch batch, scratch;
    const std::int64_t total_batches = config.image_budget / config.batch_size;
    std::int64_t window_correct = 0, window_seen = 0;

    for (std::int64_t b = 0; b < total_batches; ++b) {
      const auto samples = training_batch(params, task, config, trial_index, b);
      fill_batch(samples, task, params.n(), batch);
      net.forward(batch.images);
      const auto predicted = nn::argmax_rows(net.logits());
      for (int i = 0; i < config.batch_size; ++i) window_correct += predicted[i] == batch.labels[i];
      window_seen += config.batch_size;
      const auto lg = nn::softmax_xent(net.logits(), std::span<const int>(batch.labels));
      net.backward(lg.grad_logits);
      nn::adam_step<float>(blocks, adam);

      const bool last = b + 1 == total_batches;
      if ((b + 1) % config.eval_interval == 0 || last) {
        CurvePoint point;
        point.images_seen = (b + 1) * config.batch_size;
        point.train_accuracy = static_cast<double>(window_correct) / static_cast<double>(window_seen);
        point.eval_accuracy = accuracy(net, std::span<const Sample>(*eval_set), task, config.batch_size, scratch);
        result.curve.points.push_back(point);
        window_correct = window_seen = 0;
        if (hooks.on_sample) hooks.on_sample(point);
      }
    }
    if (hooks.on_finish) hooks.on_finish(net, adam.step);
  } catch (const NumericFault& e) {
    result.fault = true;
    result.fault_message = e.what();
  }

  // A faulted trial keeps the curve it reached and never counts as learned.
  result.alc = result.curve.empty() ? 0.5 : alc(result.curve);
  result.final_accuracy = result.curve.empty() ? 0.5 : result.curve.points.back().eval_accuracy;
  result.learned = !result.fault && crossed_threshold(result.curve, config.learned_threshold);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

// Fills the learned-trial statistics from `trials`.
inline void summarize(ConditionSummary& summary, double learned_threshold) {
  summary.non_learned = 0;
  summary.mean_alc.reset();
  summary.min_alc.reset();
  summary.max_alc.reset();
  double sum = 0.0;
  int learned = 0;
  for (auto& t : summary.trials) {
    t.learned = !t.fault && crossed_threshold(t.curve, learned_threshold);
    if (!t.learned) {
      ++summary.non_learned;
      continue;
    }
    sum += t.alc;
    ++learned;
    summary.min_alc = summary.min_alc ? std::min(*summary.min_alc, t.alc) : t.alc;
    summary.max_alc = summary.max_alc ? std::max(*summary.max_alc, t.alc) : t.alc;
  }
  if (learned > 0) summary.mean_alc = sum / learned;
}

inline ConditionSummary run_condition(const nn::NetworkSpec& spec, const ImageParams& params, Task task,
                                      const TrainConfig& config) {
  config.validate();
  ConditionSummary summary{spec.name, task, params, {}, {}, {}, 0, {}};
  const auto eval_set = make_eval_set(params, task, config);
  summary.trials.resize(config.trials);

  if (config.workers == 1) {
    for (int t = 0; t < config.trials; ++t) summary.trials[t] = train_trial(spec, params, task, config, t, &eval_set);
  } else {
    // Each worker pulls trial indices and owns its network; results land in
    // their fixed slot so aggregation order never depends on scheduling.
    std::mutex mutex;
    int next = 0;
    std::exception_ptr failure;
    auto work = [&] {
      for (;;) {
        int t;
        {
          std::lock_guard lock(mutex);
          if (next >= config.trials || failure) return;
          t = next++;
        }
        try {
          summary.trials[t] = train_trial(spec, params, task, config, t, &eval_set);
        } catch (...) {
          std::lock_guard lock(mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < std::min(config.workers, config.trials); ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }
  summarize(summary, config.learned_threshold);
  return summary;
}

}  // namespace psvrt::train
