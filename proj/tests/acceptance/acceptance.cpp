// Acceptance runner: prints one PASS/FAIL line per criterion and exits
// nonzero if any selected criterion fails.
//
//   psvrt_acceptance [--only 1,2,3] [--extended]
//
// Criteria 4 and 5 train the baseline network for 500,000 images per trial
// (about ten minutes each on one core). Criterion 6 runs only with
// --extended.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "psvrt/arch.hpp"
#include "psvrt/generator.hpp"
#include "psvrt/nn/network.hpp"
#include "psvrt/probe.hpp"
#include "psvrt/results.hpp"
#include "psvrt/trainer.hpp"
#include "support/oracles.hpp"

using namespace psvrt;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) { return results::format_fixed(v, digits); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

// 1 ---------------------------------------------------------------------------

constexpr double kGradTolerance = 1e-4;
constexpr int kGradSeeds = 20;
constexpr std::size_t kGradSampledParams = 1'000;
constexpr double kGradSeconds = 300.0;

Outcome gradient_fidelity() {
  using namespace nn;
  const auto started = Clock::now();
  // One small network per layer type, all parameters checked, plus the full
  // baseline on generated images with a random parameter subset.
  const std::vector<std::pair<std::string, NetworkSpec>> nets = {
      {"conv-odd", {"conv-odd", 7, 1, {conv(3, 3), classifier(2)}}},
      {"conv-even", {"conv-even", 7, 1, {conv(2, 4), classifier(2)}}},
      {"pool", {"pool", 7, 1, {conv(2, 2), pool(), classifier(2)}}},
      {"relu", {"relu", 7, 1, {conv(2, 2), relu(), classifier(2)}}},
      {"dense", {"dense", 5, 1, {dense(6), relu(), classifier(2)}}},
      {"classifier", {"classifier", 5, 1, {classifier(2)}}},
  };
  std::ostringstream detail;
  bool pass = true;
  for (const auto& [label, spec] : nets) {
    double worst = 0;
    std::size_t skipped = 0;
    for (int seed = 0; seed < kGradSeeds; ++seed) {
      Network<double> net(spec, seed);
      Rng rng(seed, 0x9c);
      jitter_biases(net, rng, 0.1);
      Tensor4<double> in(3, {1, spec.input_side, spec.input_side});
      for (auto& v : in.values) v = rng.uniform(-1, 1);
      const std::vector<int> labels = {0, 1, static_cast<int>(rng.below(2))};
      const auto r = grad_check(net, in, labels, 1e-5, rng, net.param_count());
      worst = std::max(worst, r.max_relative_error);
      if (r.checked + r.skipped_at_kinks != net.param_count()) pass = false;
      skipped += r.skipped_at_kinks;
    }
    pass = pass && worst < kGradTolerance;
    detail << label << ' ' << sci(worst) << (skipped ? " (" + std::to_string(skipped) + " at kinks)" : "") << "; ";
  }

  double worst = 0;
  std::size_t checked = kGradSampledParams, skipped = 0;
  for (int seed = 0; seed < kGradSeeds; ++seed) {
    Network<double> net(arch::psvrt_baseline(30), seed);
    Rng rng(seed, 0xba);
    jitter_biases(net, rng, 0.05);
    const ImageParams params(4, 30, 2, static_cast<std::uint64_t>(seed) + 1);
    Rng data = batch_rng(params, 0, 0);
    const auto samples = generate_batch(data, params, Task::SD, 4);
    Tensor4<double> in(4, {1, 30, 30});
    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) {
      std::copy(samples[i].image.pixels.begin(), samples[i].image.pixels.end(), in.example(i));
      labels.push_back(samples[i].label(Task::SD));
    }
    const auto r = grad_check(net, in, labels, 1e-5, rng, kGradSampledParams);
    worst = std::max(worst, r.max_relative_error);
    checked = std::min(checked, r.checked);
    skipped += r.skipped_at_kinks;
  }
  const double seconds = std::chrono::duration<double>(Clock::now() - started).count();
  pass = pass && worst < kGradTolerance && checked >= kGradSampledParams && seconds < kGradSeconds;
  detail << "baseline n=30 " << sci(worst) << " over " << checked << " params x " << kGradSeeds << " seeds, " << skipped
         << " draws skipped at kinks; "
         << fmt(seconds, 1) << "s";
  return {pass, detail.str()};
}

// 2 ---------------------------------------------------------------------------

constexpr int kSoundnessSamples = 100'000;
constexpr int kSoundnessBatch = 50;
constexpr double kSoundnessSeconds = 120.0;

Outcome generator_soundness() {
  const auto started = Clock::now();
  std::vector<ImageParams> configs;
  for (int m : {3, 4, 5}) {
    for (int n : {30, 60}) {
      for (int k : {2, 3}) configs.emplace_back(m, n, k, 1000 + m * 100 + n + k);
    }
  }
  const int batches_per_config =
      (kSoundnessSamples + kSoundnessBatch * static_cast<int>(configs.size()) - 1) /
      (kSoundnessBatch * static_cast<int>(configs.size()));
  std::int64_t samples = 0, label_errors = 0, overlaps = 0, impure_different = 0, unbalanced = 0, render_errors = 0;
  for (const auto& p : configs) {
    for (int b = 0; b < batches_per_config; ++b) {
      const Task task = b % 2 ? Task::SR : Task::SD;
      Rng rng = batch_rng(p, 0xacce, b);
      int positives = 0;
      for (const auto& s : generate_batch(rng, p, task, kSoundnessBatch)) {
        ++samples;
        positives += s.label(task);
        const bool same = oracle::any_identical_pair(s.items);
        const bool vertical = oracle::vertical(s.placements, p.m());
        label_errors += (s.sd_label == SdLabel::Same) != same || s.sd_label != sd_rule(s.items);
        label_errors += (s.sr_label == SrLabel::Vertical) != vertical || s.sr_label != sr_rule(s.placements, p.m());
        overlaps += !oracle::disjoint_in_bounds(s.placements, p.m(), p.n());
        impure_different += s.sd_label == SdLabel::Different && oracle::identical_pairs(s.items) != 0;
        render_errors += s.image.pixels != render(s.items, s.placements, p.n()).pixels;
      }
      unbalanced += positives != kSoundnessBatch / 2;
    }
  }
  const double seconds = std::chrono::duration<double>(Clock::now() - started).count();
  const bool pass = samples >= kSoundnessSamples && label_errors == 0 && overlaps == 0 && impure_different == 0 &&
                    unbalanced == 0 && render_errors == 0 && seconds < kSoundnessSeconds;
  std::ostringstream d;
  d << samples << " samples over " << configs.size() << " configs: label mismatches " << label_errors
    << ", overlapping " << overlaps << ", Different with identical pair " << impure_different
    << ", unbalanced batches " << unbalanced << ", render mismatches " << render_errors << "; " << fmt(seconds, 1)
    << "s";
  return {pass, d.str()};
}

// 3 ---------------------------------------------------------------------------

constexpr int kAlcCurves = 1'000;
constexpr double kAlcTolerance = 1e-12;

Outcome alc_oracle() {
  Rng rng(0xa1c);
  double worst = 0;
  for (int c = 0; c < kAlcCurves; ++c) {
    train::LearningCurve curve;
    const int length = 1 + static_cast<int>(rng.below(300));
    for (int i = 0; i < length; ++i) curve.points.push_back({(i + 1) * 10'000, rng.uniform(0, 1), rng.uniform(0, 1)});
    // Independent recomputation: trapezoid rule over unit-spaced samples
    // with the end points counted in full, which reduces to the mean.
    long double area = 0;
    for (int i = 0; i + 1 < length; ++i) {
      area += 0.5L * (curve.points[i].eval_accuracy + curve.points[i + 1].eval_accuracy);
    }
    area += 0.5L * (curve.points.front().eval_accuracy + curve.points.back().eval_accuracy);
    const double expected = static_cast<double>(area / length);
    worst = std::max(worst, std::abs(train::alc(curve) - expected));
  }
  bool chance_exact = true;
  for (int length : {1, 2, 7, 100, 2'500}) {
    train::LearningCurve flat;
    for (int i = 0; i < length; ++i) flat.points.push_back({i, 0.5, 0.5});
    chance_exact = chance_exact && train::alc(flat) == 0.5;
  }
  return {worst <= kAlcTolerance && chance_exact,
          "max |alc - oracle| " + sci(worst) + " over " + std::to_string(kAlcCurves) +
              " curves; constant 0.5 curve exact: " + (chance_exact ? "yes" : "no")};
}

// 4 and 5 ---------------------------------------------------------------------

constexpr std::int64_t kDeskBudget = 500'000;
constexpr int kDeskTrials = 3;
constexpr double kSrFinalAccuracy = 0.95;
constexpr double kDichotomyMargin = 0.05;

train::TrainConfig desk_config(std::int64_t budget) {
  train::TrainConfig c;
  c.image_budget = budget;
  c.trials = kDeskTrials;
  c.base_seed = 1;
  return c;
}

train::ConditionSummary run_desk(Task task, int n, std::int64_t budget) {
  const ImageParams params(4, n, 2, 1);
  const auto started = Clock::now();
  auto s = train::run_condition(arch::psvrt_baseline(n), params, task, desk_config(budget));
  std::cerr << "  " << train::condition_key(s.architecture, task, params) << " trained in "
            << fmt(std::chrono::duration<double>(Clock::now() - started).count(), 0) << "s\n";
  return s;
}

std::string describe(const train::ConditionSummary& s) {
  std::ostringstream d;
  d << to_string(s.task) << " alc [";
  for (std::size_t i = 0; i < s.trials.size(); ++i) d << (i ? " " : "") << fmt(s.trials[i].alc);
  d << "] final [";
  for (std::size_t i = 0; i < s.trials.size(); ++i) d << (i ? " " : "") << fmt(s.trials[i].final_accuracy);
  d << "] mean_alc " << (s.mean_alc ? fmt(*s.mean_alc) : "none") << " non_learned " << s.non_learned;
  return d.str();
}

const train::ConditionSummary& desk_sr() {
  static const auto s = run_desk(Task::SR, 60, kDeskBudget);
  return s;
}

Outcome sr_learnability() {
  const auto& sr = desk_sr();
  bool pass = static_cast<int>(sr.trials.size()) == kDeskTrials;
  for (const auto& t : sr.trials) pass = pass && t.learned && t.final_accuracy >= kSrFinalAccuracy;
  return {pass, describe(sr)};
}

Outcome dichotomy() {
  const auto& sr = desk_sr();
  const auto sd = run_desk(Task::SD, 60, kDeskBudget);
  const bool lower = sd.mean_alc && sr.mean_alc && *sd.mean_alc < *sr.mean_alc - kDichotomyMargin;
  const bool pass = lower || sd.non_learned >= 1;
  return {pass, describe(sd) + "; " + describe(sr)};
}

// 6 ---------------------------------------------------------------------------

constexpr std::int64_t kExtendedBudget = 1'000'000;
constexpr double kSrFlatness = 0.05;

Outcome straining_trend() {
  const std::vector<int> sides = {30, 60, 90};
  std::vector<train::ConditionSummary> sd, sr;
  for (int n : sides) {
    sd.push_back(run_desk(Task::SD, n, kExtendedBudget));
    sr.push_back(run_desk(Task::SR, n, kExtendedBudget));
  }
  // A condition with no learned trial sits at chance.
  auto mean = [](const train::ConditionSummary& s) { return s.mean_alc.value_or(0.5); };
  bool alc_non_increasing = true, non_learned_non_decreasing = true;
  for (std::size_t i = 1; i < sides.size(); ++i) {
    alc_non_increasing = alc_non_increasing && mean(sd[i]) <= mean(sd[i - 1]);
    non_learned_non_decreasing = non_learned_non_decreasing && sd[i].non_learned >= sd[i - 1].non_learned;
  }
  double lo = 1, hi = 0;
  for (const auto& s : sr) {
    lo = std::min(lo, mean(s));
    hi = std::max(hi, mean(s));
  }
  const bool pass = (alc_non_increasing || non_learned_non_decreasing) && hi - lo < kSrFlatness;
  std::ostringstream d;
  for (std::size_t i = 0; i < sides.size(); ++i) {
    d << "n=" << sides[i] << " sd " << fmt(mean(sd[i])) << "/" << sd[i].non_learned << " sr " << fmt(mean(sr[i]))
      << "/" << sr[i].non_learned << "; ";
  }
  d << "sr spread " << fmt(hi - lo);
  return {pass, d.str()};
}

// 7 ---------------------------------------------------------------------------

constexpr int kProbeSamples = 10'000;
constexpr double kProbeAccuracy = 0.999;
constexpr double kProbeSeconds = 600.0;

Outcome probe_oracle() {
  const auto started = Clock::now();
  const auto stats = probe::evaluate_probe(ImageParams(4, 60, 2, 1), kProbeSamples);
  int mismatches = 0, cases = 0;
  for (int n = 1; n <= 12; ++n) {
    for (int m = 1; m <= 3; ++m) {
      for (int k = 1; k <= 3; ++k) {
        ++cases;
        const auto counted = probe::count_arrangements(n, m, k);
        mismatches += !counted || *counted != oracle::count_arrangements(n, m, k);
      }
    }
  }
  const double seconds = std::chrono::duration<double>(Clock::now() - started).count();
  const bool pass = stats.samples == kProbeSamples && stats.recall_same() == 1.0 &&
                    stats.accuracy() >= kProbeAccuracy && mismatches == 0 && seconds < kProbeSeconds;
  std::ostringstream d;
  d << "recall(Same) " << fmt(stats.recall_same()) << ", accuracy " << fmt(stats.accuracy()) << " on "
    << stats.samples << " samples; count mismatches " << mismatches << "/" << cases << "; " << fmt(seconds, 1) << "s";
  return {pass, d.str()};
}

// 8 ---------------------------------------------------------------------------

Outcome architecture_conformance() {
  using namespace nn;
  int checked = 0;
  std::vector<std::string> failures;
  for (const auto& name : arch::known_architectures()) {
    const auto hand = oracle::hand_architecture(name);
    for (int n : {30, 180}) {
      const std::string where = name + "@" + std::to_string(n);
      try {
        const auto spec = arch::by_name(name, n);
        const auto resolved = resolve(spec);
        std::vector<std::size_t> counts;
        for (const auto& r : resolved) {
          if (r.param_count() > 0) counts.push_back(r.param_count());
        }
        int fan_in = 0;
        const auto expected = oracle::hand_counts(n, hand, &fan_in);
        if (counts != expected) failures.push_back(where + " param counts");

        // Shape after each stage: the pool output, or the conv output when
        // the stage is not pooled.
        const auto shapes = oracle::hand_stage_shapes(n, hand);
        std::size_t stage = 0;
        for (std::size_t i = 0; i < resolved.size(); ++i) {
          const auto kind = resolved[i].spec.kind;
          if (kind != LayerKind::Conv) continue;
          const bool pooled = hand.stages.at(stage).pooled;
          std::size_t j = i + 1;
          while (pooled && j < resolved.size() && resolved[j].spec.kind != LayerKind::Pool) ++j;
          const Shape got = pooled ? resolved.at(j).output : resolved[i].output;
          const auto [channels, side] = shapes.at(stage);
          if (got != Shape{channels, side, side}) failures.push_back(where + " stage " + std::to_string(stage));
          ++stage;
        }
        if (stage != hand.stages.size()) failures.push_back(where + " stage count");
        if (output_shape(spec) != Shape{2, 1, 1}) failures.push_back(where + " output shape");

        Network<float> net(spec, 1);
        Tensor4<float> in(2, {1, n, n});
        Rng rng(n);
        for (auto& v : in.values) v = static_cast<float>(rng.below(2));
        const std::vector<int> labels = {0, 1};
        const float loss = net.loss_and_backward(in, labels);
        bool grads_finite = std::isfinite(loss);
        for (const auto& block : net.parameters()) {
          for (float g : block.grads) grads_finite = grads_finite && std::isfinite(g);
        }
        if (!grads_finite) failures.push_back(where + " forward/backward");
        if (net.param_count() != std::accumulate(expected.begin(), expected.end(), std::size_t{0})) {
          failures.push_back(where + " total params");
        }
      } catch (const std::exception& e) {
        failures.push_back(where + " threw " + e.what());
      }
      ++checked;
    }
  }
  std::string d = std::to_string(checked) + " architecture/size pairs";
  if (failures.empty()) return {true, d + " match hand-computed shapes and counts"};
  for (const auto& f : failures) d += "; " + f;
  return {false, d};
}

// 9 ---------------------------------------------------------------------------

Outcome reproducibility() {
  train::TrainConfig c;
  c.batch_size = 20;
  c.image_budget = 4'000;
  c.eval_interval = 20;
  c.eval_set_size = 200;
  c.trials = 1;
  c.base_seed = 5;
  const ImageParams params(4, 60, 2, 5);
  const auto spec = arch::psvrt_baseline(60);
  bool pass = true;
  std::string detail;
  for (Task task : {Task::SD, Task::SR}) {
    const auto key = train::condition_key(spec.name, task, params);
    for (int trial : {0, 3}) {
      const auto a = results::curves_text(key, {train::train_trial(spec, params, task, c, trial)});
      const auto b = results::curves_text(key, {train::train_trial(spec, params, task, c, trial)});
      pass = pass && a == b;
      detail += key + " trial " + std::to_string(trial) + (a == b ? " identical; " : " DIFFERS; ");
    }
  }
  return {pass, detail + "curve CSVs compared byte for byte"};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
  bool extended = false;
};

std::set<int> parse_only(const char* text) {
  std::set<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  bool extended = false;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--only") && i + 1 < argc) {
      only = parse_only(argv[++i]);
    } else if (!std::strcmp(argv[i], "--extended")) {
      extended = true;
    } else {
      std::cerr << "usage: psvrt_acceptance [--only 1,2,...] [--extended]\n";
      return 1;
    }
  }

  const std::vector<Criterion> criteria = {
      {1, "gradient fidelity", gradient_fidelity},
      {2, "generator soundness", generator_soundness},
      {3, "ALC oracle", alc_oracle},
      {4, "SR learnability (desk scale)", sr_learnability},
      {5, "SD/SR dichotomy (desk scale)", dichotomy},
      {6, "straining trend (extended)", straining_trend, true},
      {7, "probe oracle", probe_oracle},
      {8, "architecture conformance", architecture_conformance},
      {9, "reproducibility", reproducibility},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    if (c.extended && !extended) {
      std::cout << "criterion " << c.id << " " << c.name << ": SKIP (needs --extended)" << std::endl;
      continue;
    }
    const auto started = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(Clock::now() - started).count();
    failed += !o.pass;
    std::cout << "criterion " << c.id << " " << c.name << ": " << (o.pass ? "PASS" : "FAIL") << " (" << o.detail
              << ") [" << fmt(seconds, 1) << "s]" << std::endl;
  }
  return failed ? 1 : 0;
}
