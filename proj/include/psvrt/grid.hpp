#pragma once

// The straining experiment: three one-parameter sweeps around (m=4, n=60,
// k=2), each run for a set of (architecture, task) combinations. Conditions
// are persisted one at a time under <run_dir>/summaries and <run_dir>/curves
// and skipped on resume.

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "psvrt/arch.hpp"
#include "psvrt/results.hpp"
#include "psvrt/trainer.hpp"

namespace psvrt::train {

enum class Sweep { ImageSide, ItemSide, ItemCount };

inline std::string sweep_name(Sweep s) {
  switch (s) {
    case Sweep::ImageSide: return "n";
    case Sweep::ItemSide: return "m";
    case Sweep::ItemCount: return "k";
  }
  return "?";
}

inline Sweep parse_sweep(const std::string& s) {
  if (s == "n") return Sweep::ImageSide;
  if (s == "m") return Sweep::ItemSide;
  if (s == "k") return Sweep::ItemCount;
  throw InvalidArgument("unknown sweep '" + s + "' (expected n, m or k)");
}

inline std::vector<int> default_sweep_values(Sweep s) {
  switch (s) {
    case Sweep::ImageSide: return {30, 60, 90, 120, 150, 180};
    case Sweep::ItemSide: return {3, 4, 5, 6, 7};
    case Sweep::ItemCount: return {2, 3, 4, 5, 6};
  }
  return {};
}

inline constexpr int kBaseItemSide = 4;
inline constexpr int kBaseImageSide = 60;
inline constexpr int kBaseItemCount = 2;

inline ImageParams sweep_params(Sweep s, int value, std::uint64_t seed) {
  switch (s) {
    case Sweep::ImageSide: return ImageParams(kBaseItemSide, value, kBaseItemCount, seed);
    case Sweep::ItemSide: return ImageParams(value, kBaseImageSide, kBaseItemCount, seed);
    case Sweep::ItemCount: return ImageParams(kBaseItemSide, kBaseImageSide, value, seed);
  }
  throw InvalidArgument("bad sweep");
}

inline int sweep_value(Sweep s, const ImageParams& p) {
  switch (s) {
    case Sweep::ImageSide: return p.n();
    case Sweep::ItemSide: return p.m();
    case Sweep::ItemCount: return p.k();
  }
  return 0;
}

struct ModelTask {
  std::string architecture;
  Task task;
};

// Baseline on both tasks plus both controls on SD.
inline std::vector<ModelTask> default_model_tasks() {
  return {{"psvrt-baseline", Task::SR}, {"psvrt-baseline", Task::SD}, {"wide-control", Task::SD},
          {"deep-control", Task::SD}};
}

struct GridPlan {
  std::vector<Sweep> sweeps = {Sweep::ImageSide, Sweep::ItemSide, Sweep::ItemCount};
  std::vector<ModelTask> model_tasks = default_model_tasks();
  // Overrides default_sweep_values for a sweep when non-empty.
  std::vector<std::pair<Sweep, std::vector<int>>> value_overrides;

  std::vector<int> values(Sweep s) const {
    for (const auto& [sweep, vals] : value_overrides) {
      if (sweep == s) return vals;
    }
    return default_sweep_values(s);
  }
};

struct GridCondition {
  Sweep sweep;
  int value;
  ModelTask model_task;
  ImageParams params;

  std::string key() const { return condition_key(model_task.architecture, model_task.task, params); }
};

// Conditions in execution order. A condition shared by two sweeps (the base
// point m=4, n=60, k=2) is listed once.
inline std::vector<GridCondition> plan_conditions(const GridPlan& plan, std::uint64_t seed) {
  std::vector<GridCondition> out;
  for (Sweep s : plan.sweeps) {
    for (const auto& mt : plan.model_tasks) {
      for (int v : plan.values(s)) {
        GridCondition c{s, v, mt, sweep_params(s, v, seed)};
        const bool seen = std::any_of(out.begin(), out.end(), [&](const GridCondition& o) { return o.key() == c.key(); });
        if (!seen) out.push_back(c);
      }
    }
  }
  return out;
}

struct GridPaths {
  std::filesystem::path root;

  std::filesystem::path summary(const std::string& key) const { return root / "summaries" / (key + ".json"); }
  std::filesystem::path curves(const std::string& key) const { return root / "curves" / (key + ".csv"); }
};

using ConditionCallback = std::function<void(const GridCondition&, const ConditionSummary&, bool resumed)>;

// Runs every planned condition not yet on disk. Completed conditions are
// loaded when `resume` is set; otherwise their presence is an error so that
// finished results are never overwritten.
inline std::vector<ConditionSummary> run_grid(const GridPlan& plan, const TrainConfig& config, const GridPaths& paths,
                                              bool resume, const ConditionCallback& on_condition = {}) {
  config.validate();
  std::vector<ConditionSummary> out;
  for (const auto& c : plan_conditions(plan, config.base_seed)) {
    const auto key = c.key();
    const auto summary_path = paths.summary(key);
    if (std::filesystem::exists(summary_path)) {
      if (!resume) throw InvalidArgument("condition " + key + " already completed in " + paths.root.string() +
                                 " (pass --resume to continue the run)");
      out.push_back(results::load_summary(summary_path, paths.curves(key)));
      if (on_condition) on_condition(c, out.back(), true);
      continue;
    }
    const auto spec = arch::by_name(c.model_task.architecture, c.params.n());
    auto summary = run_condition(spec, c.params, c.model_task.task, config);
    results::write_text_atomic(paths.curves(key), results::curves_text(key, summary.trials));
    results::write_text_atomic(summary_path, results::summary_text(summary));
    out.push_back(std::move(summary));
    if (on_condition) on_condition(c, out.back(), false);
  }
  return out;
}

}  // namespace psvrt::train
