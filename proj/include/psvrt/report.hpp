#pragma once

// Plot-ready CSV tables built from condition summaries.

#include <algorithm>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "psvrt/grid.hpp"
#include "psvrt/probe.hpp"
#include "psvrt/results.hpp"

namespace psvrt::report {

inline std::string optional_cell(const std::optional<double>& v) {
  return v ? results::format_fixed(*v) : std::string();
}

// One row per (sweep value, model, task): mean ALC with the learned-trial
// min/max band and the non-learned count. Missing values are empty cells.
inline void write_sweep_csv(std::ostream& out, train::Sweep sweep, const train::GridPlan& plan,
                            const std::vector<train::ConditionSummary>& summaries) {
  out << "param_value,model,task,mean_alc,min_alc,max_alc,non_learned\n";
  for (const auto& mt : plan.model_tasks) {
    for (int v : plan.values(sweep)) {
      const auto it = std::find_if(summaries.begin(), summaries.end(), [&](const train::ConditionSummary& s) {
        return s.architecture == mt.architecture && s.task == mt.task && train::sweep_value(sweep, s.params) == v &&
               s.params.m() == (sweep == train::Sweep::ItemSide ? v : train::kBaseItemSide) &&
               s.params.n() == (sweep == train::Sweep::ImageSide ? v : train::kBaseImageSide) &&
               s.params.k() == (sweep == train::Sweep::ItemCount ? v : train::kBaseItemCount);
      });
      if (it == summaries.end()) continue;
      out << v << ',' << mt.architecture << ',' << to_string(mt.task) << ',' << optional_cell(it->mean_alc) << ','
          << optional_cell(it->min_alc) << ',' << optional_cell(it->max_alc) << ',' << it->non_learned << '\n';
    }
  }
}

inline void write_straining_csv(std::ostream& out, const probe::StrainingReport& r) {
  out << "sweep,param_value,model,task,status,mean_alc,min_alc,max_alc,non_learned,trials,arrangements,"
         "arrangements_exact,pattern_count\n";
  for (const auto& row : r.rows) {
    char arrangements[64];
    std::snprintf(arrangements, sizeof(arrangements), row.arrangements_exact ? "%.0f" : "%.6e", row.arrangements);
    out << train::sweep_name(row.sweep) << ',' << row.param_value << ',' << row.architecture << ','
        << to_string(row.task) << ',' << (row.present ? "present" : "missing") << ',' << optional_cell(row.mean_alc)
        << ',' << optional_cell(row.min_alc) << ',' << optional_cell(row.max_alc) << ','
        << (row.present ? std::to_string(row.non_learned) : std::string()) << ','
        << (row.present ? std::to_string(row.trials) : std::string()) << ',' << arrangements << ','
        << (row.arrangements_exact ? "exact" : "estimate") << ',' << row.pattern_count << '\n';
  }
}

inline void write_trends_csv(std::ostream& out, const probe::StrainingReport& r) {
  out << "sweep,model,task,driver,log10_variability_growth,first_mean_alc,last_mean_alc,alc_change,"
         "first_non_learned,last_non_learned\n";
  for (const auto& t : r.trends) {
    std::optional<double> change;
    if (t.first_alc && t.last_alc) change = *t.last_alc - *t.first_alc;
    out << train::sweep_name(t.sweep) << ',' << t.architecture << ',' << to_string(t.task) << ',' << t.driver << ','
        << results::format_fixed(t.variability_growth) << ',' << optional_cell(t.first_alc) << ','
        << optional_cell(t.last_alc) << ',' << optional_cell(change) << ',' << t.first_non_learned << ','
        << t.last_non_learned << '\n';
  }
}

inline void write_probe_stats_csv(std::ostream& out, const ImageParams& p, const probe::ProbeStats& s) {
  out << "m,n,k,samples,same,true_same,false_same,false_different,accuracy,recall_same,false_positive_rate\n";
  out << p.m() << ',' << p.n() << ',' << p.k() << ',' << s.samples << ',' << s.same << ',' << s.true_same << ','
      << s.false_same << ',' << s.false_diff << ',' << results::format_fixed(s.accuracy()) << ','
      << results::format_fixed(s.recall_same()) << ',' << results::format_fixed(s.false_positive_rate()) << '\n';
}

}  // namespace psvrt::report
