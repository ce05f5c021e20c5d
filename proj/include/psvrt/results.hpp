#pragma once

// On-disk records for trials and conditions.
//
// Curves:    CSV, header `condition_key,trial,images_seen,train_acc,eval_acc`.
// Summaries: one JSON object per condition (params, learned-trial ALC stats,
//            non-learned count, per-trial seeds and flags). Wall time is kept
//            out so that reruns reproduce the files byte for byte.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psvrt/error.hpp"
#include "psvrt/trainer.hpp"

namespace psvrt::results {

using nlohmann::json;

inline constexpr const char* kCurveHeader = "condition_key,trial,images_seen,train_acc,eval_acc";

inline std::string format_fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline void write_curve_rows(std::ostream& out, const std::string& key, const train::TrialResult& trial) {
  for (const auto& p : trial.curve.points) {
    out << key << ',' << trial.trial_index << ',' << p.images_seen << ',' << format_fixed(p.train_accuracy) << ','
        << format_fixed(p.eval_accuracy) << '\n';
  }
}

inline void write_curves_csv(std::ostream& out, const std::string& key, const std::vector<train::TrialResult>& trials) {
  out << kCurveHeader << '\n';
  for (const auto& t : trials) write_curve_rows(out, key, t);
}

// trial index -> curve, for one condition key.
inline std::map<int, train::LearningCurve> read_curves_csv(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line) || line != kCurveHeader) throw FormatError("curve CSV has an unexpected header");
  std::map<int, train::LearningCurve> curves;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell_key, trial, seen, train_acc, eval_acc;
    if (!std::getline(ls, cell_key, ',') || !std::getline(ls, trial, ',') || !std::getline(ls, seen, ',') ||
        !std::getline(ls, train_acc, ',') || !std::getline(ls, eval_acc)) {
      throw FormatError("malformed curve row: " + line);
    }
    if (cell_key != key) continue;
    curves[std::stoi(trial)].points.push_back({std::stoll(seen), std::stod(train_acc), std::stod(eval_acc)});
  }
  return curves;
}

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json to_json(const ImageParams& p) {
  return {{"m", p.m()}, {"n", p.n()}, {"k", p.k()}, {"seed", p.seed()}};
}

inline ImageParams params_from_json(const json& j) {
  return ImageParams(j.at("m").get<int>(), j.at("n").get<int>(), j.at("k").get<int>(),
                     j.at("seed").get<std::uint64_t>());
}

inline json to_json(const train::TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"image_budget", c.image_budget},
          {"eval_interval", c.eval_interval},
          {"eval_set_size", c.eval_set_size},
          {"learned_threshold", c.learned_threshold},
          {"trials", c.trials},
          {"base_seed", c.base_seed},
          {"learning_rate", c.adam.learning_rate},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"epsilon", c.adam.epsilon}};
}

inline json trial_to_json(const train::TrialResult& t) {
  json j = {{"trial", t.trial_index},
            {"seed", t.seed},
            {"alc", t.alc},
            {"learned", t.learned},
            {"final_accuracy", t.final_accuracy},
            {"fault", t.fault}};
  if (t.fault) j["fault_message"] = t.fault_message;
  return j;
}

inline json to_json(const train::ConditionSummary& s) {
  json trials = json::array();
  for (const auto& t : s.trials) trials.push_back(trial_to_json(t));
  return {{"condition_key", train::condition_key(s.architecture, s.task, s.params)},
          {"architecture", s.architecture},
          {"task", std::string(to_string(s.task))},
          {"params", to_json(s.params)},
          {"mean_alc", optional_json(s.mean_alc)},
          {"min_alc", optional_json(s.min_alc)},
          {"max_alc", optional_json(s.max_alc)},
          {"non_learned", s.non_learned},
          {"learned", s.learned()},
          {"trials", trials}};
}

inline std::optional<double> optional_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

// Curves are not part of the summary record; attach them with read_curves_csv.
inline train::ConditionSummary summary_from_json(const json& j) {
  train::ConditionSummary s;
  s.architecture = j.at("architecture").get<std::string>();
  s.task = parse_task(j.at("task").get<std::string>());
  s.params = params_from_json(j.at("params"));
  s.mean_alc = optional_from_json(j.at("mean_alc"));
  s.min_alc = optional_from_json(j.at("min_alc"));
  s.max_alc = optional_from_json(j.at("max_alc"));
  s.non_learned = j.at("non_learned").get<int>();
  for (const auto& t : j.at("trials")) {
    train::TrialResult r;
    r.trial_index = t.at("trial").get<int>();
    r.seed = t.at("seed").get<std::uint64_t>();
    r.alc = t.at("alc").get<double>();
    r.learned = t.at("learned").get<bool>();
    r.final_accuracy = t.at("final_accuracy").get<double>();
    r.fault = t.at("fault").get<bool>();
    if (t.contains("fault_message")) r.fault_message = t.at("fault_message").get<std::string>();
    s.trials.push_back(std::move(r));
  }
  return s;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes through a sibling temp file and renames, so a crash never leaves a
// half-written record under the final name.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out << text;
    if (!out) throw IoError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::string summary_text(const train::ConditionSummary& s) { return to_json(s).dump(2) + "\n"; }

inline std::string curves_text(const std::string& key, const std::vector<train::TrialResult>& trials) {
  std::ostringstream os;
  write_curves_csv(os, key, trials);
  return os.str();
}

inline train::ConditionSummary load_summary(const std::filesystem::path& summary_path,
                                            const std::filesystem::path& curves_path) {
  auto s = summary_from_json(json::parse(read_text_file(summary_path)));
  if (std::filesystem::exists(curves_path)) {
    std::ifstream in(curves_path);
    auto curves = read_curves_csv(in, train::condition_key(s.architecture, s.task, s.params));
    for (auto& t : s.trials) {
      if (auto it = curves.find(t.trial_index); it != curves.end()) t.curve = it->second;
    }
  }
  return s;
}

}  // namespace psvrt::results
