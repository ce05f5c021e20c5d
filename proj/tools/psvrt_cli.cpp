// psvrt: generate datasets, train networks, run the straining grid, probe
// and report.
//
// Exit codes: 0 success, 1 usage error, 2 infeasible parameters, 3 runtime fault.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "psvrt/arch.hpp"
#include "psvrt/dataset_io.hpp"
#include "psvrt/generator.hpp"
#include "psvrt/grid.hpp"
#include "psvrt/nn/checkpoint.hpp"
#include "psvrt/probe.hpp"
#include "psvrt/report.hpp"
#include "psvrt/results.hpp"
#include "psvrt/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace psvrt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitInfeasible = 2;
constexpr int kExitRuntime = 3;

constexpr std::uint64_t kGenStream = 0x6e11;

fs::path default_root() {
  if (const char* env = std::getenv("PSVRT_OUT_ROOT"); env && *env) return env;
  return "runs";
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Written before any long computation; together with the tool version it
// pins everything needed to rerun the command.
void write_manifest(const fs::path& run_dir, const std::string& command, const std::vector<std::string>& argv,
                    json config, json outputs) {
  json manifest = {{"tool", "psvrt"},
                   {"version", PSVRT_VERSION},
                   {"command", command},
                   {"argv", argv},
                   {"config", std::move(config)},
                   {"outputs", std::move(outputs)},
                   {"started_utc", utc_timestamp()}};
  results::write_text_atomic(run_dir / ("manifest_" + command + ".json"), manifest.dump(2) + "\n");
}

struct ParamFlags {
  int m = 4;
  int n = 60;
  int k = 2;
  std::uint64_t seed = 1;

  void add(CLI::App* app) {
    app->add_option("--m", m, "item side length")->capture_default_str();
    app->add_option("--n", n, "image side length")->capture_default_str();
    app->add_option("--k", k, "number of items")->capture_default_str();
    app->add_option("--seed", seed, "random seed")->capture_default_str();
  }
  ImageParams params() const { return ImageParams(m, n, k, seed); }
};

struct TrainFlags {
  std::int64_t budget = 500'000;
  bool paper_scale = false;
  int batch_size = 50;
  int eval_interval = 200;
  int eval_size = 2'000;
  double threshold = 0.55;
  double learning_rate = 1e-4;

  void add(CLI::App* app) {
    app->add_option("--budget", budget, "training images per trial")->capture_default_str();
    app->add_flag("--paper-scale", paper_scale, "use the full 20,000,000-image budget");
    app->add_option("--batch-size", batch_size)->capture_default_str();
    app->add_option("--eval-interval", eval_interval, "batches between curve samples")->capture_default_str();
    app->add_option("--eval-size", eval_size, "held-out samples per evaluation")->capture_default_str();
    app->add_option("--threshold", threshold, "held-out accuracy a learned trial must exceed")->capture_default_str();
    app->add_option("--lr", learning_rate, "Adam learning rate")->capture_default_str();
  }

  train::TrainConfig config(std::uint64_t seed, int trials, int workers) const {
    train::TrainConfig c;
    c.batch_size = batch_size;
    c.image_budget = paper_scale ? train::kPaperImageBudget : budget;
    c.eval_interval = eval_interval;
    c.eval_set_size = eval_size;
    c.learned_threshold = threshold;
    c.trials = trials;
    c.base_seed = seed;
    c.workers = workers;
    c.adam.learning_rate = learning_rate;
    c.validate();
    return c;
  }
};

std::vector<Sample> generate_count(const ImageParams& params, Task task, int count) {
  if (count <= 0 || count % 2 != 0) throw InvalidArgument("--count must be positive and even");
  std::vector<Sample> out;
  out.reserve(count);
  for (std::uint64_t index = 0; static_cast<int>(out.size()) < count; ++index) {
    const int size = std::min(50, count - static_cast<int>(out.size()));
    Rng rng = batch_rng(params, kGenStream, index);
    for (auto& s : generate_batch(rng, params, task, size)) out.push_back(std::move(s));
  }
  return out;
}

std::vector<train::Sweep> parse_sweeps(const std::vector<std::string>& names) {
  std::vector<train::Sweep> out;
  for (const auto& s : names) {
    if (s == "all") return {train::Sweep::ImageSide, train::Sweep::ItemSide, train::Sweep::ItemCount};
    out.push_back(train::parse_sweep(s));
  }
  return out;
}

// "arch:task" pairs, e.g. psvrt-baseline:sd.
std::vector<train::ModelTask> parse_model_tasks(const std::vector<std::string>& items) {
  if (items.empty()) return train::default_model_tasks();
  std::vector<train::ModelTask> out;
  for (const auto& item : items) {
    const auto colon = item.rfind(':');
    if (colon == std::string::npos) throw InvalidArgument("--model expects ARCH:TASK, got '" + item + "'");
    out.push_back({arch::by_name(item.substr(0, colon)).name, parse_task(item.substr(colon + 1))});
  }
  return out;
}

std::vector<train::ConditionSummary> load_all_summaries(const fs::path& run_dir) {
  std::vector<train::ConditionSummary> out;
  const train::GridPaths paths{run_dir};
  const auto dir = run_dir / "summaries";
  if (!fs::exists(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto key = f.stem().string();
    out.push_back(results::load_summary(f, paths.curves(key)));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parametric same-different / spatial-relation benchmark and CNN straining lab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", PSVRT_VERSION);
  const std::vector<std::string> args(argv, argv + argc);

  // gen -----------------------------------------------------------------
  auto* gen = app.add_subcommand("gen", "write a balanced dataset file");
  ParamFlags gen_params;
  gen_params.add(gen);
  std::string gen_task = "sd";
  int gen_count = 1000;
  std::string gen_out;
  int gen_pbm = 0;
  gen->add_option("--task", gen_task, "sd or sr")->capture_default_str();
  gen->add_option("--count", gen_count, "number of samples (even)")->capture_default_str();
  gen->add_option("--out", gen_out, "dataset path (default <root>/datasets/<params>.psvr)");
  gen->add_option("--export-pbm", gen_pbm, "also dump the first N images as PBM");

  // train ---------------------------------------------------------------
  auto* trn = app.add_subcommand("train", "train one trial and record its learning curve");
  ParamFlags trn_params;
  trn_params.add(trn);
  TrainFlags trn_flags;
  trn_flags.add(trn);
  std::string trn_arch = "psvrt-baseline", trn_task = "sd", trn_dir;
  int trn_trial = 0;
  bool trn_checkpoint = false, trn_quiet = false;
  trn->add_option("--arch", trn_arch, "architecture name")->capture_default_str();
  trn->add_option("--task", trn_task, "sd or sr")->capture_default_str();
  trn->add_option("--trial", trn_trial, "trial index (selects the initialization)")->capture_default_str();
  trn->add_option("--run-dir", trn_dir, "output directory");
  trn->add_flag("--checkpoint", trn_checkpoint, "save final parameters");
  trn->add_flag("--quiet", trn_quiet, "no progress output");

  // grid ----------------------------------------------------------------
  auto* grd = app.add_subcommand("grid", "run the n / m / k straining sweeps");
  TrainFlags grd_flags;
  grd_flags.add(grd);
  std::vector<std::string> grd_sweeps = {"all"}, grd_models;
  std::vector<int> grd_values;
  int grd_trials = 10, grd_workers = 1;
  std::uint64_t grd_seed = 1;
  std::string grd_dir;
  bool grd_resume = false;
  grd->add_option("--sweep", grd_sweeps, "n, m, k or all")->capture_default_str();
  grd->add_option("--model", grd_models, "ARCH:TASK combination (repeatable)");
  grd->add_option("--values", grd_values, "override the swept values (single sweep only)");
  grd->add_option("--trials", grd_trials)->capture_default_str();
  grd->add_option("--workers", grd_workers, "parallel trials")->capture_default_str();
  grd->add_option("--seed", grd_seed)->capture_default_str();
  grd->add_option("--run-dir", grd_dir, "output directory (default <root>/grid)");
  grd->add_flag("--resume", grd_resume, "skip conditions already completed in the run directory");

  // probe ---------------------------------------------------------------
  auto* prb = app.add_subcommand("probe", "score the subtraction-template probe; optional straining report");
  ParamFlags prb_params;
  prb_params.add(prb);
  int prb_count = 10'000;
  std::string prb_dir;
  bool prb_straining = false;
  prb->add_option("--count", prb_count, "generated samples to classify")->capture_default_str();
  prb->add_option("--run-dir", prb_dir, "output directory (default <root>/grid)");
  prb->add_flag("--straining", prb_straining, "join grid summaries in the run directory with arrangement counts");

  // report --------------------------------------------------------------
  auto* rpt = app.add_subcommand("report", "plot-ready ALC tables per sweep");
  std::vector<std::string> rpt_sweeps = {"all"}, rpt_models;
  std::string rpt_dir;
  rpt->add_option("--sweep", rpt_sweeps, "n, m, k or all")->capture_default_str();
  rpt->add_option("--model", rpt_models, "ARCH:TASK combination (repeatable)");
  rpt->add_option("--run-dir", rpt_dir, "grid run directory (default <root>/grid)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) {
      const auto params = gen_params.params();
      const Task task = parse_task(gen_task);
      const fs::path out = gen_out.empty() ? default_root() / "datasets" /
                                                 ("m" + std::to_string(params.m()) + "-n" + std::to_string(params.n()) +
                                                  "-k" + std::to_string(params.k()) + "-" +
                                                  std::string(to_string(task)) + ".psvr")
                                           : fs::path(gen_out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      const fs::path pbm_dir = out.string() + ".pbm";
      write_manifest(out.parent_path().empty() ? fs::path(".") : out.parent_path(), "gen", args,
                     {{"params", results::to_json(params)}, {"task", gen_task}, {"count", gen_count},
                      {"stream", kGenStream}},
                     {{"dataset", out.string()}, {"pbm_dir", gen_pbm > 0 ? pbm_dir.string() : ""}});
      const auto samples = generate_count(params, task, gen_count);
      io::write_dataset_file(out.string(), params, samples);
      if (gen_pbm > 0) {
        fs::create_directories(pbm_dir);
        for (int i = 0; i < std::min(gen_pbm, gen_count); ++i) {
          char name[32];
          std::snprintf(name, sizeof(name), "%06d.pbm", i);
          io::write_pbm_file((pbm_dir / name).string(), samples[i].image);
        }
      }
      int same = 0, vertical = 0;
      for (const auto& s : samples) {
        same += s.sd_label == SdLabel::Same;
        vertical += s.sr_label == SrLabel::Vertical;
      }
      std::cout << "wrote " << samples.size() << " samples to " << out.string() << " (same " << same << ", vertical "
                << vertical << ")\n";
      return kExitOk;
    }

    if (*trn) {
      const auto params = trn_params.params();
      const Task task = parse_task(trn_task);
      const auto config = trn_flags.config(trn_params.seed, 1, 1);
      const auto spec = arch::by_name(trn_arch, params.n());
      const auto key = train::condition_key(spec.name, task, params);
      const fs::path dir = trn_dir.empty() ? default_root() / ("train-" + key + "-s" + std::to_string(params.seed()))
                                           : fs::path(trn_dir);
      const auto stem = key + "-trial" + std::to_string(trn_trial);
      const fs::path curve_path = dir / "curves" / (stem + ".csv");
      const fs::path result_path = dir / "results" / (stem + ".json");
      const fs::path checkpoint_path = dir / "checkpoints" / (stem + ".psvk");
      write_manifest(dir, "train", args,
                     {{"params", results::to_json(params)}, {"task", trn_task}, {"architecture", spec.name},
                      {"network", nn::to_text(spec)}, {"trial", trn_trial}, {"train", results::to_json(config)},
                      {"trial_seed", train::trial_seed(config, trn_trial)}},
                     {{"curve", curve_path.string()}, {"result", result_path.string()},
                      {"checkpoint", trn_checkpoint ? checkpoint_path.string() : ""}});
      train::TrialHooks hooks;
      if (!trn_quiet) {
        hooks.on_sample = [](const train::CurvePoint& p) {
          std::cerr << "images " << p.images_seen << "  train_acc " << results::format_fixed(p.train_accuracy, 4)
                    << "  eval_acc " << results::format_fixed(p.eval_accuracy, 4) << '\n';
        };
      }
      if (trn_checkpoint) {
        hooks.on_finish = [&](nn::Network<float>& net, std::int64_t steps) {
          fs::create_directories(checkpoint_path.parent_path());
          nn::write_checkpoint_file(checkpoint_path.string(), net, static_cast<std::uint64_t>(steps));
        };
      }
      const auto result = train::train_trial(spec, params, task, config, trn_trial, nullptr, hooks);
      results::write_text_atomic(curve_path, results::curves_text(key, {result}));
      json record = results::trial_to_json(result);
      record["condition_key"] = key;
      record["wall_seconds"] = result.wall_seconds;
      results::write_text_atomic(result_path, record.dump(2) + "\n");
      std::cout << key << " trial " << trn_trial << ": alc " << results::format_fixed(result.alc, 4) << ", final "
                << results::format_fixed(result.final_accuracy, 4) << ", " << (result.learned ? "learned" : "not learned")
                << (result.fault ? " (numeric fault)" : "") << '\n';
      return result.fault ? kExitRuntime : kExitOk;
    }

    if (*grd) {
      train::GridPlan plan;
      plan.sweeps = parse_sweeps(grd_sweeps);
      plan.model_tasks = parse_model_tasks(grd_models);
      if (!grd_values.empty()) {
        if (plan.sweeps.size() != 1) throw InvalidArgument("--values needs exactly one --sweep");
        plan.value_overrides.push_back({plan.sweeps.front(), grd_values});
      }
      const auto config = grd_flags.config(grd_seed, grd_trials, grd_workers);
      const fs::path dir = grd_dir.empty() ? default_root() / "grid" : fs::path(grd_dir);
      json planned = json::array();
      for (const auto& c : train::plan_conditions(plan, config.base_seed)) planned.push_back(c.key());
      write_manifest(dir, "grid", args, {{"train", results::to_json(config)}, {"conditions", planned}},
                     {{"summaries", (dir / "summaries").string()}, {"curves", (dir / "curves").string()}});
      const auto summaries = train::run_grid(
          plan, config, train::GridPaths{dir}, grd_resume,
          [](const train::GridCondition& c, const train::ConditionSummary& s, bool resumed) {
            std::cout << (resumed ? "resumed " : "done    ") << c.key() << "  mean_alc "
                      << report::optional_cell(s.mean_alc) << "  non_learned " << s.non_learned << '/'
                      << s.trials.size() << std::endl;
          });
      std::cout << summaries.size() << " condition summaries in " << dir.string() << '\n';
      return kExitOk;
    }

    if (*prb) {
      const auto params = prb_params.params();
      const fs::path dir = prb_dir.empty() ? default_root() / "grid" : fs::path(prb_dir);
      const auto stem = "probe-m" + std::to_string(params.m()) + "-n" + std::to_string(params.n()) + "-k" +
                        std::to_string(params.k());
      write_manifest(dir, "probe", args,
                     {{"params", results::to_json(params)}, {"count", prb_count}, {"straining", prb_straining}},
                     {{"probe", (dir / "report" / (stem + ".csv")).string()}});
      const auto stats = probe::evaluate_probe(params, prb_count);
      std::ostringstream probe_csv;
      report::write_probe_stats_csv(probe_csv, params, stats);
      results::write_text_atomic(dir / "report" / (stem + ".csv"), probe_csv.str());
      std::cout << stem << ": accuracy " << results::format_fixed(stats.accuracy(), 4) << ", same recall "
                << results::format_fixed(stats.recall_same(), 4) << ", false positive rate "
                << results::format_fixed(stats.false_positive_rate(), 4) << '\n';
      if (prb_straining) {
        const auto summaries = load_all_summaries(dir);
        const auto r = probe::straining_report(summaries, train::GridPlan{});
        for (std::size_t i = 0; i < r.warnings.size() && i < 5; ++i) std::cerr << "warning: " << r.warnings[i] << '\n';
        if (r.warnings.size() > 5) std::cerr << "warning: ... " << r.warnings.size() - 5 << " more\n";
        std::ostringstream rows, trends;
        report::write_straining_csv(rows, r);
        report::write_trends_csv(trends, r);
        results::write_text_atomic(dir / "report" / "straining.csv", rows.str());
        results::write_text_atomic(dir / "report" / "straining_trends.csv", trends.str());
        std::cout << "straining report: " << r.rows.size() << " rows, " << r.trends.size() << " trends\n";
      }
      return kExitOk;
    }

    if (*rpt) {
      const fs::path dir = rpt_dir.empty() ? default_root() / "grid" : fs::path(rpt_dir);
      train::GridPlan plan;
      plan.sweeps = parse_sweeps(rpt_sweeps);
      plan.model_tasks = parse_model_tasks(rpt_models);
      const auto summaries = load_all_summaries(dir);
      if (summaries.empty()) throw IoError("no condition summaries under " + (dir / "summaries").string());
      for (auto sweep : plan.sweeps) {
        std::ostringstream csv;
        report::write_sweep_csv(csv, sweep, plan, summaries);
        const auto path = dir / "report" / ("sweep_" + train::sweep_name(sweep) + ".csv");
        results::write_text_atomic(path, csv.str());
        std::cout << "wrote " << path.string() << '\n';
      }
      return kExitOk;
    }
  } catch (const InfeasibleParams& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
