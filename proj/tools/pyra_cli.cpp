// Command-line surface for the token-merging + modulation library: schedule
// solving, FLOP reports, training on the synthetic task, checkpoint
// evaluation, and wall-clock benchmarking.
//
// Exit codes: 0 success, 2 usage/input error, 3 runtime failure (divergence,
// non-finite numerics). Machine-readable output goes to stdout, diagnostics
// to stderr.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pyra/arch.hpp"
#include "pyra/checkpoint.hpp"
#include "pyra/config.hpp"
#include "pyra/data.hpp"
#include "pyra/errors.hpp"
#include "pyra/flops.hpp"
#include "pyra/model.hpp"
#include "pyra/schedule.hpp"
#include "pyra/trainer.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw pyra::config_error("cannot open '" + path + "'");
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw pyra::config_error("cannot open '" + path + "' for writing");
  f << content;
  if (!f) throw pyra::config_error("short write to '" + path + "'");
}

// A schedule argument is either a published-schedule name or a path to a JSON
// file holding a bare array (the `schedule` command's output) or any object
// with a "schedule" key (a run config or a `flops` report).
pyra::MergeSchedule resolve_schedule(const std::string& arg) {
  try {
    return pyra::published_schedule(arg);
  } catch (const pyra::schedule_error&) {
    // Not a published name; treat as a file path.
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(arg));
  } catch (const nlohmann::json::parse_error& e) {
    throw pyra::config_error("schedule file '" + arg + "' is not valid JSON: " + e.what());
  }
  pyra::MergeSchedule s;
  if (j.is_array()) {
    s.r = j.get<std::vector<int64_t>>();
  } else if (j.is_object() && j.contains("schedule")) {
    s.r = j.at("schedule").get<std::vector<int64_t>>();
  } else {
    throw pyra::config_error("schedule file '" + arg + "' must hold a JSON array or an object with a \"schedule\" key");
  }
  return s;
}

struct ScheduleArgs {
  std::string arch;
  double ratio = 0.0;
  int64_t constant = -1;
  int64_t final_tokens = 4;
  std::string published;
  bool has_ratio = false, has_constant = false;
};

int run_schedule(const ScheduleArgs& a) {
  pyra::MergeSchedule s;
  int given = static_cast<int>(a.has_ratio) + static_cast<int>(a.has_constant) +
              static_cast<int>(!a.published.empty());
  if (given != 1) {
    throw pyra::config_error("give exactly one of --ratio, --constant, --published");
  }
  if (!a.published.empty()) {
    s = pyra::published_schedule(a.published);
    if (!a.arch.empty()) s.validate_for(pyra::arch_from_name(a.arch));
  } else {
    if (a.arch.empty()) throw pyra::config_error("--arch is required with --ratio or --constant");
    pyra::ArchSpec arch = pyra::arch_from_name(a.arch);
    if (a.has_constant) {
      s = pyra::constant_schedule(arch, a.constant);
    } else {
      pyra::ScheduleSpec spec;
      spec.target_ratio = a.ratio;
      spec.final_tokens = a.final_tokens;
      s = pyra::decreasing_schedule(arch, spec);
    }
  }
  std::cout << nlohmann::json(s.r).dump() << "\n";
  return 0;
}

struct FlopsArgs {
  std::string arch;
  std::string schedule;  // published name or file; empty = no merging
  std::string pyra = "off";
  bool csv = false;
};

int run_flops(const FlopsArgs& a) {
  pyra::ArchSpec arch = pyra::arch_from_name(a.arch);
  pyra::MergeSchedule s;
  if (a.schedule.empty()) {
    s.r.assign(static_cast<size_t>(arch.layers), 0);
  } else {
    s = resolve_schedule(a.schedule);
  }
  if (a.pyra != "on" && a.pyra != "off") throw pyra::config_error("--pyra takes on or off");
  pyra::FlopsReport report = pyra::vit_flops(arch, s, a.pyra == "on");
  if (a.csv) {
    std::cout << pyra::flops_to_csv(report);
  } else {
    nlohmann::ordered_json j = pyra::flops_to_json(report);
    // Echo the schedule so this report can itself feed --schedule.
    nlohmann::ordered_json with_schedule;
    with_schedule["arch"] = j.at("arch");
    with_schedule["schedule"] = s.r;
    for (auto it = ++j.begin(); it != j.end(); ++it) with_schedule[it.key()] = it.value();
    std::cout << with_schedule.dump(2) << "\n";
  }
  return 0;
}

struct TrainArgs {
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  bool has_seed = false;
};

int run_train(const TrainArgs& a) {
  pyra::RunConfig cfg = pyra::run_config_from_string(read_file(a.config_path));
  if (a.has_seed) cfg.set_seed(a.seed);

  std::filesystem::create_directories(a.out_dir);
  const std::string config_str = pyra::run_config_to_string(cfg);
  const std::string ckpt_path = a.out_dir + "/best.ckpt";
  const std::string metrics_path = a.out_dir + "/metrics.jsonl";
  write_file(a.out_dir + "/config.json", config_str);

  std::cerr << "training " << cfg.arch.name << " for " << cfg.train.epochs << " epochs ("
            << pyra::pipeline_name(cfg.train.pipeline) << ", seed " << cfg.seed << ")\n";
  pyra::Model model = pyra::model_from_config(cfg);
  pyra::SyntheticTask task = pyra::task_from_config(cfg);
  pyra::TrainResult result = pyra::train(model, task, cfg.train);

  write_file(metrics_path, pyra::metrics_to_jsonl(result.history));
  // The trainer hands the model back holding the best-val weights.
  pyra::save_checkpoint(ckpt_path, config_str, model.named_parameters());

  nlohmann::ordered_json summary;
  summary["epochs_run"] = result.history.size();
  summary["best_epoch"] = result.best_epoch;
  summary["best_val_acc"] = result.best_val_acc;
  summary["diverged"] = result.diverged;
  summary["checkpoint"] = ckpt_path;
  summary["metrics"] = metrics_path;
  std::cout << summary.dump(2) << "\n";
  if (result.diverged) {
    std::cerr << "training diverged; best checkpoint retained\n";
    return 3;
  }
  return 0;
}

pyra::Model model_from_checkpoint(const pyra::LoadedCheckpoint& ckpt, pyra::RunConfig& cfg_out) {
  cfg_out = pyra::run_config_from_string(ckpt.config_json);
  pyra::Model model = pyra::model_from_config(cfg_out);
  pyra::apply_named_tensors(model.named_parameters(), ckpt.tensors);
  return model;
}

struct EvalArgs {
  std::string checkpoint;
  std::string split = "val";
  uint64_t seed = 0;
  bool has_seed = false;
};

int run_eval(const EvalArgs& a) {
  pyra::LoadedCheckpoint ckpt = pyra::load_checkpoint(a.checkpoint);
  pyra::RunConfig cfg;
  pyra::Model model = model_from_checkpoint(ckpt, cfg);
  pyra::SyntheticTask task = pyra::task_from_config(cfg);
  const auto& samples = task.split(pyra::split_from_name(a.split));
  // Default to the seed the run was trained with, so accuracy reproduces the
  // run's own metrics exactly.
  uint64_t seed = a.has_seed ? a.seed : cfg.seed;
  pyra::EvalResult r = pyra::evaluate(model, samples, seed);

  nlohmann::ordered_json j;
  j["split"] = a.split;
  j["samples"] = samples.size();
  j["accuracy"] = r.accuracy;
  j["loss"] = r.loss;
  std::cout << j.dump(2) << "\n";
  return 0;
}

struct BenchArgs {
  std::string checkpoint;
  int64_t images = 64;
  int64_t repeat = 5;
  uint64_t seed = 0;
};

int run_bench(const BenchArgs& a) {
  if (a.images <= 0 || a.repeat <= 0) throw pyra::config_error("--images and --repeat must be positive");
  pyra::LoadedCheckpoint ckpt = pyra::load_checkpoint(a.checkpoint);
  pyra::RunConfig cfg;
  pyra::Model model = model_from_checkpoint(ckpt, cfg);

  pyra::Rng rng(a.seed, pyra::streams::kData);
  std::vector<pyra::Tensor> images;
  images.reserve(static_cast<size_t>(a.images));
  for (int64_t i = 0; i < a.images; ++i) {
    images.push_back(pyra::gaussian<double>(rng, {cfg.arch.channels, cfg.arch.image_size, cfg.arch.image_size}, 1.0));
  }

  pyra::NoGradGuard ng;
  auto sweep = [&]() {
    pyra::Rng partition(a.seed, pyra::streams::kPartition);
    pyra::ForwardOptions opt;
    opt.partition_rng = &partition;
    double sink = 0.0;
    for (const auto& img : images) sink += pyra::forward(img, model, opt).data()[0];
    return sink;
  };

  volatile double keep = sweep();  // warmup, and defeat dead-code elimination
  std::vector<double> wall_ms;
  for (int64_t k = 0; k < a.repeat; ++k) {
    auto t0 = std::chrono::steady_clock::now();
    keep = keep + sweep();
    auto t1 = std::chrono::steady_clock::now();
    wall_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  (void)keep;

  std::vector<double> sorted = wall_ms;
  std::sort(sorted.begin(), sorted.end());
  double median_ms = sorted[sorted.size() / 2];
  auto ips = [&](double ms) { return static_cast<double>(a.images) / (ms / 1000.0); };

  nlohmann::ordered_json j;
  j["images"] = a.images;
  j["repeat"] = a.repeat;
  j["wall_ms_median"] = median_ms;
  j["wall_ms_min"] = sorted.front();
  j["wall_ms_max"] = sorted.back();
  j["images_per_sec_median"] = ips(median_ms);
  j["images_per_sec_best"] = ips(sorted.front());
  j["images_per_sec_worst"] = ips(sorted.back());
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Token-merging ViT adaptation toolkit: schedules, FLOP reports, training, evaluation, benchmarks"};
  app.require_subcommand(1);

  ScheduleArgs sa;
  CLI::App* sched = app.add_subcommand("schedule", "Solve or look up a per-layer merge schedule (JSON array to stdout)");
  sched->add_option("--arch", sa.arch, "Backbone preset: vit_b, vit_l, tiny");
  sched->add_option("--ratio", sa.ratio, "Target FLOPs ratio F/f (>= 1)")->check(CLI::PositiveNumber);
  sched->add_option("--constant", sa.constant, "Constant merges per layer");
  sched->add_option("--final-tokens", sa.final_tokens, "Tokens that must survive the last layer (with --ratio)");
  sched->add_option("--published", sa.published, "Published schedule name (e.g. vit_b_high)");

  FlopsArgs fa;
  CLI::App* flops = app.add_subcommand("flops", "Per-layer MAC/FLOP report for an arch + schedule");
  flops->add_option("--arch", fa.arch, "Backbone preset")->required();
  flops->add_option("--schedule", fa.schedule, "Published name or JSON file (array, run config, or flops report)");
  flops->add_option("--pyra", fa.pyra, "Include modulation overhead: on or off (default off)");
  flops->add_flag("--csv", fa.csv, "Emit per-layer CSV instead of JSON");

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train", "Train on the seeded synthetic task and save the best checkpoint");
  train->add_option("--config", ta.config_path, "Run config JSON file")->required();
  train->add_option("--out", ta.out_dir, "Output directory (metrics.jsonl, best.ckpt, config.json)")->required();
  CLI::Option* train_seed = train->add_option("--seed", ta.seed, "Override the config seed")->envname("PYRA_SEED");

  EvalArgs ea;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on its task");
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint file from `train`")->required();
  eval->add_option("--split", ea.split, "Split: train, val, or test (default val)");
  CLI::Option* eval_seed =
      eval->add_option("--seed", ea.seed, "Override the evaluation seed (default: the checkpoint's own)");

  BenchArgs ba;
  CLI::App* bench = app.add_subcommand("bench", "Median inference throughput over repeated sweeps");
  bench->add_option("--checkpoint", ba.checkpoint, "Checkpoint file from `train`")->required();
  bench->add_option("--images", ba.images, "Images per sweep (default 64)");
  bench->add_option("--repeat", ba.repeat, "Timed sweeps; the median is reported (default 5)");
  bench->add_option("--seed", ba.seed, "Seed for the generated bench images")->envname("PYRA_SEED");

  sched->callback([&]() {
    sa.has_ratio = sched->count("--ratio") > 0;
    sa.has_constant = sched->count("--constant") > 0;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);  // prints help or the parse diagnostic
    return code == 0 ? 0 : 2;
  }

  try {
    ta.has_seed = train_seed->count() > 0;
    ea.has_seed = eval_seed->count() > 0;
    if (sched->parsed()) return run_schedule(sa);
    if (flops->parsed()) return run_flops(fa);
    if (train->parsed()) return run_train(ta);
    if (eval->parsed()) return run_eval(ea);
    if (bench->parsed()) return run_bench(ba);
    return 2;
  } catch (const pyra::numeric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const pyra::error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
