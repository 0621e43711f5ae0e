#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pyra/arch.hpp"
#include "pyra/data.hpp"
#include "pyra/errors.hpp"
#include "pyra/merge.hpp"
#include "pyra/model.hpp"
#include "pyra/modulation.hpp"
#include "pyra/schedule.hpp"
#include "pyra/trainer.hpp"

namespace pyra {

inline std::string partition_mode_name(PartitionMode m) {
  return m == PartitionMode::kAlternating ? "alternating" : "seeded_random";
}

inline PartitionMode partition_mode_from_name(const std::string& name) {
  if (name == "alternating") return PartitionMode::kAlternating;
  if (name == "seeded_random") return PartitionMode::kSeededRandom;
  throw config_error("unknown partition mode '" + name + "' (expected alternating or seeded_random)");
}

inline std::string pooling_mode_name(PoolingMode m) {
  return m == PoolingMode::kSizeWeighted ? "size_weighted" : "plain";
}

inline PoolingMode pooling_mode_from_name(const std::string& name) {
  if (name == "size_weighted") return PoolingMode::kSizeWeighted;
  if (name == "plain") return PoolingMode::kPlain;
  throw config_error("unknown pooling mode '" + name + "' (expected size_weighted or plain)");
}

// Default adapter rank per backbone preset.
inline int64_t default_lora_rank(const std::string& arch_name) {
  if (arch_name == "vit_b") return 8;
  if (arch_name == "vit_l") return 12;
  return 4;
}

// One flat document describing an entire run: backbone, merge schedule,
// modulation, adapter rank, training recipe, and the synthetic task sizes.
// Loading materializes every default, so a saved config is self-contained,
// and normalizes the schedule sugar keys (constant_r / target_ratio /
// published) into the explicit per-layer array, so saved configs round-trip
// losslessly.
struct RunConfig {
  ArchSpec arch = tiny_test();
  MergeSchedule schedule;  // normalized; zeros(arch.layers) when unspecified
  PyraConfig pyra;
  int64_t lora_rank = default_lora_rank("tiny");
  PartitionMode partition = PartitionMode::kAlternating;
  PoolingMode pooling = PoolingMode::kSizeWeighted;
  TrainConfig train;
  int64_t train_size = 32, val_size = 16, test_size = 16;
  uint64_t seed = 0;

  RunConfig() { schedule.r.assign(static_cast<size_t>(arch.layers), 0); }

  // One seed drives everything: model init, task generation, and the training
  // streams (TrainConfig carries its own copy for the trainer).
  void set_seed(uint64_t s) {
    seed = s;
    train.seed = s;
  }

  void validate() const {
    arch.validate();
    schedule.validate_for(arch);  // accounting level; model init re-checks executability
    pyra.validate();
    train.validate();
    if (lora_rank < 0) throw config_error("config: lora_rank must be non-negative");
    if (train_size < 0 || val_size < 0 || test_size < 0) {
      throw config_error("config: split sizes must be non-negative");
    }
  }
};

inline nlohmann::ordered_json run_config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["arch"] = c.arch.name;
  j["layers"] = c.arch.layers;
  j["width"] = c.arch.width;
  j["heads"] = c.arch.heads;
  j["mlp_ratio"] = c.arch.mlp_ratio;
  j["patch_size"] = c.arch.patch_size;
  j["image_size"] = c.arch.image_size;
  j["channels"] = c.arch.channels;
  j["num_classes"] = c.arch.num_classes;
  j["use_cls"] = c.arch.use_cls;
  j["schedule"] = c.schedule.r;
  j["pyra_enabled"] = c.pyra.enabled;
  j["pyra_mode"] = pyra_mode_name(c.pyra.mode);
  j["pyra_rank_s"] = c.pyra.rank_s;
  j["pyra_gated_hidden"] = c.pyra.gated_hidden;
  j["pyra_init_std"] = c.pyra.init_std;
  j["lora_rank"] = c.lora_rank;
  j["partition"] = partition_mode_name(c.partition);
  j["pooling"] = pooling_mode_name(c.pooling);
  j["epochs"] = c.train.epochs;
  j["warmup_epochs"] = c.train.warmup_epochs;
  j["batch_size"] = c.train.batch_size;
  j["lr_peft"] = c.train.lr_peft;
  j["lr_generators"] = c.train.lr_generators;
  j["weight_decay"] = c.train.weight_decay;
  j["pipeline"] = pipeline_name(c.train.pipeline);
  j["train_size"] = c.train_size;
  j["val_size"] = c.val_size;
  j["test_size"] = c.test_size;
  j["seed"] = c.seed;
  return j;
}

inline std::string run_config_to_string(const RunConfig& c) { return run_config_to_json(c).dump(2) + "\n"; }

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "arch",         "layers",       "width",        "heads",           "mlp_ratio",
      "patch_size",   "image_size",   "channels",     "num_classes",     "use_cls",
      "schedule",     "constant_r",   "target_ratio", "final_tokens",    "published",
      "pyra_enabled", "pyra_mode",    "pyra_rank_s",  "pyra_gated_hidden", "pyra_init_std",
      "lora_rank",    "partition",    "pooling",      "epochs",          "warmup_epochs",
      "batch_size",   "lr_peft",      "lr_generators", "weight_decay",   "pipeline",
      "train_size",   "val_size",     "test_size",    "seed"};
  if (!j.is_object()) throw config_error("config: expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (known.find(it.key()) == known.end()) throw config_error("config: unknown key '" + it.key() + "'");
  }

  RunConfig c;
  c.arch = arch_from_name(j.value("arch", std::string("tiny")));
  auto take_int = [&](const char* key, int64_t& field) {
    if (j.contains(key)) field = j.at(key).get<int64_t>();
  };
  take_int("layers", c.arch.layers);
  take_int("width", c.arch.width);
  take_int("heads", c.arch.heads);
  take_int("mlp_ratio", c.arch.mlp_ratio);
  take_int("patch_size", c.arch.patch_size);
  take_int("image_size", c.arch.image_size);
  take_int("channels", c.arch.channels);
  take_int("num_classes", c.arch.num_classes);
  if (j.contains("use_cls")) c.arch.use_cls = j.at("use_cls").get<bool>();

  int sugar = static_cast<int>(j.contains("schedule")) + static_cast<int>(j.contains("constant_r")) +
              static_cast<int>(j.contains("target_ratio")) + static_cast<int>(j.contains("published"));
  if (sugar > 1) {
    throw config_error("config: give at most one of schedule, constant_r, target_ratio, published");
  }
  if (j.contains("final_tokens") && !j.contains("target_ratio")) {
    throw config_error("config: final_tokens is only meaningful together with target_ratio");
  }
  if (j.contains("schedule")) {
    c.schedule.r = j.at("schedule").get<std::vector<int64_t>>();
  } else if (j.contains("constant_r")) {
    c.schedule = constant_schedule(c.arch, j.at("constant_r").get<int64_t>());
  } else if (j.contains("target_ratio")) {
    ScheduleSpec spec;
    spec.target_ratio = j.at("target_ratio").get<double>();
    spec.final_tokens = j.value("final_tokens", spec.final_tokens);
    c.schedule = decreasing_schedule(c.arch, spec);
  } else if (j.contains("published")) {
    c.schedule = published_schedule(j.at("published").get<std::string>());
  } else {
    c.schedule.r.assign(static_cast<size_t>(c.arch.layers), 0);
  }

  if (j.contains("pyra_enabled")) c.pyra.enabled = j.at("pyra_enabled").get<bool>();
  if (j.contains("pyra_mode")) c.pyra.mode = pyra_mode_from_name(j.at("pyra_mode").get<std::string>());
  take_int("pyra_rank_s", c.pyra.rank_s);
  take_int("pyra_gated_hidden", c.pyra.gated_hidden);
  if (j.contains("pyra_init_std")) c.pyra.init_std = j.at("pyra_init_std").get<double>();

  c.lora_rank = j.contains("lora_rank") ? j.at("lora_rank").get<int64_t>() : default_lora_rank(c.arch.name);
  if (j.contains("partition")) c.partition = partition_mode_from_name(j.at("partition").get<std::string>());
  if (j.contains("pooling")) c.pooling = pooling_mode_from_name(j.at("pooling").get<std::string>());

  take_int("epochs", c.train.epochs);
  take_int("warmup_epochs", c.train.warmup_epochs);
  take_int("batch_size", c.train.batch_size);
  if (j.contains("lr_peft")) c.train.lr_peft = j.at("lr_peft").get<double>();
  if (j.contains("lr_generators")) c.train.lr_generators = j.at("lr_generators").get<double>();
  if (j.contains("weight_decay")) c.train.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("pipeline")) c.train.pipeline = pipeline_from_name(j.at("pipeline").get<std::string>());

  take_int("train_size", c.train_size);
  take_int("val_size", c.val_size);
  take_int("test_size", c.test_size);
  c.set_seed(j.contains("seed") ? j.at("seed").get<uint64_t>() : c.seed);

  c.validate();
  return c;
}

inline RunConfig run_config_from_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw config_error(std::string("config: invalid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

// The model and task a config describes. Model construction enforces the
// stricter executable-schedule validation.
inline Model model_from_config(const RunConfig& c) {
  return init_model<double>(c.arch, c.schedule, c.pyra, c.lora_rank, c.seed, c.partition, c.pooling);
}

inline SyntheticTask task_from_config(const RunConfig& c) {
  return make_synthetic_task(c.arch, c.train_size, c.val_size, c.test_size, c.seed);
}

}  // namespace pyra
