#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pyra/data.hpp"
#include "pyra/errors.hpp"
#include "pyra/model.hpp"
#include "pyra/ops.hpp"
#include "pyra/optimizer.hpp"
#include "pyra/rng.hpp"
#include "pyra/tensor.hpp"

namespace pyra {

enum class Pipeline { kOneStage, kTwoStage };

inline std::string pipeline_name(Pipeline p) {
  return p == Pipeline::kOneStage ? "one_stage" : "two_stage";
}

inline Pipeline pipeline_from_name(const std::string& name) {
  if (name == "one_stage") return Pipeline::kOneStage;
  if (name == "two_stage") return Pipeline::kTwoStage;
  throw config_error("unknown pipeline '" + name + "' (expected one_stage or two_stage)");
}

struct TrainConfig {
  int64_t epochs = 100;
  int64_t warmup_epochs = 10;
  int64_t batch_size = 8;
  double lr_peft = 1e-3;
  double lr_generators = 1e-4;
  double weight_decay = 1e-4;
  uint64_t seed = 0;
  Pipeline pipeline = Pipeline::kOneStage;

  void validate() const {
    if (epochs <= 0) throw config_error("train: epochs must be positive, got " + std::to_string(epochs));
    if (warmup_epochs < 0 || warmup_epochs > epochs) {
      throw config_error("train: warmup_epochs must lie in [0, epochs], got " + std::to_string(warmup_epochs));
    }
    if (batch_size <= 0) throw config_error("train: batch_size must be positive, got " + std::to_string(batch_size));
    // Zero is deliberately allowed: a zero-rate run is the standard control
    // experiment (weights must stay bitwise constant).
    if (lr_peft < 0.0 || lr_generators < 0.0) throw config_error("train: learning rates must be non-negative");
    if (weight_decay < 0.0) throw config_error("train: weight_decay must be non-negative");
  }
};

struct EpochMetrics {
  int64_t epoch = 0;
  double lr = 0.0;  // PEFT rate after warmup/decay scaling
  double train_loss = 0.0;
  double val_acc = 0.0;
};

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::map<std::string, std::vector<double>> best_state;  // trainables at the best-val epoch
  int64_t best_epoch = -1;
  double best_val_acc = 0.0;
  bool diverged = false;
};

// Top-1 accuracy and mean loss over a split. Runs under a no-grad guard with
// its own partition stream so evaluation never advances the training RNG.
// Ties in the logits resolve to the lowest class index.
inline EvalResult evaluate(const Model& model, const std::vector<Sample>& samples, uint64_t seed) {
  if (samples.empty()) throw config_error("evaluate: split is empty");
  NoGradGuard ng;
  Rng partition(seed, streams::kPartition);
  ForwardOptions opt;
  opt.partition_rng = &partition;
  double loss_sum = 0.0;
  int64_t correct = 0;
  for (const auto& s : samples) {
    Tensor logits = forward(s.image, model, opt);
    loss_sum += cross_entropy_logits(logits, s.label).item();
    const auto& v = logits.data();
    size_t arg = 0;
    for (size_t j = 1; j < v.size(); ++j)
      if (v[j] > v[arg]) arg = j;
    if (static_cast<int64_t>(arg) == s.label) ++correct;
  }
  EvalResult r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  r.loss = loss_sum / static_cast<double>(samples.size());
  return r;
}

namespace detail {

inline std::map<std::string, std::vector<double>> snapshot_trainables(const Model& model) {
  std::map<std::string, std::vector<double>> snap;
  for (const auto& [name, t] : model.trainable_parameters()) snap[name] = t.data();
  return snap;
}

inline void restore_trainables(Model& model, const std::map<std::string, std::vector<double>>& snap) {
  for (auto& [name, t] : model.trainable_parameters()) {
    auto it = snap.find(name);
    if (it == snap.end()) throw contract_error("restore: snapshot is missing tensor '" + name + "'");
    if (it->second.size() != t.data().size()) {
      throw contract_error("restore: snapshot size mismatch for tensor '" + name + "'");
    }
    t.data() = it->second;
  }
}

}  // namespace detail

// One- or two-stage PEFT loop over the synthetic task. The backbone stays
// frozen by construction (only requires_grad tensors reach the optimizer);
// generators take lr_generators, everything else trainable takes lr_peft.
// Two-stage: the first half of the epochs runs with merging disabled, which
// keeps the generators out of the graph entirely (they receive no gradient
// and the optimizer skips them), then the second half attaches merging and
// trains adapters and generators jointly. Validation always measures the
// deployed configuration, i.e. with merging active.
//
// On divergence (non-finite loss or NaN gradient) the loop stops, restores
// the best-so-far weights into the model, and returns with `diverged` set;
// the same best-val restore also runs at a normal finish, so after train()
// the model always holds the retained checkpoint.
inline TrainResult train(Model& model, const SyntheticTask& task, const TrainConfig& config) {
  config.validate();
  if (task.train.empty()) throw config_error("train: training split is empty");
  if (task.val.empty()) throw config_error("train: validation split is empty");

  auto trainables = model.trainable_parameters();
  std::vector<LrGroup> groups;
  groups.reserve(trainables.size());
  for (const auto& [name, t] : trainables) {
    groups.push_back(name.rfind("gen.", 0) == 0 ? LrGroup::kGenerators : LrGroup::kPeft);
  }
  OptimConfig oc;
  oc.weight_decay = config.weight_decay;
  AdamW optim(trainables, groups, oc);

  Rng shuffle_rng(config.seed, streams::kShuffle);
  Rng partition_rng(config.seed, streams::kPartition);

  TrainResult result;
  result.best_state = detail::snapshot_trainables(model);  // fallback if epoch 0 already diverges

  const int64_t n = static_cast<int64_t>(task.train.size());
  const int64_t stage1_epochs = config.pipeline == Pipeline::kTwoStage ? config.epochs / 2 : 0;
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  bool diverged = false;
  for (int64_t epoch = 0; epoch < config.epochs && !diverged; ++epoch) {
    const bool merge_now = epoch >= stage1_epochs;
    const double factor = lr_factor(epoch, config.epochs, config.warmup_epochs);
    const double lr_p = config.lr_peft * factor;
    const double lr_g = config.lr_generators * factor;

    shuffle_rng.shuffle(order.begin(), order.end());
    // Per-sample losses land in original-index slots so the epoch mean is
    // reduced in a fixed order, independent of the shuffle.
    std::vector<double> sample_loss(static_cast<size_t>(n), 0.0);
    for (int64_t start = 0; start < n && !diverged; start += config.batch_size) {
      const int64_t stop = std::min(n, start + config.batch_size);
      optim.zero_grad();
      for (int64_t i = start; i < stop; ++i) {
        const int64_t idx = order[static_cast<size_t>(i)];
        const Sample& s = task.train[static_cast<size_t>(idx)];
        ForwardOptions fo;
        fo.merge_enabled = merge_now;
        fo.partition_rng = &partition_rng;
        Tensor loss = cross_entropy_logits(forward(s.image, model, fo), s.label);
        if (!std::isfinite(loss.item())) {
          diverged = true;
          break;
        }
        sample_loss[static_cast<size_t>(idx)] = loss.item();
        backward(loss);
      }
      if (diverged) break;
      try {
        optim.step(lr_p, lr_g, 1.0 / static_cast<double>(stop - start));
      } catch (const numeric_error&) {
        diverged = true;
      }
    }
    if (diverged) break;
    double loss_sum = 0.0;
    for (double v : sample_loss) loss_sum += v;

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr_p;
    m.train_loss = loss_sum / static_cast<double>(n);
    m.val_acc = evaluate(model, task.val, config.seed).accuracy;
    result.history.push_back(m);

    if (result.best_epoch < 0 || m.val_acc > result.best_val_acc) {
      result.best_epoch = epoch;
      result.best_val_acc = m.val_acc;
      result.best_state = detail::snapshot_trainables(model);
    }
  }

  result.diverged = diverged;
  detail::restore_trainables(model, result.best_state);
  return result;
}

// Metrics history as JSON lines, one self-contained record per epoch.
inline std::string metrics_to_jsonl(const std::vector<EpochMetrics>& history) {
  std::string out;
  for (const auto& m : history) {
    nlohmann::ordered_json j;
    j["epoch"] = m.epoch;
    j["lr"] = m.lr;
    j["train_loss"] = m.train_loss;
    j["val_acc"] = m.val_acc;
    out += j.dump();
    out += '\n';
  }
  return out;
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t coords_checked = 0;
  std::string worst;  // "tensor[i] ad=... fd=..." for the worst coordinate
};

// Central finite-difference audit of every trainable tensor against the
// reverse-mode gradients, on one sample's loss with merging active. Before
// checking, every trainable is nudged by small per-coordinate Gaussian noise:
// at the exact zero-init the modulation and adapter gates are closed, which
// would leave whole tensors with legitimately zero gradient and make the
// comparison vacuous. The noise must vary per coordinate — a uniform shift of
// the token generator is orthogonal to the normalized info matrix and keeps
// the gate shut. Intended for the desk-scale preset in 64-bit mode.
inline GradCheckResult grad_check_trainables(Model& model, const Sample& sample, uint64_t seed,
                                             double warm_std = 0.05, double h = 1e-5, double floor = 1e-6) {
  Rng warm(seed, streams::kData);
  auto trainables = model.trainable_parameters();
  for (auto& [name, t] : trainables) {
    for (auto& v : t.data()) v += warm_std * warm.next_gaussian();
  }

  auto loss_value = [&]() {
    // A fresh partition stream per call keeps the loss a fixed function of the
    // parameters even under seeded-random partitioning.
    Rng partition(seed, streams::kPartition);
    ForwardOptions fo;
    fo.partition_rng = &partition;
    return cross_entropy_logits(forward(sample.image, model, fo), sample.label);
  };

  for (auto& [name, t] : trainables) t.zero_grad();
  backward(loss_value());
  std::vector<std::vector<double>> analytic;
  analytic.reserve(trainables.size());
  for (auto& [name, t] : trainables) {
    analytic.push_back(t.grad().empty() ? std::vector<double>(t.data().size(), 0.0) : t.grad());
  }

  GradCheckResult report;
  for (size_t pi = 0; pi < trainables.size(); ++pi) {
    auto& [name, t] = trainables[pi];
    auto& data = t.data();
    for (size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      double plus, minus;
      {
        NoGradGuard ng;
        data[i] = saved + h;
        plus = loss_value().item();
        data[i] = saved - h;
        minus = loss_value().item();
      }
      data[i] = saved;
      const double fd = (plus - minus) / (2.0 * h);
      const double ad = analytic[pi][i];
      const double err = std::abs(ad - fd) / std::max({floor, std::abs(ad), std::abs(fd)});
      ++report.coords_checked;
      if (err > report.max_rel_err) {
        report.max_rel_err = err;
        report.worst = name + "[" + std::to_string(i) + "] ad=" + std::to_string(ad) + " fd=" + std::to_string(fd);
      }
    }
  }
  for (auto& [name, t] : trainables) t.zero_grad();
  return report;
}

}  // namespace pyra
