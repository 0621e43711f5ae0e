#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pyra/errors.hpp"
#include "pyra/tensor.hpp"

namespace pyra {

struct OptimConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Which learning rate a parameter follows. Generators take their own rate;
// adapters and the head share the standard fine-tuning rate.
enum class LrGroup { kPeft, kGenerators };

// Adaptive-moment optimizer with decoupled weight decay. Moment buffers exist
// only for the registered (trainable) tensors; each tensor's update depends
// solely on its own gradient and buffers, so registration order is
// irrelevant to the result. Parameters whose gradient is empty this step are
// skipped entirely — no moment update and no decay — which keeps untouched
// component groups (e.g. generators during a merge-free first stage) exactly
// at their current values.
template <typename T>
class AdamWT {
 public:
  AdamWT(std::vector<std::pair<std::string, TensorT<T>>> params, std::vector<LrGroup> groups,
         OptimConfig config = {})
      : config_(config) {
    if (params.size() != groups.size()) {
      throw contract_error("AdamW: params and groups must align");
    }
    for (size_t i = 0; i < params.size(); ++i) {
      Slot s;
      s.name = params[i].first;
      s.param = params[i].second;
      s.group = groups[i];
      s.m.assign(s.param.data().size(), T(0));
      s.v.assign(s.param.data().size(), T(0));
      slots_.push_back(std::move(s));
    }
  }

  int64_t step_count() const { return step_; }

  void zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
  }

  // One update with the current gradients. grad_scale is folded into each
  // gradient first (averaging over a batch whose losses were backpropagated
  // one by one).
  void step(double lr_peft, double lr_generators, double grad_scale = 1.0) {
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (auto& s : slots_) {
      auto& grad = s.param.grad();
      if (grad.empty()) continue;
      const double lr = s.group == LrGroup::kGenerators ? lr_generators : lr_peft;
      auto& w = s.param.data();
      for (size_t i = 0; i < w.size(); ++i) {
        double g = static_cast<double>(grad[i]) * grad_scale;
        if (!std::isfinite(g)) {
          throw numeric_error("AdamW: non-finite gradient in '" + s.name + "' at coordinate " +
                              std::to_string(i));
        }
        double m = config_.beta1 * static_cast<double>(s.m[i]) + (1.0 - config_.beta1) * g;
        double v = config_.beta2 * static_cast<double>(s.v[i]) + (1.0 - config_.beta2) * g * g;
        s.m[i] = static_cast<T>(m);
        s.v[i] = static_cast<T>(v);
        double update = (m / bc1) / (std::sqrt(v / bc2) + config_.eps);
        // Decay is decoupled: applied to the weight itself, not the gradient.
        w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * update -
                              lr * config_.weight_decay * static_cast<double>(w[i]));
      }
    }
  }

 private:
  struct Slot {
    std::string name;
    TensorT<T> param;
    LrGroup group;
    std::vector<T> m, v;
  };
  OptimConfig config_;
  std::vector<Slot> slots_;
  int64_t step_ = 0;
};

using AdamW = AdamWT<double>;

// Warmup-then-cosine learning-rate profile, evaluated per epoch: linear ramp
// from zero to the peak across warmup_epochs, then cosine decay reaching zero
// at `epochs`.
inline double lr_factor(int64_t epoch, int64_t epochs, int64_t warmup_epochs) {
  if (epochs < 1) throw config_error("lr_factor: epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs > epochs) {
    throw config_error("lr_factor: warmup must lie in [0, epochs]");
  }
  if (epoch < 0 || epoch >= epochs) throw config_error("lr_factor: epoch out of range");
  if (warmup_epochs > 0 && epoch < warmup_epochs) {
    return static_cast<double>(epoch) / static_cast<double>(warmup_epochs);
  }
  if (epochs == warmup_epochs) return 1.0;
  double progress = static_cast<double>(epoch - warmup_epochs) / static_cast<double>(epochs - warmup_epochs);
  return 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
}

}  // namespace pyra
