#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "pyra/arch.hpp"
#include "pyra/errors.hpp"

namespace pyra {

// Per-layer token-merge counts.
struct MergeSchedule {
  std::vector<int64_t> r;

  int64_t layers() const { return static_cast<int64_t>(r.size()); }
  int64_t total() const { return std::accumulate(r.begin(), r.end(), int64_t{0}); }  // R

  static MergeSchedule zeros(int64_t layers) {
    MergeSchedule s;
    s.r.assign(static_cast<size_t>(layers), 0);
    return s;
  }

  // Accounting-level feasibility: entries are non-negative and the running
  // total always leaves at least one mergeable token alive (every merge needs
  // a surviving target, so cumulative merges may never reach T). This is the
  // contract required by the FLOP model and the schedule constructors; the
  // canonical constant plans satisfy it even though their tail layers ask for
  // more pairs than one bipartite round can form.
  void validate_for(const ArchSpec& arch) const {
    if (layers() != arch.layers) {
      throw schedule_error("schedule has " + std::to_string(layers()) + " entries for " +
                           std::to_string(arch.layers) + " layers");
    }
    int64_t remaining = arch.patch_tokens();
    for (int64_t l = 0; l < layers(); ++l) {
      int64_t rl = r[static_cast<size_t>(l)];
      if (rl < 0) {
        throw schedule_error("layer " + std::to_string(l + 1) + ": negative merge count " + std::to_string(rl));
      }
      if (rl > remaining - 1) {
        throw schedule_error("layer " + std::to_string(l + 1) + ": r = " + std::to_string(rl) +
                             " would consume every one of the " + std::to_string(remaining) +
                             " remaining mergeable tokens; at least one target must survive");
      }
      remaining -= rl;
    }
  }

  // Execution-level feasibility: additionally enforces the bipartite cap
  // r <= floor(remaining/2) at every layer, since one matching round can
  // merge at most one token per source-set slot. The forward pass uses this;
  // pure accounting does not, because the published constant plans violate
  // the cap in their final layers while their headline cost figures charge
  // the nominal counts.
  void validate_executable_for(const ArchSpec& arch) const {
    validate_for(arch);
    int64_t remaining = arch.patch_tokens();
    for (int64_t l = 0; l < layers(); ++l) {
      int64_t rl = r[static_cast<size_t>(l)];
      if (rl > remaining / 2) {
        throw schedule_error("layer " + std::to_string(l + 1) + ": r = " + std::to_string(rl) +
                             " exceeds the bipartite cap floor(remaining/2) = " + std::to_string(remaining / 2) +
                             " with " + std::to_string(remaining) + " mergeable tokens left");
      }
      remaining -= rl;
    }
  }
};

inline MergeSchedule constant_schedule(const ArchSpec& arch, int64_t r_per_layer) {
  MergeSchedule s;
  s.r.assign(static_cast<size_t>(arch.layers), r_per_layer);
  s.validate_for(arch);
  return s;
}

// Analytic decreasing-schedule request: compress an F-FLOP model to f FLOPs
// (ratio F/f), leaving final_tokens patch tokens after the last layer.
struct ScheduleSpec {
  double target_ratio = 1.0;  // F/f
  int64_t final_tokens = 4;   // t
};

// Closed-form approximate solution: r-hat^l = floor((g(l-1) - g(l)) * (T - t))
// with g(x) = (1 - x/L)^(F/f - 1). A 1e-9 guard inside the floor recovers
// analytically integer values that IEEE rounding can land a hair below; the
// guard cannot push the telescoping total past T - t (see tests). The output
// always satisfies the accounting invariant (total <= T - t keeps t tokens
// alive), but ratios just above 1 yield tail-heavy profiles that fail the
// bipartite cap, so executable callers must still run
// validate_executable_for.
inline MergeSchedule decreasing_schedule(const ArchSpec& arch, const ScheduleSpec& spec) {
  if (spec.target_ratio < 1.0) {
    throw schedule_error("decreasing_schedule: target ratio F/f must be >= 1, got " +
                         std::to_string(spec.target_ratio));
  }
  int64_t T = arch.patch_tokens();
  if (spec.final_tokens < 1 || spec.final_tokens >= T) {
    throw schedule_error("decreasing_schedule: final tokens must lie in [1, " + std::to_string(T) +
                         "), got " + std::to_string(spec.final_tokens));
  }
  int64_t L = arch.layers;
  double exponent = spec.target_ratio - 1.0;
  double budget = static_cast<double>(T - spec.final_tokens);
  auto g = [&](int64_t x) {
    return std::pow(1.0 - static_cast<double>(x) / static_cast<double>(L), exponent);
  };
  MergeSchedule s;
  s.r.reserve(static_cast<size_t>(L));
  for (int64_t l = 1; l <= L; ++l) {
    double v = (g(l - 1) - g(l)) * budget;
    s.r.push_back(static_cast<int64_t>(std::floor(v + 1e-9)));
  }
  return s;
}

// Hand-adjusted schedules used for the published high-compression benchmark,
// plus the constant low-compression ones.
inline MergeSchedule published_schedule(const std::string& name) {
  MergeSchedule s;
  if (name == "vit_b_high" || name == "deit_b_high") {
    s.r = {40, 34, 30, 24, 18, 14, 10, 8, 4, 4, 3, 3};
  } else if (name == "vit_l_high") {
    s.r = {20, 19, 18, 17, 15, 13, 13, 12, 10, 9, 8, 6, 6, 4, 4, 4, 3, 3, 2, 2, 1, 1, 1, 1};
  } else if (name == "vit_b_low") {
    s.r.assign(12, 16);
  } else if (name == "vit_l_low") {
    s.r.assign(24, 8);
  } else {
    throw schedule_error("unknown published schedule '" + name +
                         "' (expected vit_b_high, vit_l_high, vit_b_low, vit_l_low, or deit_b_high)");
  }
  return s;
}

}  // namespace pyra
