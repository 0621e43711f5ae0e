#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pyra/arch.hpp"
#include "pyra/errors.hpp"
#include "pyra/merge.hpp"
#include "pyra/ops.hpp"
#include "pyra/rng.hpp"
#include "pyra/schedule.hpp"
#include "pyra/tensor.hpp"

namespace pyra {

// Modulation variants. kFull is the production form; the rest are ablations
// that isolate individual pieces of the mechanism.
enum class PyraMode {
  kFull,          // parallel channel/token weight yielding with sigmoid gates
  kOnlyWr,        // channel generator alone supplies the gate
  kOnlyWD,        // token generator alone supplies the gate
  kNoActivation,  // same algebra as kFull with the sigmoids removed
  kDirectW,       // a static per-layer weight matrix replaces the generators
  kGated,         // a small MLP over the info matrix produces the gate
};

inline std::string pyra_mode_name(PyraMode m) {
  switch (m) {
    case PyraMode::kFull: return "full";
    case PyraMode::kOnlyWr: return "only_Wr";
    case PyraMode::kOnlyWD: return "only_WD";
    case PyraMode::kNoActivation: return "no_activation";
    case PyraMode::kDirectW: return "direct_W";
    case PyraMode::kGated: return "gated";
  }
  throw config_error("pyra_mode_name: unhandled mode");
}

inline PyraMode pyra_mode_from_name(const std::string& name) {
  if (name == "full") return PyraMode::kFull;
  if (name == "only_Wr") return PyraMode::kOnlyWr;
  if (name == "only_WD") return PyraMode::kOnlyWD;
  if (name == "no_activation") return PyraMode::kNoActivation;
  if (name == "direct_W") return PyraMode::kDirectW;
  if (name == "gated") return PyraMode::kGated;
  throw config_error("unknown modulation mode '" + name +
                     "' (expected full, only_Wr, only_WD, no_activation, direct_W, or gated)");
}

struct PyraConfig {
  bool enabled = false;
  PyraMode mode = PyraMode::kFull;
  int64_t rank_s = 1;       // generator rank; > 1 only with kFull
  int64_t gated_hidden = 4; // hidden width d of the kGated MLP
  double init_std = 0.02;   // Gaussian stddev for non-zero-initialized weights

  void validate() const {
    if (rank_s < 1) throw config_error("pyra rank_s must be >= 1, got " + std::to_string(rank_s));
    if (rank_s > 1 && mode != PyraMode::kFull) {
      throw config_error("pyra rank_s > 1 is only defined for the full mode, not " + pyra_mode_name(mode));
    }
    if (gated_hidden < 1) {
      throw config_error("pyra gated_hidden must be >= 1, got " + std::to_string(gated_hidden));
    }
    if (init_std < 0.0) throw config_error("pyra init_std must be non-negative");
  }
};

// Per-layer modulation parameters. Only the tensors used by the configured
// mode are allocated; all are leaves with requires_grad set.
template <typename T>
struct GeneratorsT {
  int64_t layer_index = 0;
  int64_t r = 0;      // scheduled merge count for this layer
  int64_t width = 0;  // D
  PyraMode mode = PyraMode::kFull;
  int64_t rank_s = 1;

  TensorT<T> channel_gen;  // [r x s], Gaussian init: yields the channel weights
  TensorT<T> token_gen;    // [s x D], zero init: yields the token weights
  TensorT<T> direct;       // [D x r], zero init (kDirectW)
  TensorT<T> mlp_w1;       // [d x D], Gaussian init (kGated)
  TensorT<T> mlp_b1;       // [d x 1], zero init
  TensorT<T> mlp_w2;       // [D x d], zero init: keeps the gate closed at start
  TensorT<T> mlp_b2;       // [D x 1], zero init

  std::vector<std::pair<std::string, TensorT<T>>> named_tensors() const {
    std::vector<std::pair<std::string, TensorT<T>>> out;
    auto push = [&out](const char* n, const TensorT<T>& t) {
      if (t.defined()) out.emplace_back(n, t);
    };
    push("channel", channel_gen);
    push("token", token_gen);
    push("direct", direct);
    push("mlp_w1", mlp_w1);
    push("mlp_b1", mlp_b1);
    push("mlp_w2", mlp_w2);
    push("mlp_b2", mlp_b2);
    return out;
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : named_tensors()) n += t.numel();
    return n;
  }
};

using Generators = GeneratorsT<double>;

template <typename T>
GeneratorsT<T> make_generators(int64_t layer_index, int64_t r, int64_t width, const PyraConfig& config,
                               Rng& rng) {
  config.validate();
  if (r < 0) throw schedule_error("make_generators: negative r");
  if (width < 1) throw config_error("make_generators: width must be positive");
  GeneratorsT<T> g;
  g.layer_index = layer_index;
  g.r = r;
  g.width = width;
  g.mode = config.mode;
  g.rank_s = config.rank_s;
  const int64_t s = config.rank_s;
  const int64_t d = config.gated_hidden;
  switch (config.mode) {
    case PyraMode::kFull:
    case PyraMode::kNoActivation:
      g.channel_gen = gaussian<T>(rng, {r, s}, config.init_std);
      g.token_gen = TensorT<T>::zeros({s, width});
      break;
    case PyraMode::kOnlyWr:
      g.channel_gen = gaussian<T>(rng, {r, 1}, config.init_std);
      break;
    case PyraMode::kOnlyWD:
      g.token_gen = TensorT<T>::zeros({1, width});
      break;
    case PyraMode::kDirectW:
      g.direct = TensorT<T>::zeros({width, r});
      break;
    case PyraMode::kGated:
      g.mlp_w1 = gaussian<T>(rng, {d, width}, config.init_std);
      g.mlp_b1 = TensorT<T>::zeros({d, 1});
      g.mlp_w2 = TensorT<T>::zeros({width, d});
      g.mlp_b2 = TensorT<T>::zeros({width, 1});
      break;
  }
  for (auto& [name, t] : g.named_tensors()) t.set_requires_grad(true);
  return g;
}

namespace detail {
constexpr double kInfoEps = 1e-6;
}

// Token information matrix: per merged pair, the channel-wise normalized sum
// of source and target features. Input matrices are [D x r] with one column
// per pair; normalization runs over the channel axis of each column and
// carries no learnable affine.
template <typename T>
TensorT<T> build_info_matrix(const TensorT<T>& m_s, const TensorT<T>& m_t) {
  detail::require_rank(m_s, 2, "build_info_matrix");
  detail::require_same_shape(m_s, m_t, "build_info_matrix");
  auto summed = add(m_s, m_t);
  // layernorm normalizes the trailing axis, so flip columns into rows.
  return transpose(layernorm(transpose(summed), detail::kInfoEps));
}

// The two decoupled weight blocks produced from one info matrix. Neither
// product depends on the other, so they can be evaluated in either order (or
// concurrently) with identical results.
template <typename T>
struct ModulationWeightsT {
  TensorT<T> delta_D;  // [D x s]: per-channel weights
  TensorT<T> delta_r;  // [s x r]: per-token weights
};

using ModulationWeights = ModulationWeightsT<double>;

template <typename T>
ModulationWeightsT<T> yield_weights(const TensorT<T>& m_info, const GeneratorsT<T>& gen) {
  detail::require_rank(m_info, 2, "yield_weights");
  if (!gen.channel_gen.defined() || !gen.token_gen.defined()) {
    throw config_error("yield_weights: generators lack the channel/token pair (mode " +
                       pyra_mode_name(gen.mode) + ")");
  }
  if (m_info.size(1) != gen.channel_gen.size(0)) {
    throw schedule_error("yield_weights: info matrix has r = " + std::to_string(m_info.size(1)) +
                         " columns but the layer " + std::to_string(gen.layer_index) +
                         " generator was built for r = " + std::to_string(gen.channel_gen.size(0)));
  }
  ModulationWeightsT<T> w;
  w.delta_D = matmul(m_info, gen.channel_gen);
  w.delta_r = matmul(gen.token_gen, m_info);
  return w;
}

// Re-activation: every element of m_s is scaled by
//   1 + (2 sigmoid(delta_r) - 1) * 2 sigmoid(delta_D),
// a factor strictly inside (-1, 3). With delta_r = 0 the gate is exactly
// zero, so the output is bitwise equal to m_s: a freshly built generator set
// (token weights start at zero) leaves the network's behavior untouched.
template <typename T>
TensorT<T> reactivate(const TensorT<T>& m_s, const ModulationWeightsT<T>& weights) {
  detail::require_rank(m_s, 2, "reactivate");
  const int64_t d = m_s.size(0);
  const int64_t r = m_s.size(1);
  if (weights.delta_D.size(0) != d || weights.delta_D.size(1) != 1 || weights.delta_r.size(0) != 1 ||
      weights.delta_r.size(1) != r) {
    throw dimension_error("reactivate: weights (" + shape_str(weights.delta_D.shape()) + ", " +
                          shape_str(weights.delta_r.shape()) + ") do not match sources " +
                          shape_str(m_s.shape()));
  }
  auto channel_gain = scale(sigmoid(broadcast_cols(weights.delta_D, r)), T(2));
  auto m_hat = hadamard(channel_gain, m_s);
  auto token_gate = add_scalar(scale(sigmoid(broadcast_rows(weights.delta_r, d)), T(2)), T(-1));
  return add(m_s, hadamard(token_gate, m_hat));
}

namespace detail {
// Shared form of the single-gate variants: m_s + (2 sigmoid(delta) - 1) * m_s.
template <typename T>
TensorT<T> gate_modulate(const TensorT<T>& m_s, const TensorT<T>& delta) {
  auto gate = add_scalar(scale(sigmoid(delta), T(2)), T(-1));
  return add(m_s, hadamard(gate, m_s));
}

template <typename T>
TensorT<T> gated_mlp_delta(const TensorT<T>& m_info, const GeneratorsT<T>& gen) {
  const int64_t r = m_info.size(1);
  auto hidden = add(matmul(gen.mlp_w1, m_info), broadcast_cols(gen.mlp_b1, r));
  auto act = gelu(hidden);
  return add(matmul(gen.mlp_w2, act), broadcast_cols(gen.mlp_b2, r));
}
}  // namespace detail

// Produces the modulated source matrix [D x r] that merge_pairs consumes.
// Only sources are modulated; targets pass through untouched. Disabled
// configurations (or r = 0 layers) return the gathered sources as-is, which
// keeps the plain merging path bit-identical.
template <typename T>
TensorT<T> modulate_for_merge(const TensorT<T>& x, const MatchResult& match, const GeneratorsT<T>& gen,
                              const PyraConfig& config) {
  config.validate();
  auto gm = group_matrices(x, match);
  if (!config.enabled || match.r() == 0) return gm.sources;
  if (gen.r != match.r()) {
    throw schedule_error("modulate_for_merge: layer " + std::to_string(gen.layer_index) +
                         " generators were built for r = " + std::to_string(gen.r) + " but the match has r = " +
                         std::to_string(match.r()));
  }
  switch (config.mode) {
    case PyraMode::kFull: {
      auto info = build_info_matrix(gm.sources, gm.targets);
      auto w = yield_weights(info, gen);
      if (config.rank_s == 1) return reactivate(gm.sources, w);
      // rank s > 1: the outer product of the two weight blocks forms a full
      // [D x r] gate and the intermediate channel scaling is skipped.
      return detail::gate_modulate(gm.sources, matmul(w.delta_D, w.delta_r));
    }
    case PyraMode::kOnlyWr: {
      auto info = build_info_matrix(gm.sources, gm.targets);
      auto delta = matmul(info, gen.channel_gen);  // [D x 1]
      return detail::gate_modulate(gm.sources, broadcast_cols(delta, match.r()));
    }
    case PyraMode::kOnlyWD: {
      auto info = build_info_matrix(gm.sources, gm.targets);
      auto delta = matmul(gen.token_gen, info);  // [1 x r]
      return detail::gate_modulate(gm.sources, broadcast_rows(delta, gen.width));
    }
    case PyraMode::kNoActivation: {
      auto info = build_info_matrix(gm.sources, gm.targets);
      auto w = yield_weights(info, gen);
      auto m_hat = hadamard(scale(broadcast_cols(w.delta_D, match.r()), T(2)), gm.sources);
      auto gate = add_scalar(scale(broadcast_rows(w.delta_r, gen.width), T(2)), T(-1));
      return add(gm.sources, hadamard(gate, m_hat));
    }
    case PyraMode::kDirectW:
      return detail::gate_modulate(gm.sources, gen.direct);
    case PyraMode::kGated: {
      auto info = build_info_matrix(gm.sources, gm.targets);
      return detail::gate_modulate(gm.sources, detail::gated_mlp_delta(info, gen));
    }
  }
  throw config_error("modulate_for_merge: unhandled mode");
}

struct PyraComplexity {
  int64_t params = 0;
  int64_t flops = 0;  // extra multiply-adds per forward pass
};

// Cost of the production (full, rank 1) configuration: one channel generator
// of r entries plus one token generator of D entries per layer, and 4 r D
// extra operations per layer (two [D x r] products against the info matrix
// plus the two elementwise modulation stages).
inline PyraComplexity pyra_complexity(const ArchSpec& arch, const MergeSchedule& schedule) {
  schedule.validate_for(arch);
  PyraComplexity c;
  c.params = arch.layers * arch.width + schedule.total();
  c.flops = 4 * schedule.total() * arch.width;
  return c;
}

// Trainable-parameter total for any modulation variant over a schedule.
// Layers keep their generators even when their scheduled r is zero (the
// token-side tensors are schedule-independent), matching the closed forms:
//   full/no_activation: s (L D + R); only_Wr: R; only_WD: L D;
//   direct_W: D R; gated: L (2 D d + d + D).
inline int64_t modulation_param_count(const ArchSpec& arch, const MergeSchedule& schedule,
                                      const PyraConfig& config) {
  config.validate();
  if (schedule.layers() != arch.layers) {
    throw schedule_error("modulation_param_count: schedule/arch layer mismatch");
  }
  const int64_t L = arch.layers;
  const int64_t D = arch.width;
  const int64_t R = schedule.total();
  const int64_t s = config.rank_s;
  const int64_t d = config.gated_hidden;
  switch (config.mode) {
    case PyraMode::kFull:
    case PyraMode::kNoActivation: return s * (L * D + R);
    case PyraMode::kOnlyWr: return R;
    case PyraMode::kOnlyWD: return L * D;
    case PyraMode::kDirectW: return D * R;
    case PyraMode::kGated: return L * (2 * D * d + d + D);
  }
  throw config_error("modulation_param_count: unhandled mode");
}

}  // namespace pyra
