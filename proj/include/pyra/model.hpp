#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pyra/arch.hpp"
#include "pyra/errors.hpp"
#include "pyra/merge.hpp"
#include "pyra/modulation.hpp"
#include "pyra/ops.hpp"
#include "pyra/rng.hpp"
#include "pyra/schedule.hpp"
#include "pyra/tensor.hpp"

namespace pyra {

// Low-rank adapter on the fused QKV projection: one shared down-projection
// feeding all three attention matrices. The up-projection starts at zero, so
// a fresh adapter leaves the frozen projection bit-identical.
template <typename T>
struct LoRAAdapterT {
  TensorT<T> down;  // A: [h x D], Gaussian init
  TensorT<T> up;    // B: [3D x h], zero init

  int64_t rank() const { return down.defined() ? down.size(0) : 0; }
  int64_t param_count() const { return down.numel() + up.numel(); }
};

using LoRAAdapter = LoRAAdapterT<double>;

// Frozen transformer-block weights (pre-norm layout).
template <typename T>
struct BlockWeightsT {
  TensorT<T> ln1_gain, ln1_shift;
  TensorT<T> qkv_w, qkv_b;        // [3D x D], [3D]
  TensorT<T> proj_w, proj_b;      // [D x D], [D]
  TensorT<T> ln2_gain, ln2_shift;
  TensorT<T> ffn_in_w, ffn_in_b;  // [mD x D], [mD]
  TensorT<T> ffn_out_w, ffn_out_b;  // [D x mD], [D]

  std::vector<std::pair<std::string, TensorT<T>>> named_tensors() const {
    return {{"ln1_gain", ln1_gain},   {"ln1_shift", ln1_shift}, {"qkv_w", qkv_w},
            {"qkv_b", qkv_b},         {"proj_w", proj_w},       {"proj_b", proj_b},
            {"ln2_gain", ln2_gain},   {"ln2_shift", ln2_shift}, {"ffn_in_w", ffn_in_w},
            {"ffn_in_b", ffn_in_b},   {"ffn_out_w", ffn_out_w}, {"ffn_out_b", ffn_out_b}};
  }
};

using BlockWeights = BlockWeightsT<double>;

// Complete model: frozen backbone plus the three trainable component groups
// (adapters, modulation generators, classification head).
template <typename T>
struct ModelStateT {
  ArchSpec arch;
  MergeSchedule schedule;
  PyraConfig pyra;
  int64_t lora_rank = 0;
  PartitionMode partition_mode = PartitionMode::kAlternating;
  PoolingMode pooling = PoolingMode::kSizeWeighted;

  TensorT<T> patch_w, patch_b;  // [D x C P^2], [D]
  TensorT<T> cls_token;         // [1 x D]
  TensorT<T> pos_embed;         // [seq_len x D]
  std::vector<BlockWeightsT<T>> blocks;
  TensorT<T> final_ln_gain, final_ln_shift;
  TensorT<T> head_w, head_b;  // [classes x D], [classes]
  std::vector<LoRAAdapterT<T>> adapters;
  std::vector<GeneratorsT<T>> generators;

  // Stable enumeration of every tensor in the model, frozen and trainable.
  std::vector<std::pair<std::string, TensorT<T>>> named_parameters() const {
    std::vector<std::pair<std::string, TensorT<T>>> out;
    out.emplace_back("patch_embed.w", patch_w);
    out.emplace_back("patch_embed.b", patch_b);
    if (cls_token.defined()) out.emplace_back("cls_token", cls_token);
    out.emplace_back("pos_embed", pos_embed);
    for (size_t l = 0; l < blocks.size(); ++l)
      for (auto& [n, t] : blocks[l].named_tensors())
        out.emplace_back("block." + std::to_string(l) + "." + n, t);
    out.emplace_back("final_ln.gain", final_ln_gain);
    out.emplace_back("final_ln.shift", final_ln_shift);
    out.emplace_back("head.w", head_w);
    out.emplace_back("head.b", head_b);
    for (size_t l = 0; l < adapters.size(); ++l) {
      out.emplace_back("adapter." + std::to_string(l) + ".down", adapters[l].down);
      out.emplace_back("adapter." + std::to_string(l) + ".up", adapters[l].up);
    }
    for (size_t l = 0; l < generators.size(); ++l)
      for (auto& [n, t] : generators[l].named_tensors())
        out.emplace_back("gen." + std::to_string(l) + "." + n, t);
    return out;
  }

  // Trainable subset: adapters, generators, head. The backbone never appears.
  std::vector<std::pair<std::string, TensorT<T>>> trainable_parameters() const {
    std::vector<std::pair<std::string, TensorT<T>>> out;
    for (auto& [n, t] : named_parameters())
      if (t.requires_grad()) out.emplace_back(n, t);
    return out;
  }
};

using Model = ModelStateT<double>;

namespace detail {
template <typename T>
TensorT<T> frozen_gaussian(Rng& rng, const Shape& shape, double stddev) {
  return gaussian<T>(rng, shape, stddev);
}
}  // namespace detail

// Builds a model with a randomly initialized frozen backbone. Each component
// group draws from its own seeded stream, so enabling or disabling one group
// (say, the generators) never shifts another group's initial values — the
// property behind the bit-identical "fresh modulation changes nothing" check.
template <typename T>
ModelStateT<T> init_model(const ArchSpec& arch, const MergeSchedule& schedule, const PyraConfig& pyra,
                          int64_t lora_rank, uint64_t seed,
                          PartitionMode partition_mode = PartitionMode::kAlternating,
                          PoolingMode pooling = PoolingMode::kSizeWeighted) {
  arch.validate();
  schedule.validate_executable_for(arch);
  pyra.validate();
  if (lora_rank < 0) throw config_error("init_model: lora_rank must be non-negative");

  const int64_t D = arch.width;
  const int64_t m = arch.mlp_ratio;
  const double std0 = 0.02;

  ModelStateT<T> s;
  s.arch = arch;
  s.schedule = schedule;
  s.pyra = pyra;
  s.lora_rank = lora_rank;
  s.partition_mode = partition_mode;
  s.pooling = pooling;

  Rng backbone(seed, streams::kBackbone);
  s.patch_w = detail::frozen_gaussian<T>(backbone, {D, arch.patch_dim()}, std0);
  s.patch_b = TensorT<T>::zeros({D});
  if (arch.use_cls) s.cls_token = detail::frozen_gaussian<T>(backbone, {1, D}, std0);
  s.pos_embed = detail::frozen_gaussian<T>(backbone, {arch.seq_len(), D}, std0);
  for (int64_t l = 0; l < arch.layers; ++l) {
    BlockWeightsT<T> b;
    b.ln1_gain = TensorT<T>::full({D}, T(1));
    b.ln1_shift = TensorT<T>::zeros({D});
    b.qkv_w = detail::frozen_gaussian<T>(backbone, {3 * D, D}, std0);
    b.qkv_b = TensorT<T>::zeros({3 * D});
    b.proj_w = detail::frozen_gaussian<T>(backbone, {D, D}, std0);
    b.proj_b = TensorT<T>::zeros({D});
    b.ln2_gain = TensorT<T>::full({D}, T(1));
    b.ln2_shift = TensorT<T>::zeros({D});
    b.ffn_in_w = detail::frozen_gaussian<T>(backbone, {m * D, D}, std0);
    b.ffn_in_b = TensorT<T>::zeros({m * D});
    b.ffn_out_w = detail::frozen_gaussian<T>(backbone, {D, m * D}, std0);
    b.ffn_out_b = TensorT<T>::zeros({D});
    s.blocks.push_back(std::move(b));
  }
  s.final_ln_gain = TensorT<T>::full({D}, T(1));
  s.final_ln_shift = TensorT<T>::zeros({D});

  Rng head(seed, streams::kHead);
  s.head_w = gaussian<T>(head, {arch.num_classes, D}, std0);
  s.head_b = TensorT<T>::zeros({arch.num_classes});
  s.head_w.set_requires_grad(true);
  s.head_b.set_requires_grad(true);

  if (lora_rank > 0) {
    Rng adapters(seed, streams::kAdapters);
    for (int64_t l = 0; l < arch.layers; ++l) {
      LoRAAdapterT<T> a;
      a.down = gaussian<T>(adapters, {lora_rank, D}, std0);
      a.up = TensorT<T>::zeros({3 * D, lora_rank});
      a.down.set_requires_grad(true);
      a.up.set_requires_grad(true);
      s.adapters.push_back(std::move(a));
    }
  }

  if (pyra.enabled) {
    Rng generators(seed, streams::kGenerators);
    for (int64_t l = 0; l < arch.layers; ++l) {
      s.generators.push_back(
          make_generators<T>(l, schedule.r[static_cast<size_t>(l)], D, pyra, generators));
    }
  }
  return s;
}

// Flattens one image [C x img x img] into patch rows [T x C P^2]; row t holds
// patch (t / grid, t % grid) with entries ordered channel-major, then row,
// then column within the patch. The result is a constant leaf.
template <typename T>
TensorT<T> extract_patches(const TensorT<T>& image, const ArchSpec& arch) {
  if (image.rank() != 3 || image.size(0) != arch.channels || image.size(1) != arch.image_size ||
      image.size(2) != arch.image_size) {
    throw dimension_error("extract_patches: expected image [" + std::to_string(arch.channels) + " x " +
                          std::to_string(arch.image_size) + " x " + std::to_string(arch.image_size) +
                          "], got " + shape_str(image.shape()));
  }
  const int64_t g = arch.grid();
  const int64_t P = arch.patch_size;
  const int64_t C = arch.channels;
  const int64_t img = arch.image_size;
  auto out = TensorT<T>::zeros({arch.patch_tokens(), arch.patch_dim()});
  for (int64_t t = 0; t < arch.patch_tokens(); ++t) {
    const int64_t gy = t / g, gx = t % g;
    T* row = out.data().data() + t * arch.patch_dim();
    int64_t k = 0;
    for (int64_t c = 0; c < C; ++c)
      for (int64_t py = 0; py < P; ++py)
        for (int64_t px = 0; px < P; ++px)
          row[k++] = image.data()[static_cast<size_t>((c * img + gy * P + py) * img + gx * P + px)];
  }
  return out;
}

// Projects patches to width D, prepends the CLS token, and adds positional
// embeddings. Output is [seq_len x D].
template <typename T>
TensorT<T> patch_embed(const TensorT<T>& image, const ModelStateT<T>& state) {
  auto patches = extract_patches(image, state.arch);
  auto x = linear(patches, state.patch_w, state.patch_b);
  if (state.arch.use_cls) x = concat_rows(state.cls_token, x);
  return add(x, state.pos_embed);
}

// Fused QKV projection with the low-rank delta: base + up(down(x)). Without
// an adapter (or with a fresh zero up-projection) this is exactly the frozen
// projection.
template <typename T>
TensorT<T> lora_qkv_forward(const TensorT<T>& x, const BlockWeightsT<T>& block,
                            const LoRAAdapterT<T>* adapter) {
  auto base = linear(x, block.qkv_w, block.qkv_b);
  if (adapter == nullptr || !adapter->down.defined()) return base;
  auto delta = linear(linear(x, adapter->down), adapter->up);
  return add(base, delta);
}

namespace detail {
template <typename T>
TensorT<T> attention(const TensorT<T>& x_norm, const BlockWeightsT<T>& block,
                     const LoRAAdapterT<T>* adapter, int64_t heads) {
  const int64_t D = x_norm.size(1);
  const int64_t dh = D / heads;
  auto qkvm = lora_qkv_forward(x_norm, block, adapter);
  auto q = slice_cols(qkvm, 0, D);
  auto k = slice_cols(qkvm, D, D);
  auto v = slice_cols(qkvm, 2 * D, D);
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<TensorT<T>> ctx;
  ctx.reserve(static_cast<size_t>(heads));
  for (int64_t h = 0; h < heads; ++h) {
    auto qh = slice_cols(q, h * dh, dh);
    auto kh = slice_cols(k, h * dh, dh);
    auto vh = slice_cols(v, h * dh, dh);
    auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
    ctx.push_back(matmul(softmax(scores, 1), vh));
  }
  return linear(concat_cols(ctx), block.proj_w, block.proj_b);
}

template <typename T>
TensorT<T> ffn(const TensorT<T>& x_norm, const BlockWeightsT<T>& block) {
  return linear(gelu(linear(x_norm, block.ffn_in_w, block.ffn_in_b)), block.ffn_out_w, block.ffn_out_b);
}

constexpr double kLnEps = 1e-6;
}  // namespace detail

// Per-forward switches. merge_enabled = false runs every block at full token
// count regardless of the schedule (used by the staged training recipe);
// partition_rng feeds the seeded-random partition mode.
struct ForwardOptions {
  bool merge_enabled = true;
  Rng* partition_rng = nullptr;
};

// One encoder block: token merge (with optional modulation of the merged
// sources) at block input, then pre-norm attention and FFN residual stages.
// Returns the reduced token matrix and the updated per-token sizes.
template <typename T>
std::pair<TensorT<T>, TokenSizes> block_forward(const TensorT<T>& x_in, const TokenSizes& sizes_in,
                                                int64_t layer, const ModelStateT<T>& state,
                                                const ForwardOptions& opt = {}) {
  if (layer < 0 || layer >= state.arch.layers) throw index_error("block_forward: layer out of range");
  TensorT<T> x = x_in;
  TokenSizes sizes = sizes_in;
  const int64_t r = state.schedule.r[static_cast<size_t>(layer)];
  if (opt.merge_enabled && r > 0) {
    const int64_t lead = state.arch.use_cls ? 1 : 0;
    const int64_t mergeable = x.size(0) - lead;
    auto part = with_offset(partition_tokens(mergeable, state.partition_mode, opt.partition_rng), lead);
    auto match = match_pairs(x, part, r);
    static const GeneratorsT<T> no_generators{};
    const GeneratorsT<T>& gen =
        state.pyra.enabled ? state.generators[static_cast<size_t>(layer)] : no_generators;
    auto modulated = modulate_for_merge(x, match, gen, state.pyra);
    auto merged = merge_pairs(x, sizes, match, state.pooling, modulated);
    x = merged.tokens;
    sizes = merged.sizes;
  }
  const auto& block = state.blocks[static_cast<size_t>(layer)];
  const LoRAAdapterT<T>* adapter =
      state.adapters.empty() ? nullptr : &state.adapters[static_cast<size_t>(layer)];
  auto x_ln1 = layernorm_affine(x, block.ln1_gain, block.ln1_shift, detail::kLnEps);
  x = add(x, detail::attention(x_ln1, block, adapter, state.arch.heads));
  auto x_ln2 = layernorm_affine(x, block.ln2_gain, block.ln2_shift, detail::kLnEps);
  x = add(x, detail::ffn(x_ln2, block));
  return {x, sizes};
}

// Full forward pass for one image: embedding, all blocks, final norm, and the
// classifier readout (CLS token, or mean pooling when the model has none).
// Returns unnormalized logits of shape {num_classes}.
template <typename T>
TensorT<T> forward(const TensorT<T>& image, const ModelStateT<T>& state, const ForwardOptions& opt = {}) {
  auto x = patch_embed(image, state);
  TokenSizes sizes(static_cast<size_t>(x.size(0)), 1);
  for (int64_t l = 0; l < state.arch.layers; ++l) {
    auto [xn, sn] = block_forward(x, sizes, l, state, opt);
    x = xn;
    sizes = sn;
  }
  x = layernorm_affine(x, state.final_ln_gain, state.final_ln_shift, detail::kLnEps);
  TensorT<T> readout;
  if (state.arch.use_cls) {
    readout = gather_rows(x, {0});
  } else {
    auto mean_row = TensorT<T>::full({1, x.size(0)}, T(1) / static_cast<T>(x.size(0)));
    readout = matmul(mean_row, x);
  }
  auto logits = linear(readout, state.head_w, state.head_b);
  return reshape(logits, {state.arch.num_classes});
}

// Parameter accounting split by component. Percentages follow the convention
// of measuring trainable weight against the frozen backbone, reported both
// without and with the classifier head in the base.
struct ParamReport {
  int64_t backbone = 0;  // frozen weights, head excluded
  int64_t head = 0;
  int64_t adapters = 0;
  int64_t generators = 0;

  int64_t trainable() const { return head + adapters + generators; }
  int64_t total() const { return backbone + trainable(); }
  double adapter_pct_headless() const { return 100.0 * adapters / static_cast<double>(backbone); }
  double adapter_pct_with_head() const { return 100.0 * adapters / static_cast<double>(backbone + head); }
  double peft_pct_headless() const {
    return 100.0 * (adapters + generators) / static_cast<double>(backbone);
  }
  double peft_pct_with_head() const {
    return 100.0 * (adapters + generators) / static_cast<double>(backbone + head);
  }
};

// Closed-form parameter report; agrees with count_params on an instantiated
// model (tested at desk scale) without materializing full-size weights.
inline ParamReport param_report(const ArchSpec& arch, int64_t lora_rank, const MergeSchedule& schedule,
                                const PyraConfig& pyra) {
  arch.validate();
  const int64_t D = arch.width;
  const int64_t m = arch.mlp_ratio;
  ParamReport rep;
  const int64_t per_block = (3 + 1 + 2 * m) * D * D + (3 + 1 + m + 1 + 4) * D;
  rep.backbone = arch.layers * per_block          // encoder blocks
                 + D * arch.patch_dim() + D       // patch projection
                 + (arch.use_cls ? D : 0)         // CLS token
                 + arch.seq_len() * D             // positional embedding
                 + 2 * D;                         // final layernorm
  rep.head = arch.num_classes * D + arch.num_classes;
  rep.adapters = lora_rank > 0 ? arch.layers * 4 * D * lora_rank : 0;
  rep.generators = pyra.enabled ? modulation_param_count(arch, schedule, pyra) : 0;
  return rep;
}

// Same report measured by walking an instantiated model's tensors.
template <typename T>
ParamReport count_params(const ModelStateT<T>& state) {
  ParamReport rep;
  for (auto& [name, t] : state.named_parameters()) {
    if (name.rfind("adapter.", 0) == 0) {
      rep.adapters += t.numel();
    } else if (name.rfind("gen.", 0) == 0) {
      rep.generators += t.numel();
    } else if (name.rfind("head.", 0) == 0) {
      rep.head += t.numel();
    } else {
      rep.backbone += t.numel();
    }
  }
  return rep;
}

}  // namespace pyra
