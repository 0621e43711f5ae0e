#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pyra/arch.hpp"
#include "pyra/schedule.hpp"

namespace pyra {

// MAC breakdown for one transformer block.
struct LayerFlops {
  int64_t layer = 0;             // 1-based block index
  int64_t tokens = 0;            // block-input token count after merging
  int64_t mac_attn_linear = 0;   // QKV + output projection: 4 n D^2
  int64_t mac_attn_quad = 0;     // score and value products: 2 n^2 D
  int64_t mac_ffn = 0;           // 2 * mlp_ratio * n D^2
  int64_t mac_total = 0;
};

// Transparent FLOP model. Counts multiply-accumulates once; the doubled
// multiply+add convention is carried alongside. Normalization, softmax and
// activation costs are excluded.
struct FlopsReport {
  std::string arch_name;
  std::vector<LayerFlops> per_layer;
  int64_t patch_embed_macs = 0;  // includes the classifier head readout
  int64_t head_macs = 0;
  int64_t pyra_macs = 0;         // 4 R D when modulation is enabled
  int64_t total_macs = 0;
  int64_t total_flops_2x = 0;    // 2 * total_macs
  int64_t base_total_macs = 0;   // identity-schedule total, same toggles
  double ratio = 1.0;            // total_macs / base_total_macs, in (0, 1]
  double speedup = 1.0;          // base_total_macs / total_macs
};

namespace detail {
inline int64_t block_macs(int64_t n, int64_t d, int64_t mlp_ratio, LayerFlops* row) {
  int64_t attn_linear = 4 * n * d * d;
  int64_t attn_quad = 2 * n * n * d;
  int64_t ffn = 2 * mlp_ratio * n * d * d;
  if (row != nullptr) {
    row->tokens = n;
    row->mac_attn_linear = attn_linear;
    row->mac_attn_quad = attn_quad;
    row->mac_ffn = ffn;
    row->mac_total = attn_linear + attn_quad + ffn;
  }
  return attn_linear + attn_quad + ffn;
}

inline int64_t totals_only(const ArchSpec& arch, const MergeSchedule& schedule, bool include_pyra,
                           bool count_patch_embed) {
  int64_t n = arch.seq_len();
  int64_t total = 0;
  for (int64_t l = 0; l < arch.layers; ++l) {
    n -= schedule.r[static_cast<size_t>(l)];
    total += block_macs(n, arch.width, arch.mlp_ratio, nullptr);
  }
  if (include_pyra) total += 4 * schedule.total() * arch.width;
  if (count_patch_embed) {
    total += arch.patch_tokens() * arch.width * arch.patch_dim();
    total += arch.num_classes * arch.width;
  }
  return total;
}
}  // namespace detail

// Per-layer and total MAC accounting for an architecture under a merge
// schedule. Every block is charged at its post-merge token count (merging
// precedes attention). count_patch_embed also covers the classifier head.
inline FlopsReport vit_flops(const ArchSpec& arch, const MergeSchedule& schedule, bool include_pyra,
                             bool count_patch_embed = true) {
  arch.validate();
  schedule.validate_for(arch);
  FlopsReport report;
  report.arch_name = arch.name;
  int64_t n = arch.seq_len();
  int64_t blocks_total = 0;
  for (int64_t l = 0; l < arch.layers; ++l) {
    n -= schedule.r[static_cast<size_t>(l)];
    LayerFlops row;
    row.layer = l + 1;
    blocks_total += detail::block_macs(n, arch.width, arch.mlp_ratio, &row);
    report.per_layer.push_back(row);
  }
  report.pyra_macs = include_pyra ? 4 * schedule.total() * arch.width : 0;
  if (count_patch_embed) {
    report.patch_embed_macs = arch.patch_tokens() * arch.width * arch.patch_dim();
    report.head_macs = arch.num_classes * arch.width;
  }
  report.total_macs = blocks_total + report.pyra_macs + report.patch_embed_macs + report.head_macs;
  report.total_flops_2x = 2 * report.total_macs;
  report.base_total_macs =
      detail::totals_only(arch, MergeSchedule::zeros(arch.layers), include_pyra, count_patch_embed);
  report.ratio = static_cast<double>(report.total_macs) / static_cast<double>(report.base_total_macs);
  report.speedup = static_cast<double>(report.base_total_macs) / static_cast<double>(report.total_macs);
  return report;
}

// FLOP-proxy speedup between two reports of the same architecture. Wall-clock
// speedups are measured by the benchmark command, never asserted here.
inline double speedup_estimate(const FlopsReport& base, const FlopsReport& compressed) {
  if (base.arch_name != compressed.arch_name) {
    throw contract_error("speedup_estimate: reports describe different architectures ('" + base.arch_name +
                         "' vs '" + compressed.arch_name + "')");
  }
  return static_cast<double>(base.total_macs) / static_cast<double>(compressed.total_macs);
}

inline nlohmann::ordered_json flops_to_json(const FlopsReport& r) {
  nlohmann::ordered_json j;
  j["arch"] = r.arch_name;
  j["per_layer"] = nlohmann::ordered_json::array();
  for (const auto& row : r.per_layer) {
    nlohmann::ordered_json rj;
    rj["layer"] = row.layer;
    rj["tokens"] = row.tokens;
    rj["mac_attn_linear"] = row.mac_attn_linear;
    rj["mac_attn_quad"] = row.mac_attn_quad;
    rj["mac_ffn"] = row.mac_ffn;
    rj["mac_total"] = row.mac_total;
    j["per_layer"].push_back(rj);
  }
  j["patch_embed_macs"] = r.patch_embed_macs;
  j["head_macs"] = r.head_macs;
  j["pyra_macs"] = r.pyra_macs;
  j["total_macs"] = r.total_macs;
  j["total_flops_2x"] = r.total_flops_2x;
  j["base_total_macs"] = r.base_total_macs;
  j["ratio"] = r.ratio;
  j["speedup"] = r.speedup;
  return j;
}

inline std::string flops_to_csv(const FlopsReport& r) {
  std::ostringstream os;
  os << "layer,tokens,mac_attn_linear,mac_attn_quad,mac_ffn,mac_total\n";
  for (const auto& row : r.per_layer) {
    os << row.layer << ',' << row.tokens << ',' << row.mac_attn_linear << ',' << row.mac_attn_quad << ','
       << row.mac_ffn << ',' << row.mac_total << '\n';
  }
  return os.str();
}

}  // namespace pyra
