#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_set>
#include <vector>

#include "pyra/ops.hpp"
#include "pyra/rng.hpp"
#include "pyra/tensor.hpp"

namespace pyra {

enum class PartitionMode { kAlternating, kSeededRandom };
enum class PoolingMode { kSizeWeighted, kPlain };

// Bipartite split of the mergeable tokens. Indices refer to rows of whatever
// token matrix the caller hands to match_pairs; both lists are ascending.
struct TokenPartition {
  std::vector<int64_t> g1;  // merge-source candidates, |g1| = floor(n/2)
  std::vector<int64_t> g2;  // merge-target candidates
};

// Splits n mergeable tokens (indexed 0..n-1) into two groups. Alternating
// mode pairs even positions into g1 and odd into g2; an odd leftover token
// joins g2 so that |g1| is always floor(n/2). Random mode shuffles positions
// first, then applies the same floor split.
inline TokenPartition partition_tokens(int64_t n, PartitionMode mode, Rng* rng = nullptr) {
  if (n < 2) throw partition_error("partition_tokens: need at least 2 mergeable tokens, got " + std::to_string(n));
  TokenPartition part;
  int64_t half = n / 2;
  if (mode == PartitionMode::kAlternating) {
    for (int64_t i = 0; i < n; ++i) {
      if (i % 2 == 0 && static_cast<int64_t>(part.g1.size()) < half)
        part.g1.push_back(i);
      else
        part.g2.push_back(i);
    }
  } else {
    if (rng == nullptr) throw partition_error("partition_tokens: seeded-random mode requires an rng");
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    rng->shuffle(order.begin(), order.end());
    part.g1.assign(order.begin(), order.begin() + half);
    part.g2.assign(order.begin() + half, order.end());
    std::sort(part.g1.begin(), part.g1.end());
    std::sort(part.g2.begin(), part.g2.end());
  }
  return part;
}

// Shifts all indices (e.g. by +1 to step over a leading CLS row).
inline TokenPartition with_offset(TokenPartition part, int64_t offset) {
  for (auto& i : part.g1) i += offset;
  for (auto& i : part.g2) i += offset;
  return part;
}

// Selected merge pairs. Sources are distinct; targets may repeat; scores are
// sorted non-increasing with deterministic tie-breaks.
struct MatchResult {
  struct Pair {
    int64_t src = 0;  // row index of the token to merge away (from g1)
    int64_t dst = 0;  // row index of the token it merges into (from g2)
  };
  std::vector<Pair> pairs;
  std::vector<double> scores;

  int64_t r() const { return static_cast<int64_t>(pairs.size()); }
};

namespace detail {
inline double cosine_rows(const std::vector<double>& data, int64_t d, int64_t row_a, int64_t row_b) {
  const double* a = data.data() + row_a * d;
  const double* b = data.data() + row_b * d;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int64_t j = 0; j < d; ++j) {
    dot += a[j] * b[j];
    na += a[j] * a[j];
    nb += b[j] * b[j];
  }
  if (na == 0.0 || nb == 0.0) return -std::numeric_limits<double>::infinity();
  return dot / (std::sqrt(na) * std::sqrt(nb));
}
}  // namespace detail

// For every g1 token finds its most similar g2 token by cosine similarity,
// then keeps the r pairs with the highest scores. Ties prefer the lower g1
// position, then the lower g2 position. Zero-norm tokens score -infinity.
// Similarities are read from token values only; no gradient flows through
// the discrete selection.
template <typename T>
MatchResult match_pairs(const TensorT<T>& x, const TokenPartition& part, int64_t r) {
  detail::require_rank(x, 2, "match_pairs");
  int64_t n = x.size(0), d = x.size(1);
  if (r < 0) throw schedule_error("match_pairs: negative r");
  if (r > static_cast<int64_t>(part.g1.size())) {
    throw schedule_error("match_pairs: r = " + std::to_string(r) + " exceeds |G1| = " +
                         std::to_string(part.g1.size()));
  }
  for (int64_t i : part.g1)
    if (i < 0 || i >= n) throw index_error("match_pairs: g1 index " + std::to_string(i) + " out of range");
  for (int64_t i : part.g2)
    if (i < 0 || i >= n) throw index_error("match_pairs: g2 index " + std::to_string(i) + " out of range");

  MatchResult result;
  if (r == 0) return result;
  if (part.g2.empty()) throw partition_error("match_pairs: empty target group");

  std::vector<double> values(x.data().size());
  for (size_t i = 0; i < values.size(); ++i) values[i] = static_cast<double>(x.data()[i]);

  struct Candidate {
    size_t g1_pos;
    int64_t src, dst;
    double score;
  };
  std::vector<Candidate> cands;
  cands.reserve(part.g1.size());
  for (size_t a = 0; a < part.g1.size(); ++a) {
    double best = -std::numeric_limits<double>::infinity();
    size_t best_b = 0;
    bool first = true;
    for (size_t b = 0; b < part.g2.size(); ++b) {
      double s = detail::cosine_rows(values, d, part.g1[a], part.g2[b]);
      if (first || s > best) {  // strict >: equal scores keep the lower g2 position
        best = s;
        best_b = b;
        first = false;
      }
    }
    cands.push_back({a, part.g1[a], part.g2[best_b], best});
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& x_, const Candidate& y_) {
    if (x_.score != y_.score) return x_.score > y_.score;
    return x_.g1_pos < y_.g1_pos;
  });
  result.pairs.reserve(static_cast<size_t>(r));
  result.scores.reserve(static_cast<size_t>(r));
  for (int64_t k = 0; k < r; ++k) {
    result.pairs.push_back({cands[static_cast<size_t>(k)].src, cands[static_cast<size_t>(k)].dst});
    result.scores.push_back(cands[static_cast<size_t>(k)].score);
  }
  return result;
}

// Per-token weights: how many original patch tokens each current token
// represents. Conserved under merging.
using TokenSizes = std::vector<int64_t>;

template <typename T>
struct MergeOutput {
  TensorT<T> tokens;  // [(n - r) x D]
  TokenSizes sizes;
};

// Pools each selected source token into its target and drops the source row.
// Unselected tokens keep their original relative order. When a modulated
// source matrix is supplied (PYRA active), its columns replace the raw source
// token values in the pooling; targets are never modified before pooling.
template <typename T>
MergeOutput<T> merge_pairs(const TensorT<T>& x, const TokenSizes& sizes, const MatchResult& match,
                           PoolingMode pooling = PoolingMode::kSizeWeighted,
                           const TensorT<T>& modulated_sources = TensorT<T>()) {
  detail::require_rank(x, 2, "merge_pairs");
  int64_t n = x.size(0), d = x.size(1), r = match.r();
  if (static_cast<int64_t>(sizes.size()) != n) {
    throw dimension_error("merge_pairs: have " + std::to_string(sizes.size()) + " sizes for " +
                          std::to_string(n) + " tokens");
  }
  for (int64_t s : sizes)
    if (s <= 0) throw contract_error("merge_pairs: token sizes must be positive");
  if (r == 0) return {x, sizes};

  std::unordered_set<int64_t> source_set;
  std::vector<int64_t> src_rows, dst_rows;
  src_rows.reserve(static_cast<size_t>(r));
  dst_rows.reserve(static_cast<size_t>(r));
  for (const auto& p : match.pairs) {
    if (p.src < 0 || p.src >= n || p.dst < 0 || p.dst >= n)
      throw index_error("merge_pairs: pair (" + std::to_string(p.src) + ", " + std::to_string(p.dst) +
                        ") out of range");
    if (!source_set.insert(p.src).second)
      throw contract_error("merge_pairs: duplicate source token " + std::to_string(p.src));
    src_rows.push_back(p.src);
    dst_rows.push_back(p.dst);
  }
  for (int64_t t : dst_rows)
    if (source_set.count(t)) throw contract_error("merge_pairs: token " + std::to_string(t) + " is both source and target");

  if (modulated_sources.defined()) {
    if (modulated_sources.rank() != 2 || modulated_sources.size(0) != d || modulated_sources.size(1) != r) {
      throw dimension_error("merge_pairs: modulated sources must be [" + std::to_string(d) + " x " +
                            std::to_string(r) + "], got " + shape_str(modulated_sources.shape()));
    }
  }

  // Surviving rows in original order, and their output positions.
  std::vector<int64_t> keep;
  keep.reserve(static_cast<size_t>(n - r));
  std::vector<int64_t> out_pos(static_cast<size_t>(n), -1);
  for (int64_t i = 0; i < n; ++i) {
    if (!source_set.count(i)) {
      out_pos[static_cast<size_t>(i)] = static_cast<int64_t>(keep.size());
      keep.push_back(i);
    }
  }

  // One weighted scatter pools everything: survivors contribute to their own
  // output row, sources to their target's output row.
  TensorT<T> survivor_values = gather_rows(x, keep);
  TensorT<T> source_values =
      modulated_sources.defined() ? transpose(modulated_sources) : gather_rows(x, src_rows);
  TensorT<T> all_values = concat_rows(survivor_values, source_values);

  std::vector<int64_t> targets;
  std::vector<double> weights;
  targets.reserve(static_cast<size_t>(n));
  weights.reserve(static_cast<size_t>(n));
  for (int64_t i : keep) {
    targets.push_back(out_pos[static_cast<size_t>(i)]);
    weights.push_back(pooling == PoolingMode::kSizeWeighted ? static_cast<double>(sizes[static_cast<size_t>(i)])
                                                            : 1.0);
  }
  for (int64_t k = 0; k < r; ++k) {
    targets.push_back(out_pos[static_cast<size_t>(dst_rows[static_cast<size_t>(k)])]);
    weights.push_back(pooling == PoolingMode::kSizeWeighted
                          ? static_cast<double>(sizes[static_cast<size_t>(src_rows[static_cast<size_t>(k)])])
                          : 1.0);
  }

  MergeOutput<T> out;
  out.tokens = scatter_mean_rows(all_values, targets, weights, n - r);
  out.sizes.resize(static_cast<size_t>(n - r));
  for (int64_t i : keep) out.sizes[static_cast<size_t>(out_pos[static_cast<size_t>(i)])] = sizes[static_cast<size_t>(i)];
  for (int64_t k = 0; k < r; ++k) {
    out.sizes[static_cast<size_t>(out_pos[static_cast<size_t>(dst_rows[static_cast<size_t>(k)])])] +=
        sizes[static_cast<size_t>(src_rows[static_cast<size_t>(k)])];
  }
  return out;
}

template <typename T>
struct GroupMatrices {
  TensorT<T> sources;  // [D x r], column k = token m_k
  TensorT<T> targets;  // [D x r], column k = token n_k
};

// Collects the paired tokens as column matrices (sources distinct, targets
// possibly repeated). Gradients flow back through the gathers.
template <typename T>
GroupMatrices<T> group_matrices(const TensorT<T>& x, const MatchResult& match) {
  detail::require_rank(x, 2, "group_matrices");
  std::vector<int64_t> src, dst;
  src.reserve(match.pairs.size());
  dst.reserve(match.pairs.size());
  for (const auto& p : match.pairs) {
    src.push_back(p.src);
    dst.push_back(p.dst);
  }
  GroupMatrices<T> g;
  g.sources = transpose(gather_rows(x, src));
  g.targets = transpose(gather_rows(x, dst));
  return g;
}

}  // namespace pyra
