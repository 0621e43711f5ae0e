#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pyra/tensor.hpp"

namespace pyra {

namespace detail {

// Builds an op output node. Parent edges and the backward closure are only
// recorded when gradients are enabled and at least one input needs them;
// otherwise the result is a plain leaf holding the value.
template <typename T>
TensorT<T> make_op(Shape shape, std::vector<T> value, std::vector<TensorT<T>> inputs,
                   std::function<void(NodeT<T>&)> backward_fn) {
  auto n = std::make_shared<NodeT<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (grad_mode() && needs) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const auto& in : inputs) n->parents.push_back(in.node_ptr());
    n->backward_fn = std::move(backward_fn);
  }
  return TensorT<T>(std::move(n));
}

template <typename T>
void require_rank(const TensorT<T>& x, int64_t r, const char* op) {
  if (x.rank() != r) {
    throw dimension_error(std::string(op) + ": expected rank " + std::to_string(r) + " tensor, got " +
                          shape_str(x.shape()));
  }
}

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (!same_shape(a, b)) {
    throw dimension_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::make_op<T>(a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    for (int p = 0; p < 2; ++p) {
      auto& par = *self.parents[p];
      if (!par.requires_grad) continue;
      par.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) par.grad[i] += self.grad[i];
    }
  });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::make_op<T>(a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    }
  });
}

template <typename T>
TensorT<T> hadamard(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "hadamard");
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return detail::make_op<T>(a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& x, T c) {
  std::vector<T> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = c * x.data()[i];
  return detail::make_op<T>(x.shape(), std::move(out), {x}, [c](NodeT<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += c * self.grad[i];
  });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& x, T c) {
  std::vector<T> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + c;
  return detail::make_op<T>(x.shape(), std::move(out), {x}, [](NodeT<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}
}  // namespace detail

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  std::vector<T> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid_scalar(x.data()[i]);
  return detail::make_op<T>(x.shape(), std::move(out), {x}, [](NodeT<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      T s = self.value[i];
      p.grad[i] += self.grad[i] * s * (T(1) - s);
    }
  });
}

// Exact (erf-based) GELU.
template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  std::vector<T> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    double v = static_cast<double>(x.data()[i]);
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  }
  return detail::make_op<T>(x.shape(), std::move(out), {x}, [](NodeT<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      double v = static_cast<double>(p.value[i]);
      double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      p.grad[i] += self.grad[i] * static_cast<T>(cdf + v * pdf);
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax / layer norm
// ---------------------------------------------------------------------------

// Numerically stabilized softmax along `axis` (max subtraction per slice).
template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int64_t axis) {
  if (x.rank() == 0) throw dimension_error("softmax: scalar input");
  if (axis < 0 || axis >= x.rank()) {
    throw dimension_error("softmax: axis " + std::to_string(axis) + " out of range for " +
                          shape_str(x.shape()));
  }
  const auto& shp = x.shape();
  int64_t len = shp[static_cast<size_t>(axis)];
  int64_t inner = 1, outer = 1;
  for (int64_t i = axis + 1; i < x.rank(); ++i) inner *= shp[static_cast<size_t>(i)];
  for (int64_t i = 0; i < axis; ++i) outer *= shp[static_cast<size_t>(i)];

  std::vector<T> out(x.data().size());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      auto idx = [&](int64_t t) { return static_cast<size_t>((o * len + t) * inner + in); };
      T mx = x.data()[idx(0)];
      for (int64_t t = 1; t < len; ++t) mx = std::max(mx, x.data()[idx(t)]);
      T denom = T(0);
      for (int64_t t = 0; t < len; ++t) {
        T e = std::exp(x.data()[idx(t)] - mx);
        out[idx(t)] = e;
        denom += e;
      }
      for (int64_t t = 0; t < len; ++t) out[idx(t)] /= denom;
    }
  }
  return detail::make_op<T>(x.shape(), std::move(out), {x}, [len, inner, outer](NodeT<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t in = 0; in < inner; ++in) {
        auto idx = [&](int64_t t) { return static_cast<size_t>((o * len + t) * inner + in); };
        T dot = T(0);
        for (int64_t t = 0; t < len; ++t) dot += self.grad[idx(t)] * self.value[idx(t)];
        for (int64_t t = 0; t < len; ++t) {
          p.grad[idx(t)] += self.value[idx(t)] * (self.grad[idx(t)] - dot);
        }
      }
    }
  });
}

namespace detail {
// Shared forward for affine-free layer norm over the last axis; returns the
// normalized values and fills per-row mean / inverse std-dev.
template <typename T>
std::vector<T> layernorm_forward(const TensorT<T>& x, double eps, std::vector<T>& mean_out,
                                 std::vector<T>& inv_std_out) {
  if (x.rank() == 0) throw dimension_error("layernorm: scalar input");
  int64_t len = x.shape().back();
  int64_t rows = x.numel() / len;
  std::vector<T> out(x.data().size());
  mean_out.resize(static_cast<size_t>(rows));
  inv_std_out.resize(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const T* px = x.data().data() + r * len;
    T mu = T(0);
    for (int64_t j = 0; j < len; ++j) mu += px[j];
    mu /= static_cast<T>(len);
    T var = T(0);
    for (int64_t j = 0; j < len; ++j) {
      T d = px[j] - mu;
      var += d * d;
    }
    var /= static_cast<T>(len);
    T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
    mean_out[static_cast<size_t>(r)] = mu;
    inv_std_out[static_cast<size_t>(r)] = inv;
    T* po = out.data() + r * len;
    for (int64_t j = 0; j < len; ++j) po[j] = (px[j] - mu) * inv;
  }
  return out;
}

// Gradient of affine-free layer norm given upstream dy (already multiplied by
// the affine gain when applicable) and normalized values y.
template <typename T>
void layernorm_backward_into(NodeT<T>& px_node, const std::vector<T>& dy, const std::vector<T>& y,
                             const std::vector<T>& inv_std, int64_t len) {
  px_node.ensure_grad();
  int64_t rows = static_cast<int64_t>(y.size()) / len;
  for (int64_t r = 0; r < rows; ++r) {
    const T* pdy = dy.data() + r * len;
    const T* py = y.data() + r * len;
    T* pdx = px_node.grad.data() + r * len;
    T mean_dy = T(0), mean_dyy = T(0);
    for (int64_t j = 0; j < len; ++j) {
      mean_dy += pdy[j];
      mean_dyy += pdy[j] * py[j];
    }
    mean_dy /= static_cast<T>(len);
    mean_dyy /= static_cast<T>(len);
    T inv = inv_std[static_cast<size_t>(r)];
    for (int64_t j = 0; j < len; ++j) {
      pdx[j] += inv * (pdy[j] - mean_dy - py[j] * mean_dyy);
    }
  }
}
}  // namespace detail

// Affine-free layer norm over the last axis: zero mean, unit variance per row.
template <typename T>
TensorT<T> layernorm(const TensorT<T>& x, double eps) {
  std::vector<T> mean, inv_std;
  std::vector<T> out = detail::layernorm_forward(x, eps, mean, inv_std);
  int64_t len = x.shape().back();
  return detail::make_op<T>(x.shape(), std::move(out), {x}, [inv_std, len](NodeT<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    detail::layernorm_backward_into(p, self.grad, self.value, inv_std, len);
  });
}

// Layer norm with learnable gain/shift over the last axis.
template <typename T>
TensorT<T> layernorm_affine(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& shift,
                            double eps) {
  int64_t len = x.shape().back();
  if (gain.numel() != len || shift.numel() != len) {
    throw dimension_error("layernorm_affine: gain/shift size must match last dim " + std::to_string(len) +
                          ", got " + shape_str(gain.shape()) + " and " + shape_str(shift.shape()));
  }
  std::vector<T> mean, inv_std;
  std::vector<T> norm = detail::layernorm_forward(x, eps, mean, inv_std);
  std::vector<T> out(norm.size());
  int64_t rows = x.numel() / len;
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < len; ++j) {
      size_t i = static_cast<size_t>(r * len + j);
      out[i] = gain.data()[static_cast<size_t>(j)] * norm[i] + shift.data()[static_cast<size_t>(j)];
    }
  }
  return detail::make_op<T>(
      x.shape(), std::move(out), {x, gain, shift},
      [norm, inv_std, len, rows](NodeT<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        if (pg.requires_grad) {
          pg.ensure_grad();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < len; ++j)
              pg.grad[static_cast<size_t>(j)] +=
                  self.grad[static_cast<size_t>(r * len + j)] * norm[static_cast<size_t>(r * len + j)];
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < len; ++j)
              pb.grad[static_cast<size_t>(j)] += self.grad[static_cast<size_t>(r * len + j)];
        }
        if (px.requires_grad) {
          std::vector<T> dy(self.grad.size());
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < len; ++j) {
              size_t i = static_cast<size_t>(r * len + j);
              dy[i] = self.grad[i] * pg.value[static_cast<size_t>(j)];
            }
          detail::layernorm_backward_into(px, dy, norm, inv_std, len);
        }
      });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  int64_t m = a.size(0), k = a.size(1), k2 = b.size(0), n = b.size(1);
  if (k != k2) {
    throw dimension_error("matmul: inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  }
  std::vector<T> out(static_cast<size_t>(m * n), T(0));
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t kk = 0; kk < k; ++kk) {
      T av = a.data()[static_cast<size_t>(i * k + kk)];
      if (av == T(0)) continue;
      const T* pb = b.data().data() + kk * n;
      T* po = out.data() + i * n;
      for (int64_t j = 0; j < n; ++j) po[j] += av * pb[j];
    }
  }
  return detail::make_op<T>({m, n}, std::move(out), {a, b}, [m, k, n](NodeT<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      // dA = dC * B^T
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
          T g = self.grad[static_cast<size_t>(i * n + j)];
          if (g == T(0)) continue;
          for (int64_t kk = 0; kk < k; ++kk)
            pa.grad[static_cast<size_t>(i * k + kk)] += g * pb.value[static_cast<size_t>(kk * n + j)];
        }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      // dB = A^T * dC
      for (int64_t i = 0; i < m; ++i)
        for (int64_t kk = 0; kk < k; ++kk) {
          T av = pa.value[static_cast<size_t>(i * k + kk)];
          if (av == T(0)) continue;
          for (int64_t j = 0; j < n; ++j)
            pb.grad[static_cast<size_t>(kk * n + j)] += av * self.grad[static_cast<size_t>(i * n + j)];
        }
    }
  });
}

// Row-major dense layer: y = x * W^T (+ bias). W is stored [out x in] so the
// frozen backbone weights keep their natural export orientation.
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias = TensorT<T>()) {
  detail::require_rank(x, 2, "linear");
  detail::require_rank(w, 2, "linear");
  int64_t n = x.size(0), in = x.size(1), out_dim = w.size(0);
  if (w.size(1) != in) {
    throw dimension_error("linear: input width " + std::to_string(in) + " does not match weight " +
                          shape_str(w.shape()));
  }
  bool has_bias = bias.defined();
  if (has_bias && bias.numel() != out_dim) {
    throw dimension_error("linear: bias size " + std::to_string(bias.numel()) + " != out dim " +
                          std::to_string(out_dim));
  }
  std::vector<T> out(static_cast<size_t>(n * out_dim), T(0));
  for (int64_t i = 0; i < n; ++i) {
    const T* px = x.data().data() + i * in;
    T* po = out.data() + i * out_dim;
    for (int64_t o = 0; o < out_dim; ++o) {
      const T* pw = w.data().data() + o * in;
      T acc = T(0);
      for (int64_t kk = 0; kk < in; ++kk) acc += px[kk] * pw[kk];
      po[o] = has_bias ? acc + bias.data()[static_cast<size_t>(o)] : acc;
    }
  }
  std::vector<TensorT<T>> parents = {x, w};
  if (has_bias) parents.push_back(bias);
  return detail::make_op<T>({n, out_dim}, std::move(out), std::move(parents),
                            [n, in, out_dim, has_bias](NodeT<T>& self) {
                              auto& px = *self.parents[0];
                              auto& pw = *self.parents[1];
                              if (px.requires_grad) {
                                px.ensure_grad();
                                for (int64_t i = 0; i < n; ++i)
                                  for (int64_t o = 0; o < out_dim; ++o) {
                                    T g = self.grad[static_cast<size_t>(i * out_dim + o)];
                                    if (g == T(0)) continue;
                                    const T* prow = pw.value.data() + o * in;
                                    T* pgx = px.grad.data() + i * in;
                                    for (int64_t kk = 0; kk < in; ++kk) pgx[kk] += g * prow[kk];
                                  }
                              }
                              if (pw.requires_grad) {
                                pw.ensure_grad();
                                for (int64_t i = 0; i < n; ++i)
                                  for (int64_t o = 0; o < out_dim; ++o) {
                                    T g = self.grad[static_cast<size_t>(i * out_dim + o)];
                                    if (g == T(0)) continue;
                                    const T* prow = px.value.data() + i * in;
                                    T* pgw = pw.grad.data() + o * in;
                                    for (int64_t kk = 0; kk < in; ++kk) pgw[kk] += g * prow[kk];
                                  }
                              }
                              if (has_bias && self.parents[2]->requires_grad) {
                                auto& pb = *self.parents[2];
                                pb.ensure_grad();
                                for (int64_t i = 0; i < n; ++i)
                                  for (int64_t o = 0; o < out_dim; ++o)
                                    pb.grad[static_cast<size_t>(o)] +=
                                        self.grad[static_cast<size_t>(i * out_dim + o)];
                              }
                            });
}

template <typename T>
TensorT<T> transpose(const TensorT<T>& x) {
  detail::require_rank(x, 2, "transpose");
  int64_t m = x.size(0), n = x.size(1);
  std::vector<T> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(j * m + i)] = x.data()[static_cast<size_t>(i * n + j)];
  return detail::make_op<T>({n, m}, std::move(out), {x}, [m, n](NodeT<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        p.grad[static_cast<size_t>(i * n + j)] += self.grad[static_cast<size_t>(j * m + i)];
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, const Shape& new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw dimension_error("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
  }
  std::vector<T> out = x.data();
  return detail::make_op<T>(new_shape, std::move(out), {x}, [](NodeT<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

template <typename T>
TensorT<T> gather_rows(const TensorT<T>& x, const std::vector<int64_t>& rows) {
  detail::require_rank(x, 2, "gather_rows");
  int64_t n = x.size(0), d = x.size(1);
  for (int64_t r : rows) {
    if (r < 0 || r >= n)
      throw index_error("gather_rows: row " + std::to_string(r) + " out of range [0, " + std::to_string(n) + ")");
  }
  int64_t m = static_cast<int64_t>(rows.size());
  std::vector<T> out(static_cast<size_t>(m * d));
  for (int64_t k = 0; k < m; ++k) {
    const T* src = x.data().data() + rows[static_cast<size_t>(k)] * d;
    std::copy(src, src + d, out.data() + k * d);
  }
  return detail::make_op<T>({m, d}, std::move(out), {x}, [rows, d](NodeT<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t k = 0; k < rows.size(); ++k) {
      const T* g = self.grad.data() + static_cast<int64_t>(k) * d;
      T* dst = p.grad.data() + rows[k] * d;
      for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
    }
  });
}

// Weighted mean scatter: output row t is the weight-proportional mean of all
// input rows i with targets[i] == t. With all-distinct targets and unit
// weights this is a pure row permutation; with shared targets it pools rows.
template <typename T>
TensorT<T> scatter_mean_rows(const TensorT<T>& values, const std::vector<int64_t>& targets,
                             const std::vector<double>& weights, int64_t out_rows) {
  detail::require_rank(values, 2, "scatter_mean_rows");
  int64_t n = values.size(0), d = values.size(1);
  if (static_cast<int64_t>(targets.size()) != n || static_cast<int64_t>(weights.size()) != n) {
    throw dimension_error("scatter_mean_rows: need one target and weight per row, got " +
                          std::to_string(targets.size()) + " targets / " + std::to_string(weights.size()) +
                          " weights for " + std::to_string(n) + " rows");
  }
  std::vector<double> total(static_cast<size_t>(out_rows), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    int64_t t = targets[static_cast<size_t>(i)];
    if (t < 0 || t >= out_rows)
      throw index_error("scatter_mean_rows: target " + std::to_string(t) + " out of range [0, " +
                        std::to_string(out_rows) + ")");
    if (!(weights[static_cast<size_t>(i)] > 0.0))
      throw contract_error("scatter_mean_rows: weights must be positive");
    total[static_cast<size_t>(t)] += weights[static_cast<size_t>(i)];
  }
  for (int64_t t = 0; t < out_rows; ++t) {
    if (total[static_cast<size_t>(t)] == 0.0)
      throw contract_error("scatter_mean_rows: output row " + std::to_string(t) + " has no contributors");
  }
  std::vector<T> out(static_cast<size_t>(out_rows * d), T(0));
  for (int64_t i = 0; i < n; ++i) {
    int64_t t = targets[static_cast<size_t>(i)];
    T w = static_cast<T>(weights[static_cast<size_t>(i)] / total[static_cast<size_t>(t)]);
    const T* src = values.data().data() + i * d;
    T* dst = out.data() + t * d;
    for (int64_t j = 0; j < d; ++j) dst[j] += w * src[j];
  }
  return detail::make_op<T>({out_rows, d}, std::move(out), {values},
                            [targets, weights, total, d](NodeT<T>& self) {
                              auto& p = *self.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              for (size_t i = 0; i < targets.size(); ++i) {
                                int64_t t = targets[i];
                                T w = static_cast<T>(weights[i] / total[static_cast<size_t>(t)]);
                                const T* g = self.grad.data() + t * d;
                                T* dst = p.grad.data() + static_cast<int64_t>(i) * d;
                                for (int64_t j = 0; j < d; ++j) dst[j] += w * g[j];
                              }
                            });
}

template <typename T>
TensorT<T> concat_rows(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_rank(a, 2, "concat_rows");
  detail::require_rank(b, 2, "concat_rows");
  if (a.size(1) != b.size(1)) {
    throw dimension_error("concat_rows: widths differ: " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  }
  int64_t ma = a.size(0), mb = b.size(0), d = a.size(1);
  std::vector<T> out;
  out.reserve(static_cast<size_t>((ma + mb) * d));
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  return detail::make_op<T>({ma + mb, d}, std::move(out), {a, b}, [ma, mb, d](NodeT<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (int64_t i = 0; i < ma * d; ++i) pa.grad[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(i)];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (int64_t i = 0; i < mb * d; ++i)
        pb.grad[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(ma * d + i)];
    }
  });
}

template <typename T>
TensorT<T> slice_cols(const TensorT<T>& x, int64_t start, int64_t len) {
  detail::require_rank(x, 2, "slice_cols");
  int64_t n = x.size(0), c = x.size(1);
  if (start < 0 || len < 0 || start + len > c) {
    throw index_error("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                      ") out of range for width " + std::to_string(c));
  }
  std::vector<T> out(static_cast<size_t>(n * len));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < len; ++j)
      out[static_cast<size_t>(i * len + j)] = x.data()[static_cast<size_t>(i * c + start + j)];
  return detail::make_op<T>({n, len}, std::move(out), {x}, [n, c, start, len](NodeT<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < len; ++j)
        p.grad[static_cast<size_t>(i * c + start + j)] += self.grad[static_cast<size_t>(i * len + j)];
  });
}

template <typename T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts) {
  if (parts.empty()) throw contract_error("concat_cols: empty input list");
  int64_t n = parts[0].size(0);
  int64_t total = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_cols");
    if (p.size(0) != n)
      throw dimension_error("concat_cols: row counts differ: " + shape_str(parts[0].shape()) + " vs " +
                            shape_str(p.shape()));
    total += p.size(1);
  }
  std::vector<T> out(static_cast<size_t>(n * total));
  int64_t off = 0;
  std::vector<int64_t> widths;
  for (const auto& p : parts) {
    int64_t c = p.size(1);
    widths.push_back(c);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < c; ++j)
        out[static_cast<size_t>(i * total + off + j)] = p.data()[static_cast<size_t>(i * c + j)];
    off += c;
  }
  return detail::make_op<T>({n, total}, std::move(out), parts, [n, total, widths](NodeT<T>& self) {
    int64_t off = 0;
    for (size_t k = 0; k < widths.size(); ++k) {
      auto& p = *self.parents[k];
      int64_t c = widths[k];
      if (p.requires_grad) {
        p.ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < c; ++j)
            p.grad[static_cast<size_t>(i * c + j)] += self.grad[static_cast<size_t>(i * total + off + j)];
      }
      off += c;
    }
  });
}

// ---------------------------------------------------------------------------
// Broadcasts and reductions
// ---------------------------------------------------------------------------

// [m x 1] -> [m x n] (replicate the single column).
template <typename T>
TensorT<T> broadcast_cols(const TensorT<T>& v, int64_t n) {
  detail::require_rank(v, 2, "broadcast_cols");
  if (v.size(1) != 1) throw dimension_error("broadcast_cols: expected [m x 1], got " + shape_str(v.shape()));
  int64_t m = v.size(0);
  std::vector<T> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(i * n + j)] = v.data()[static_cast<size_t>(i)];
  return detail::make_op<T>({m, n}, std::move(out), {v}, [m, n](NodeT<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int64_t i = 0; i < m; ++i) {
      T acc = T(0);
      for (int64_t j = 0; j < n; ++j) acc += self.grad[static_cast<size_t>(i * n + j)];
      p.grad[static_cast<size_t>(i)] += acc;
    }
  });
}

// [1 x n] -> [m x n] (replicate the single row).
template <typename T>
TensorT<T> broadcast_rows(const TensorT<T>& v, int64_t m) {
  detail::require_rank(v, 2, "broadcast_rows");
  if (v.size(0) != 1) throw dimension_error("broadcast_rows: expected [1 x n], got " + shape_str(v.shape()));
  int64_t n = v.size(1);
  std::vector<T> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(i * n + j)] = v.data()[static_cast<size_t>(j)];
  return detail::make_op<T>({m, n}, std::move(out), {v}, [m, n](NodeT<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int64_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (int64_t i = 0; i < m; ++i) acc += self.grad[static_cast<size_t>(i * n + j)];
      p.grad[static_cast<size_t>(j)] += acc;
    }
  });
}

// Full reduction to a scalar.
template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  return detail::make_op<T>(Shape{}, {acc}, {x}, [](NodeT<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (auto& g : p.grad) g += self.grad[0];
  });
}

// Softmax cross-entropy of a single logit vector against an integer label,
// computed via log-sum-exp so huge logits cannot overflow.
template <typename T>
TensorT<T> cross_entropy_logits(const TensorT<T>& logits, int64_t target) {
  if (logits.rank() > 2 || (logits.rank() == 2 && logits.size(0) != 1)) {
    throw dimension_error("cross_entropy_logits: expected a logit vector, got " + shape_str(logits.shape()));
  }
  int64_t k = logits.numel();
  if (target < 0 || target >= k) {
    throw index_error("cross_entropy_logits: target " + std::to_string(target) + " out of range [0, " +
                      std::to_string(k) + ")");
  }
  T mx = logits.data()[0];
  for (T v : logits.data()) mx = std::max(mx, v);
  T denom = T(0);
  std::vector<T> probs(static_cast<size_t>(k));
  for (int64_t j = 0; j < k; ++j) {
    probs[static_cast<size_t>(j)] = std::exp(logits.data()[static_cast<size_t>(j)] - mx);
    denom += probs[static_cast<size_t>(j)];
  }
  for (auto& pv : probs) pv /= denom;
  T loss = std::log(denom) + mx - logits.data()[static_cast<size_t>(target)];
  return detail::make_op<T>(Shape{}, {loss}, {logits}, [probs, target](NodeT<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    T g = self.grad[0];
    for (size_t j = 0; j < probs.size(); ++j) {
      T delta = (static_cast<int64_t>(j) == target) ? T(1) : T(0);
      p.grad[j] += g * (probs[j] - delta);
    }
  });
}

}  // namespace pyra
