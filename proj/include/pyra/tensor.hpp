#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pyra/errors.hpp"

namespace pyra {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Thread-local toggle: when false, ops do not record backward closures.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

// RAII guard disabling gradient recording (inference / finite differences).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline uint64_t next_node_seq() {
  thread_local uint64_t counter = 0;
  return ++counter;
}

// One node of the dynamic computation graph. Holds the value buffer, the
// lazily allocated gradient buffer, edges to parent nodes, and the closure
// that pushes this node's gradient into its parents.
template <typename T>
struct NodeT {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until backward touches this node
  bool requires_grad = false;
  uint64_t seq = next_node_seq();  // creation index = topological order
  std::string name;
  std::vector<std::shared_ptr<NodeT<T>>> parents;
  std::function<void(NodeT<T>&)> backward_fn;  // may be empty (leaf)

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

// Value-semantics handle to a graph node. Copying a TensorT aliases the same
// node; all ops allocate fresh output nodes and never write through inputs.
template <typename T>
class TensorT {
 public:
  using scalar_type = T;

  TensorT() = default;
  explicit TensorT(std::shared_ptr<NodeT<T>> n) : node_(std::move(n)) {}

  static TensorT zeros(const Shape& s) { return full(s, T(0)); }

  static TensorT full(const Shape& s, T v) {
    check_shape(s);
    auto n = std::make_shared<NodeT<T>>();
    n->shape = s;
    n->value.assign(static_cast<size_t>(shape_numel(s)), v);
    return TensorT(std::move(n));
  }

  static TensorT from_vector(const Shape& s, std::vector<T> data) {
    check_shape(s);
    if (static_cast<int64_t>(data.size()) != shape_numel(s)) {
      throw dimension_error("from_vector: have " + std::to_string(data.size()) +
                            " values for shape " + shape_str(s));
    }
    auto n = std::make_shared<NodeT<T>>();
    n->shape = s;
    n->value = std::move(data);
    return TensorT(std::move(n));
  }

  static TensorT scalar(T v) { return from_vector(Shape{}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  int64_t rank() const { return static_cast<int64_t>(node().shape.size()); }
  int64_t size(int64_t axis) const { return node().shape.at(static_cast<size_t>(axis)); }
  int64_t numel() const { return static_cast<int64_t>(node().value.size()); }

  std::vector<T>& data() { return node().value; }
  const std::vector<T>& data() const { return node().value; }
  std::vector<T>& grad() { return node().grad; }
  const std::vector<T>& grad() const { return node().grad; }

  bool requires_grad() const { return node().requires_grad; }
  TensorT& set_requires_grad(bool b) {
    node().requires_grad = b;
    return *this;
  }
  const std::string& name() const { return node().name; }
  TensorT& set_name(std::string n) {
    node().name = std::move(n);
    return *this;
  }

  // Scalar extraction (numel must be 1).
  T item() const {
    if (numel() != 1) throw contract_error("item(): tensor has " + std::to_string(numel()) + " elements");
    return node().value[0];
  }

  // 2-D element access for construction and tests.
  T& at(int64_t i, int64_t j) {
    if (rank() != 2) throw contract_error("at(i,j) on non-matrix tensor");
    if (i < 0 || i >= size(0) || j < 0 || j >= size(1)) {
      throw index_error("at(" + std::to_string(i) + "," + std::to_string(j) + ") out of range for " +
                        shape_str(shape()));
    }
    return node().value[static_cast<size_t>(i * size(1) + j)];
  }
  T at(int64_t i, int64_t j) const { return const_cast<TensorT*>(this)->at(i, j); }

  void zero_grad() { node().grad.clear(); }

  // Detached value copy (fresh leaf, no history).
  TensorT detach() const {
    auto n = std::make_shared<NodeT<T>>();
    n->shape = shape();
    n->value = data();
    n->name = name();
    return TensorT(std::move(n));
  }

  NodeT<T>& node() {
    if (!node_) throw contract_error("use of undefined tensor");
    return *node_;
  }
  const NodeT<T>& node() const {
    if (!node_) throw contract_error("use of undefined tensor");
    return *node_;
  }
  const std::shared_ptr<NodeT<T>>& node_ptr() const { return node_; }

 private:
  static void check_shape(const Shape& s) {
    for (int64_t d : s) {
      if (d < 0) throw dimension_error("negative dimension in shape " + shape_str(s));
    }
  }

  std::shared_ptr<NodeT<T>> node_;
};

using Tensor = TensorT<double>;

template <typename T>
bool same_shape(const TensorT<T>& a, const TensorT<T>& b) {
  return a.shape() == b.shape();
}

// Bit-pattern equality of shapes and payloads (distinguishes -0.0 from +0.0,
// which value comparison would not).
template <typename T>
bool bitwise_equal(const TensorT<T>& a, const TensorT<T>& b) {
  if (!same_shape(a, b)) return false;
  if (a.data().empty()) return true;
  return std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(T)) == 0;
}

template <typename T>
bool allclose(const TensorT<T>& a, const TensorT<T>& b, T atol = T(1e-9), T rtol = T(1e-9)) {
  if (!same_shape(a, b)) return false;
  for (size_t i = 0; i < a.data().size(); ++i) {
    T x = a.data()[i], y = b.data()[i];
    T diff = std::abs(x - y);
    if (diff > atol + rtol * std::abs(y)) return false;
  }
  return true;
}

// Backpropagation: seeds the scalar loss with gradient 1 and walks every
// reachable recorded node in strict reverse creation order, so each node's
// closure runs exactly once after all its consumers.
template <typename T>
void backward(const TensorT<T>& loss) {
  if (loss.numel() != 1) {
    throw contract_error("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  using NodePtr = std::shared_ptr<NodeT<T>>;
  std::vector<NodePtr> order;
  std::vector<NodePtr> stack{loss.node_ptr()};
  std::unordered_set<const NodeT<T>*> seen;
  while (!stack.empty()) {
    NodePtr n = stack.back();
    stack.pop_back();
    if (!n || !seen.insert(n.get()).second) continue;
    order.push_back(n);
    for (const auto& p : n->parents) stack.push_back(p);
  }
  std::sort(order.begin(), order.end(),
            [](const NodePtr& a, const NodePtr& b) { return a->seq > b->seq; });

  loss.node_ptr()->ensure_grad();
  loss.node_ptr()->grad[0] += T(1);
  for (const auto& n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

}  // namespace pyra
