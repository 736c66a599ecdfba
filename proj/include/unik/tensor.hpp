#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "unik/error.hpp"

namespace unik {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {

// One vertex of the dynamic differentiation graph. Interior nodes carry a
// backprop closure that reads this node's grad and accumulates into parents.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on demand, same extent as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  bool is_leaf() const { return !backprop; }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }

  void accumulate(const std::vector<T>& g) {
    ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }
};

}  // namespace detail

// Dense N-dimensional array participating in a reverse-mode differentiation
// graph. A Tensor is a shared handle: copies alias the same storage and node.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : node_(std::make_shared<detail::Node<T>>()) {}

  explicit Tensor(Shape shape) : node_(std::make_shared<detail::Node<T>>()) {
    node_->shape = std::move(shape);
    node_->value.assign(shape_numel(node_->shape), T(0));
  }

  Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<detail::Node<T>>()) {
    if (shape_numel(shape) != data.size())
      throw dim_error("tensor: shape " + shape_str(shape) + " does not cover " +
                      std::to_string(data.size()) + " values");
    node_->shape = std::move(shape);
    node_->value = std::move(data);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }

  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }
  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }

  T item() const {
    if (size() != 1) throw dim_error("item: tensor " + shape_str(shape()) + " is not a scalar");
    return node_->value[0];
  }

  template <typename... Ix>
  T& at(Ix... ix) {
    return node_->value[offset({static_cast<std::size_t>(ix)...})];
  }
  template <typename... Ix>
  T at(Ix... ix) const {
    return node_->value[offset({static_cast<std::size_t>(ix)...})];
  }

  bool requires_grad() const { return node_->requires_grad; }

  Tensor& set_requires_grad(bool v = true) {
    node_->requires_grad = v;
    if (v) node_->ensure_grad();
    return *this;
  }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  const std::vector<T>& grad() const {
    if (!has_grad()) throw dim_error("grad: no gradient accumulated for this tensor");
    return node_->grad;
  }

  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->value.size(), T(0));
  }

  bool is_leaf() const { return node_->is_leaf(); }

  // Reverse-mode sweep from a scalar root. Interior gradients are reset per
  // call; leaf gradients accumulate until zero_grad().
  void backward() const {
    if (size() != 1) throw dim_error("backward: root must be a scalar, got " + shape_str(shape()));
    std::vector<detail::Node<T>*> order = topo_order();
    for (detail::Node<T>* n : order) {
      if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
    }
    node_->ensure_grad();
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node<T>* n = *it;
      if (n->backprop && n->requires_grad) n->backprop(*n);
    }
  }

  // Drops graph history: the returned tensor aliases the same values but is a
  // leaf that does not require gradients.
  Tensor detached() const {
    Tensor t;
    t.node_->shape = node_->shape;
    t.node_->value = node_->value;
    return t;
  }

  std::shared_ptr<detail::Node<T>> node() const { return node_; }

  // Builds an op result: `parents` that require gradients make the result
  // require gradients and attach `backprop`.
  static Tensor from_op(Shape shape, std::vector<T> value,
                        std::vector<std::shared_ptr<detail::Node<T>>> parents,
                        std::function<void(detail::Node<T>&)> backprop) {
    Tensor t(std::move(shape), std::move(value));
    bool req = false;
    for (const auto& p : parents) req = req || p->requires_grad;
    if (req) {
      t.node_->requires_grad = true;
      t.node_->parents = std::move(parents);
      t.node_->backprop = std::move(backprop);
    }
    return t;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> ix) const {
    const Shape& s = node_->shape;
    if (ix.size() != s.size()) throw dim_error("at: index rank mismatch for " + shape_str(s));
    std::size_t off = 0, axis = 0;
    for (std::size_t i : ix) {
      if (i >= s[axis]) throw dim_error("at: index out of range on axis " + std::to_string(axis));
      off = off * s[axis] + i;
      ++axis;
    }
    return off;
  }

  std::vector<detail::Node<T>*> topo_order() const {
    std::vector<detail::Node<T>*> order;
    std::unordered_set<detail::Node<T>*> seen;
    // Iterative DFS, post-order.
    std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        detail::Node<T>* p = n->parents[next++].get();
        if (seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    return order;
  }

  std::shared_ptr<detail::Node<T>> node_;
};

}  // namespace unik
