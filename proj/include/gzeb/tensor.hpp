#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gzeb/error.hpp"

namespace gzeb {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string shape_string(const Shape& dims);

/// Thread-local switch for graph recording. Evaluation of a frozen model runs
/// with recording off so concurrent forwards never touch shared state.
class GradMode {
 public:
  static bool enabled() { return enabled_; }
  static void set_enabled(bool on) { enabled_ = on; }

 private:
  static thread_local bool enabled_;
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct TensorNode {
  Shape dims;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(TensorNode&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense row-major array with optional gradient tracking.
///
/// Copies are shallow: two Tensor handles may refer to the same node, the
/// same way parameters are shared between the Siamese branches.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  Tensor() = default;

  static Tensor zeros(Shape dims, bool requires_grad = false) {
    return full(std::move(dims), T(0), requires_grad);
  }

  static Tensor full(Shape dims, T value, bool requires_grad = false) {
    auto node = std::make_shared<Node>();
    node->data.assign(shape_size(dims), value);
    node->dims = std::move(dims);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from(Shape dims, std::vector<T> values, bool requires_grad = false) {
    if (shape_size(dims) != values.size())
      throw UsageError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_string(dims));
    auto node = std::make_shared<Node>();
    node->dims = std::move(dims);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& dims() const { return node_->dims; }
  std::size_t dim(std::size_t axis) const { return node_->dims.at(axis); }
  std::size_t rank() const { return node_->dims.size(); }
  std::size_t size() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }
  T item() const {
    if (size() != 1) throw UsageError("item() on tensor of shape " + shape_string(dims()));
    return node_->data[0];
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<T> grad() { return node_->grad; }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Deep copy of the values with no graph attached.
  Tensor detach() const { return from(dims(), node_->data); }

  bool all_finite() const {
    for (T v : node_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  /// Reverse-mode sweep from this scalar. Gradients accumulate into every
  /// reachable node that requires them.
  void backward();

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Builds an op result whose parents are `inputs`. Gradient tracking is on if
/// recording is enabled and any input tracks gradients.
template <typename T>
Tensor<T> make_result(Shape dims, std::initializer_list<const Tensor<T>*> inputs) {
  auto node = std::make_shared<TensorNode<T>>();
  node->data.assign(shape_size(dims), T(0));
  node->dims = std::move(dims);
  if (GradMode::enabled()) {
    for (const Tensor<T>* in : inputs) {
      if (in && in->defined() && in->requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
      for (const Tensor<T>* in : inputs)
        if (in && in->defined() && in->requires_grad()) node->parents.push_back(in->node());
    }
  }
  return Tensor<T>(std::move(node));
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace gzeb
