#include "gzeb/tensor.hpp"

#include <unordered_set>
#include <utility>

namespace gzeb {

thread_local bool GradMode::enabled_ = true;

std::string shape_string(const Shape& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

template <typename T>
void Tensor<T>::backward() {
  if (!node_ || size() != 1)
    throw UsageError("backward() needs a scalar, got shape " + shape_string(dims()));
  if (!requires_grad()) throw UsageError("backward() on a tensor that does not track gradients");

  // Iterative post-order DFS; reversed it is a valid reverse-mode schedule.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next_parent] = stack.back();
    if (next_parent < node->parents.size()) {
      Node* parent = node->parents[next_parent++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace gzeb
