#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "gzeb/error.hpp"
#include "gzeb/rng.hpp"
#include "gzeb/tensor.hpp"

namespace gzeb {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  // Optimizer state; empty until the first step that uses it.
  std::vector<T> adam_m;
  std::vector<T> adam_v;
  std::vector<T> momentum;
};

/// Non-trainable state that still belongs in a checkpoint (batch-norm running
/// statistics). Points into the owning model; rebuild after moving it.
template <typename T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* values;
};

/// Ordered, name-unique registry of a model's trainable parameters.
template <typename T>
class ParameterSet {
 public:
  Tensor<T> create(const std::string& name, Shape dims, T fill) {
    if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    auto value = Tensor<T>::full(std::move(dims), fill, true);
    params_.push_back(Parameter<T>{name, value, {}, {}, {}});
    return value;
  }

  /// Weights drawn from U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
  Tensor<T> create_glorot(const std::string& name, Shape dims, std::size_t fan_in,
                          std::size_t fan_out, Rng& rng) {
    auto value = create(name, std::move(dims), T(0));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : value.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return value;
  }

  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  const Parameter<T>* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  void zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::vector<Parameter<T>> params_;
};

}  // namespace gzeb
