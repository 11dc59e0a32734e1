#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gzeb/error.hpp"
#include "gzeb/param.hpp"

namespace gzeb {

struct AdamOptions {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct SgdOptions {
  double lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 0.0005;
};

/// Step decay: lr(epoch) = initial_lr * decay_factor^floor(epoch / decay_every).
struct TrainSchedule {
  double initial_lr = 0.02;
  double decay_factor = 0.5;
  unsigned decay_every = 25;

  double lr(unsigned epoch) const {
    return initial_lr * std::pow(decay_factor, static_cast<double>(epoch / decay_every));
  }

  void validate() const {
    if (!(initial_lr > 0.0)) throw ConfigError("schedule: initial lr must be positive");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0))
      throw ConfigError("schedule: decay factor must be in (0,1]");
    if (decay_every == 0) throw ConfigError("schedule: decay interval must be positive");
  }
};

namespace detail {
template <typename T>
void require_grad(const Parameter<T>& p) {
  if (!p.value.has_grad())
    throw ConfigError("optimizer step: parameter '" + p.name + "' has no gradient");
}
}  // namespace detail

/// Bias-corrected Adam update in place; `step` counts from 1.
template <typename T>
void adam_step(std::vector<Parameter<T>>& params, const AdamOptions& opt, std::uint64_t step) {
  if (step < 1) throw UsageError("adam_step: step index starts at 1");
  for (const auto& p : params) detail::require_grad(p);
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
  for (auto& p : params) {
    auto w = p.value.data();
    auto g = p.value.grad();
    if (p.adam_m.size() != w.size()) p.adam_m.assign(w.size(), T(0));
    if (p.adam_v.size() != w.size()) p.adam_v.assign(w.size(), T(0));
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double m = opt.beta1 * p.adam_m[i] + (1.0 - opt.beta1) * gi;
      const double v = opt.beta2 * p.adam_v[i] + (1.0 - opt.beta2) * gi * gi;
      p.adam_m[i] = static_cast<T>(m);
      p.adam_v[i] = static_cast<T>(v);
      w[i] = static_cast<T>(w[i] - opt.lr * (m / c1) / (std::sqrt(v / c2) + opt.eps));
    }
  }
}

/// v <- momentum*v + (grad + weight_decay*param); param <- param - lr*v.
template <typename T>
void sgd_step(std::vector<Parameter<T>>& params, const SgdOptions& opt) {
  for (const auto& p : params) detail::require_grad(p);
  for (auto& p : params) {
    auto w = p.value.data();
    auto g = p.value.grad();
    if (p.momentum.size() != w.size()) p.momentum.assign(w.size(), T(0));
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double v = opt.momentum * p.momentum[i] + (g[i] + opt.weight_decay * w[i]);
      p.momentum[i] = static_cast<T>(v);
      w[i] = static_cast<T>(w[i] - opt.lr * v);
    }
  }
}

}  // namespace gzeb
