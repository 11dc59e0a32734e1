#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gzeb/error.hpp"
#include "gzeb/ops.hpp"
#include "gzeb/rng.hpp"
#include "gzeb/tensor.hpp"

namespace gzeb {

struct GradCheckOptions {
  double rel_tol = 1e-3;
  double step = 1e-3;
  std::size_t max_coords = 48;  // sampled coordinates per input tensor
  std::uint64_t seed = 7;
};

struct GradCheckEntry {
  std::string tensor;
  std::size_t checked = 0;
  std::size_t kink_skipped = 0;  // probes that straddled a relu/hinge kink
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::string label;
  double rel_tol = 0.0;
  std::vector<GradCheckEntry> entries;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
  std::size_t checked() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.checked;
    return n;
  }
  bool passed() const { return checked() > 0 && max_rel_error() <= rel_tol; }
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Compares reverse-mode gradients of `loss` against five-point central
/// differences, (8(L(h) - L(-h)) - (L(2h) - L(-2h))) / 12h, at a seeded
/// sample of coordinates of every named input. `loss` must be a pure function
/// of the inputs' current values. A probe whose perturbations change which
/// side of a relu or hinge kink any element lands on is counted as skipped,
/// since the difference quotient is not a derivative there.
template <typename T>
GradCheckReport grad_check(const std::string& label, const std::function<Tensor<T>()>& loss,
                           std::vector<std::pair<std::string, Tensor<T>>> inputs,
                           const GradCheckOptions& options) {
  GradCheckReport report{label, options.rel_tol, {}};
  for (auto& [name, t] : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }

  std::vector<std::uint8_t> base_kinks;
  {
    KinkRecorder rec(base_kinks);
    Tensor<T> l = loss();
    if (l.size() != 1) throw UsageError(label + ": loss must be a scalar");
    if (!l.all_finite()) throw NumericalError(label + ": loss is not finite at the base point");
    l.backward();
  }

  const auto evaluate = [&](std::vector<std::uint8_t>& kinks) {
    NoGradGuard no_grad;
    KinkRecorder rec(kinks);
    const Tensor<T> l = loss();
    if (!l.all_finite()) throw NumericalError(label + ": loss became non-finite under a finite-difference probe");
    return static_cast<double>(l.item());
  };

  const double h = options.step;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& [name, t] = inputs[k];
    GradCheckEntry entry{name, 0, 0, 0.0, 0, 0.0, 0.0};
    std::vector<T> analytic(t.size(), T(0));
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());

    Rng rng(options.seed, {hash_string(label), k});
    const std::size_t count = std::min(options.max_coords, t.size());
    for (std::size_t idx : rng.sample_indices(t.size(), count)) {
      const T original = t[idx];
      double values[4];
      const double offsets[4] = {-2.0 * h, -h, h, 2.0 * h};
      bool straddles = false;
      for (int j = 0; j < 4; ++j) {
        t[idx] = static_cast<T>(static_cast<double>(original) + offsets[j]);
        std::vector<std::uint8_t> kinks;
        values[j] = evaluate(kinks);
        straddles = straddles || kinks != base_kinks;
      }
      t[idx] = original;
      if (straddles) {
        ++entry.kink_skipped;
        continue;
      }
      const double numeric = (8.0 * (values[2] - values[1]) - (values[3] - values[0])) / (12.0 * h);
      const double a = static_cast<double>(analytic[idx]);
      const double err = relative_error(a, numeric);
      ++entry.checked;
      if (err >= entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.worst_index = idx;
        entry.worst_analytic = a;
        entry.worst_numeric = numeric;
      }
    }
    report.entries.push_back(entry);
  }
  for (auto& [name, t] : inputs) t.zero_grad();
  return report;
}

/// x^2 whose backward is deliberately off by 2%, to show the checker notices.
template <typename T>
Tensor<T> faulty_square(const Tensor<T>& x) {
  Tensor<T> out = make_result<T>(x.dims(), {&x});
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * x[i];
  if (out.requires_grad()) {
    out.node()->backward = [in = x.node()](TensorNode<T>& self) {
      in->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) in->grad[i] += self.grad[i] * T(2.04) * in->data[i];
    };
  }
  return out;
}

}  // namespace gzeb
