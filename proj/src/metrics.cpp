#include "gzeb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "gzeb/error.hpp"

namespace gzeb {
namespace {

void require_same_dims(const SaliencyMap& a, const SaliencyMap& b, const char* metric) {
  if (!a.same_dims(b))
    throw UsageError(fmt::format("{}: map dims differ ({}x{} vs {}x{})", metric, a.width, a.height, b.width, b.height));
}

std::vector<double> as_distribution(const SaliencyMap& m, const char* metric) {
  double total = 0.0;
  for (float v : m.values) total += v;
  if (!(total > 0.0)) throw UsageError(fmt::format("{}: map has no positive mass", metric));
  std::vector<double> out(m.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.values[i] / total;
  return out;
}

std::vector<std::size_t> positives(const SaliencyMap& pred, const FixationSet& fixations, const char* metric) {
  auto pos = fixated_pixels(fixations, pred.width, pred.height);
  if (pos.empty()) throw UsageError(fmt::format("{}: no fixations inside the {}x{} map", metric, pred.width, pred.height));
  return pos;
}

}  // namespace

double cc(const SaliencyMap& pred, const SaliencyMap& gt) {
  require_same_dims(pred, gt, "cc");
  const auto n = static_cast<double>(pred.size());
  if (pred.size() == 0) throw UsageError("cc: empty maps");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ma += pred.values[i];
    mb += gt.values[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a = pred.values[i] - ma, b = gt.values[i] - mb;
    sab += a * b;
    saa += a * a;
    sbb += b * b;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double sim(const SaliencyMap& pred, const SaliencyMap& gt) {
  require_same_dims(pred, gt, "sim");
  const auto p = as_distribution(pred, "sim"), q = as_distribution(gt, "sim");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::min(p[i], q[i]);
  return s;
}

double auc_judd(const SaliencyMap& pred, const FixationSet& fixations) {
  const auto pos = positives(pred, fixations, "auc_judd");
  const std::size_t n_pos = pos.size(), n_neg = pred.size() - n_pos;
  if (n_neg == 0) throw UsageError("auc_judd: every pixel is fixated, no negatives");

  std::vector<double> pos_vals, neg_vals;
  pos_vals.reserve(n_pos);
  neg_vals.reserve(n_neg);
  for (std::size_t i = 0, k = 0; i < pred.size(); ++i) {
    if (k < n_pos && pos[k] == i) {
      pos_vals.push_back(pred.values[i]);
      ++k;
    } else {
      neg_vals.push_back(pred.values[i]);
    }
  }
  std::sort(pos_vals.begin(), pos_vals.end());
  std::sort(neg_vals.begin(), neg_vals.end());
  const auto count_at_least = [](const std::vector<double>& sorted, double t) {
    return static_cast<double>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), t));
  };

  // Walk thresholds from the highest positive value down.
  double auc = 0.0, prev_tp = 0.0, prev_fp = 0.0;
  for (auto it = pos_vals.rbegin(); it != pos_vals.rend(); ++it) {
    if (it != pos_vals.rbegin() && *it == *(it - 1)) continue;
    const double tp = count_at_least(pos_vals, *it) / static_cast<double>(n_pos);
    const double fp = count_at_least(neg_vals, *it) / static_cast<double>(n_neg);
    auc += (fp - prev_fp) * (tp + prev_tp) / 2.0;
    prev_tp = tp;
    prev_fp = fp;
  }
  auc += (1.0 - prev_fp) * (1.0 + prev_tp) / 2.0;
  return auc;
}

double nss(const SaliencyMap& pred, const FixationSet& fixations) {
  const auto pos = positives(pred, fixations, "nss");
  const auto n = static_cast<double>(pred.size());
  double mean = 0.0;
  for (float v : pred.values) mean += v;
  mean /= n;
  double var = 0.0;
  for (float v : pred.values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  if (sd == 0.0) return 0.0;
  double acc = 0.0;
  for (auto i : pos) acc += (pred.values[i] - mean) / sd;
  return acc / static_cast<double>(pos.size());
}

double kld(const SaliencyMap& pred, const SaliencyMap& gt, double eps) {
  require_same_dims(pred, gt, "kld");
  const auto p = as_distribution(pred, "kld"), q = as_distribution(gt, "kld");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (q[i] > 0.0) s += q[i] * std::log(q[i] / (p[i] + eps) + eps);
  return s;
}

double precision_at_one(std::span<const std::vector<float>> embeddings, std::span<const std::string> labels) {
  const std::size_t n = embeddings.size();
  if (n < 2) throw UsageError("precision_at_one: need at least 2 embeddings");
  if (labels.size() != n) throw UsageError("precision_at_one: one label per embedding required");
  for (const auto& label : labels)
    if (std::count(labels.begin(), labels.end(), label) < 2)
      throw UsageError("precision_at_one: class '" + label + "' has a single member");

  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (embeddings[i].size() != embeddings[0].size()) throw UsageError("precision_at_one: embedding sizes differ");
    double s = 0.0;
    for (float v : embeddings[i]) s += static_cast<double>(v) * v;
    norms[i] = std::sqrt(s);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = n;
    double best_cos = -2.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double dot = 0.0;
      for (std::size_t k = 0; k < embeddings[i].size(); ++k) dot += static_cast<double>(embeddings[i][k]) * embeddings[j][k];
      const double denom = norms[i] * norms[j];
      const double c = denom > 0.0 ? dot / denom : 0.0;
      if (c > best_cos) {
        best_cos = c;
        best = j;
      }
    }
    if (labels[best] == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

MetricReport evaluate_map(const SaliencyMap& pred, const SaliencyMap& gt, const FixationSet& fixations) {
  return {cc(pred, gt), sim(pred, gt), auc_judd(pred, fixations), nss(pred, fixations), kld(pred, gt), 1};
}

void MetricAccumulator::add(const MetricReport& r) {
  total_.cc += r.cc;
  total_.sim += r.sim;
  total_.auc_judd += r.auc_judd;
  total_.nss += r.nss;
  total_.kld += r.kld;
  total_.samples += 1;
}

MetricReport MetricAccumulator::mean() const {
  if (total_.samples == 0) throw UsageError("metric accumulator is empty");
  const auto n = static_cast<double>(total_.samples);
  return {total_.cc / n, total_.sim / n, total_.auc_judd / n, total_.nss / n, total_.kld / n, total_.samples};
}

}  // namespace gzeb
