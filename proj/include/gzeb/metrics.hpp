#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gzeb/saliency.hpp"

namespace gzeb {

/// Pearson correlation over pixels; 0 when either map is constant.
double cc(const SaliencyMap& pred, const SaliencyMap& gt);

/// Histogram intersection of the two maps normalized to sum 1.
double sim(const SaliencyMap& pred, const SaliencyMap& gt);

/// AUC with fixated pixels as positives and all other pixels as negatives.
/// Thresholds are the distinct values at positives, a pixel counts as
/// detected when its value is >= the threshold. Fixations must already be in
/// map coordinates; repeated fixations on one pixel count once.
double auc_judd(const SaliencyMap& pred, const FixationSet& fixations);

/// Mean of the standardized map (population std) at fixated pixels; 0 for a
/// constant map.
double nss(const SaliencyMap& pred, const FixationSet& fixations);

inline constexpr double kKldEps = 1e-7;

/// sum Q log(Q / (P + eps) + eps) with Q = gt and P = pred, each normalized
/// to sum 1. Not clamped: identical maps give a value within a few eps of 0
/// that may be slightly negative.
double kld(const SaliencyMap& pred, const SaliencyMap& gt, double eps = kKldEps);

/// Fraction of items whose nearest other item by cosine similarity carries
/// the same label. Ties go to the lowest index.
double precision_at_one(std::span<const std::vector<float>> embeddings, std::span<const std::string> labels);

struct MetricReport {
  double cc = 0.0;
  double sim = 0.0;
  double auc_judd = 0.0;
  double nss = 0.0;
  double kld = 0.0;
  std::size_t samples = 0;
};

/// All five map metrics for one prediction.
MetricReport evaluate_map(const SaliencyMap& pred, const SaliencyMap& gt, const FixationSet& fixations);

/// Running mean of per-sample reports.
class MetricAccumulator {
 public:
  void add(const MetricReport& r);
  MetricReport mean() const;
  std::size_t count() const { return total_.samples; }

 private:
  MetricReport total_;
};

}  // namespace gzeb
