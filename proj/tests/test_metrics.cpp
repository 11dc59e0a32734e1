#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "gzeb/error.hpp"
#include "gzeb/metrics.hpp"
#include "gzeb/rng.hpp"
#include "oracles.hpp"

using namespace gzeb;
using namespace gzeb::oracle;

namespace {

SaliencyMap map_of(std::size_t w, std::size_t h, std::vector<float> v) { return SaliencyMap(w, h, std::move(v)); }

SaliencyMap random_map(Rng& rng, std::size_t w = 8, std::size_t h = 8) {
  SaliencyMap m(w, h);
  for (auto& v : m.values) v = static_cast<float>(rng.uniform());
  return m;
}

FixationSet random_fixations(Rng& rng, std::size_t w, std::size_t h, std::size_t n) {
  FixationSet f{"u", "s", {}};
  for (std::size_t i = 0; i < n; ++i) f.points.push_back({rng.uniform(0, w), rng.uniform(0, h), 100});
  return f;
}

}  // namespace

TEST(Cc, SelfAntiAndConstant) {
  Rng rng(1);
  const auto m = random_map(rng);
  EXPECT_NEAR(cc(m, m), 1.0, 1e-12);
  SaliencyMap inv = m;
  for (auto& v : inv.values) v = 1.0f - v;
  EXPECT_NEAR(cc(m, inv), -1.0, 1e-6);
  EXPECT_EQ(cc(m, SaliencyMap(8, 8, 0.3f)), 0.0);
  EXPECT_THROW(cc(m, SaliencyMap(8, 7)), UsageError);
}

TEST(Cc, MatchesCovarianceOracleAndInvariances) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const auto a = random_map(rng, 6, 8), b = random_map(rng, 6, 8);
    EXPECT_NEAR(cc(a, b), oracle_cc(a, b), 1e-9);
    EXPECT_NEAR(cc(a, b), cc(b, a), 1e-15);
    SaliencyMap scaled = a;
    for (auto& v : scaled.values) v = 3.0f * v + 0.5f;
    EXPECT_NEAR(cc(scaled, b), cc(a, b), 1e-6);
  }
}

TEST(Sim, HandValuesAndBounds) {
  EXPECT_NEAR(sim(map_of(2, 1, {0.5f, 0.5f}), map_of(2, 1, {0.8f, 0.2f})), 0.7, 1e-7);
  EXPECT_NEAR(sim(map_of(2, 1, {1, 1}), map_of(2, 1, {4, 1})), 0.7, 1e-12);
  EXPECT_EQ(sim(map_of(2, 1, {1, 0}), map_of(2, 1, {0, 1})), 0.0);
  Rng rng(3);
  const auto m = random_map(rng);
  EXPECT_NEAR(sim(m, m), 1.0, 1e-12);
  EXPECT_THROW(sim(m, SaliencyMap(8, 8, 0.0f)), UsageError);
}

TEST(AucJudd, PerfectRankingConstantAndOracle) {
  SaliencyMap m(4, 4, 0.1f);
  m.at(1, 1) = 0.9f;
  m.at(2, 3) = 0.8f;
  EXPECT_DOUBLE_EQ(auc_judd(m, FixationSet{"u", "s", {{1.5, 1.5, 1}, {2.2, 3.7, 1}}}), 1.0);
  EXPECT_DOUBLE_EQ(auc_judd(SaliencyMap(4, 4, 0.5f), FixationSet{"u", "s", {{0, 0, 1}, {3, 2, 1}}}), 0.5);
  Rng rng(4);
  for (int t = 0; t < 30; ++t) {
    auto map = random_map(rng);
    if (t % 3 == 0)
      for (auto& v : map.values) v = std::round(v * 4.0f) / 4.0f;  // plenty of ties
    const auto f = random_fixations(rng, 8, 8, 5);
    EXPECT_NEAR(auc_judd(map, f), oracle_auc(map, f), 1e-9);
  }
  EXPECT_THROW(auc_judd(m, FixationSet{"u", "s", {{9, 9, 1}}}), UsageError);
}

TEST(AucJudd, InvariantUnderIncreasingTransform) {
  Rng rng(5);
  const auto m = random_map(rng);
  const auto f = random_fixations(rng, 8, 8, 6);
  SaliencyMap warped = m;
  for (auto& v : warped.values) v = std::exp(3.0f * v) - 0.5f;
  EXPECT_DOUBLE_EQ(auc_judd(warped, f), auc_judd(m, f));
}

TEST(Nss, HandValuesAndConventions) {
  EXPECT_NEAR(nss(map_of(2, 1, {0, 2}), FixationSet{"u", "s", {{1.5, 0.5, 1}}}), 1.0, 1e-12);
  EXPECT_EQ(nss(SaliencyMap(3, 3, 0.4f), FixationSet{"u", "s", {{1, 1, 1}}}), 0.0);
  Rng rng(6);
  const auto m = random_map(rng, 3, 2);
  FixationSet all{"u", "s", {}};
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x) all.points.push_back({x + 0.5, y + 0.5, 1});
  EXPECT_NEAR(nss(m, all), 0.0, 1e-12);
  EXPECT_THROW(nss(m, FixationSet{"u", "s", {}}), UsageError);
}

TEST(Kld, HandValueIdentityAndSign) {
  const double eps = 1e-7;
  const double expected = std::log(1.0 / (0.5 + eps) + eps);
  EXPECT_NEAR(kld(map_of(2, 1, {0.5f, 0.5f}), map_of(2, 1, {1, 0})), expected, 1e-9);
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    const auto a = random_map(rng), b = random_map(rng);
    EXPECT_LE(std::abs(kld(a, a)), 1e-5);
    EXPECT_GE(kld(a, b), -1e-5);
  }
}

TEST(MapMetrics, MatchBruteForceOraclesOnRandomInstances) {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    const auto p = random_map(rng), q = random_map(rng);
    const auto f = random_fixations(rng, 8, 8, 1 + rng.below(10));
    EXPECT_NEAR(cc(p, q), oracle_cc(p, q), 1e-9);
    EXPECT_NEAR(sim(p, q), oracle_sim(p, q), 1e-9);
    EXPECT_NEAR(auc_judd(p, f), oracle_auc(p, f), 1e-9);
    EXPECT_NEAR(nss(p, f), oracle_nss(p, f), 1e-9);
    EXPECT_NEAR(kld(p, q), oracle_kld(p, q), 1e-9);
    const auto r = evaluate_map(p, q, f);
    EXPECT_TRUE(r.sim >= 0 && r.sim <= 1 && r.auc_judd >= 0 && r.auc_judd <= 1 && r.cc >= -1 && r.cc <= 1);
  }
}

TEST(MapMetrics, SimAndKldIgnoreMaxNormalization) {
  Rng rng(9);
  auto p = random_map(rng), q = random_map(rng);
  const double s = sim(p, q), k = kld(p, q);
  max_normalize(p);
  max_normalize(q);
  EXPECT_NEAR(sim(p, q), s, 1e-6);
  EXPECT_NEAR(kld(p, q), k, 1e-6);
}

TEST(PrecisionAtOne, DuplicatesRandomAndOracle) {
  const std::vector<std::vector<float>> dup{{1, 0}, {1, 0}, {0, 1}, {0, 1}};
  const std::vector<std::string> labels{"a", "a", "b", "b"};
  EXPECT_EQ(precision_at_one(dup, labels), 1.0);

  const std::vector<std::vector<float>> geo{{1, 0}, {0.9f, 0.1f}, {0, 1}, {0.8f, 0.6f}, {-1, 0}, {0.1f, 0.9f}};
  const std::vector<std::string> gl{"a", "b", "b", "a", "c", "c"};
  std::size_t hits = 0;
  for (std::size_t i = 0; i < geo.size(); ++i) {
    double best = 1e9;
    std::size_t arg = 0;
    for (std::size_t j = 0; j < geo.size(); ++j) {
      if (i == j) continue;
      const double ni = std::hypot(geo[i][0], geo[i][1]), nj = std::hypot(geo[j][0], geo[j][1]);
      const double d = std::hypot(geo[i][0] / ni - geo[j][0] / nj, geo[i][1] / ni - geo[j][1] / nj);
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    hits += gl[arg] == gl[i];
  }
  EXPECT_DOUBLE_EQ(precision_at_one(geo, gl), static_cast<double>(hits) / 6.0);

  Rng rng(10);
  double total = 0.0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    std::vector<std::vector<float>> e;
    std::vector<std::string> l;
    for (int c = 0; c < 12; ++c)
      for (int k = 0; k < 4; ++k) {
        std::vector<float> v(8);
        for (auto& x : v) x = static_cast<float>(rng.normal());
        e.push_back(v);
        l.push_back(std::to_string(c));
      }
    total += precision_at_one(e, l);
  }
  // 3 of 47 neighbours share the label
  EXPECT_NEAR(total / trials, 3.0 / 47.0, 0.01);
}

TEST(PrecisionAtOne, TiesGoToLowestIndexAndSingletonsRejected) {
  const std::vector<std::vector<float>> e{{1, 0}, {1, 0}, {1, 0}, {0, 1}};
  EXPECT_DOUBLE_EQ(precision_at_one(e, std::vector<std::string>{"a", "a", "b", "b"}), 0.5);
  EXPECT_THROW(precision_at_one(e, std::vector<std::string>{"a", "a", "a", "b"}), UsageError);
  EXPECT_THROW(precision_at_one(std::vector<std::vector<float>>{{1}}, std::vector<std::string>{"a"}), UsageError);
}
