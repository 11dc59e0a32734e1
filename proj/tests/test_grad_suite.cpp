#include <gtest/gtest.h>

#include <chrono>
#include <set>

#include "gzeb/grad_suite.hpp"

using namespace gzeb;

TEST(GradSuite, EveryCheckPassesWithinTolerance) {
  const auto start = std::chrono::steady_clock::now();
  const auto reports = run_grad_suite();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const auto& r : reports) {
    EXPECT_TRUE(r.passed()) << r.label << " max rel error " << r.max_rel_error();
    EXPECT_GT(r.checked(), 0u) << r.label;
  }
  EXPECT_TRUE(all_passed(reports));
  EXPECT_LT(seconds, 120.0);
}

TEST(GradSuite, CoversOpsAndBothModels) {
  std::set<std::string> labels;
  for (const auto& r : run_grad_suite()) labels.insert(r.label);
  for (const char* op : {"conv2d", "dynamic_conv2d", "channel_bias", "linear", "global_avg_pool", "group_mean",
                         "reshape", "add", "sub", "mul", "scale", "sum", "mean", "mse_loss", "relu", "tanh",
                         "l2_normalize", "dropout", "batchnorm2d.train", "batchnorm2d.eval", "triplet_margin_loss",
                         "embed_model", "psm_model"})
    EXPECT_TRUE(labels.count(op)) << op;
}

TEST(GradSuite, LinearOpsUseTightTolerance) {
  for (const auto& r : run_grad_suite())
    if (r.label == "conv2d" || r.label == "linear" || r.label == "mse_loss") EXPECT_EQ(r.rel_tol, kLinearOpTol);
}

TEST(GradSuite, InjectedFaultFailsAndIsReported) {
  GradSuiteOptions o;
  o.inject_fault = true;
  const auto reports = run_grad_suite(o);
  EXPECT_FALSE(all_passed(reports));
  ASSERT_EQ(reports.back().label, "faulty_square");
  EXPECT_FALSE(reports.back().passed());
  const auto text = format_grad_report(reports);
  EXPECT_NE(text.find("faulty_square"), std::string::npos);
  EXPECT_NE(text.find("FAIL"), std::string::npos);
}
