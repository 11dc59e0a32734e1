#pragma once

#include <string>
#include <vector>

#include "gzeb/gradcheck.hpp"

namespace gzeb {

inline constexpr double kLinearOpTol = 1e-6;
inline constexpr double kNonlinearTol = 1e-3;

struct GradSuiteOptions {
  bool inject_fault = false;  // adds an op whose backward is 2% off
  std::uint64_t seed = 7;
};

/// Finite-difference checks of every differentiable op and of miniature
/// embedding and PSM models, in double precision. Ops that are linear or
/// polynomial in their inputs are held to kLinearOpTol, the rest to
/// kNonlinearTol.
std::vector<GradCheckReport> run_grad_suite(const GradSuiteOptions& options = {});

/// One line per check: label, tolerance, coordinates checked and skipped,
/// worst relative error, PASS or FAIL.
std::string format_grad_report(const std::vector<GradCheckReport>& reports);

bool all_passed(const std::vector<GradCheckReport>& reports);

}  // namespace gzeb
