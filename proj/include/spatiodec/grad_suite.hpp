#pragma once

#include <string>
#include <vector>

namespace spatiodec {

struct GradCheckResult {
  std::string op;
  std::size_t shapes = 0;
  double worst = 0.0;
};

inline constexpr double kGradTolerance = 1e-4;

/// Names accepted by run_grad_suite, in execution order.
std::vector<std::string> grad_suite_ops();

/// Central-difference check, in double, of every differentiable op on three
/// random shapes each. An empty filter runs all ops; an unknown name raises
/// ConfigError.
std::vector<GradCheckResult> run_grad_suite(const std::string& only = "");

}  // namespace spatiodec
