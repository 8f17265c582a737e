#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dualpf/gradcheck.hpp"

namespace dualpf {

inline constexpr double kGradTolerance = 1e-4;

struct GradCase {
  std::string name;
  // Builds randomized inputs from `seed` and runs one finite-difference check.
  std::function<GradCheckReport(std::uint64_t seed)> run;
  bool composite = false;  // whole-module or whole-loss check (slow)
};

// Every differentiable op, the model sub-modules, and the full dual loss
// (d_model 16, 2 layers, capsule dimension 8, batch of 2).
std::vector<GradCase> gradient_cases();

struct GradCaseResult {
  std::string name;
  std::size_t seeds = 0;
  GradCheckReport worst;
  double seconds = 0.0;
  bool passed() const { return worst.max_rel_error < kGradTolerance; }
};

// Runs op cases over `op_seeds` seeds and composite cases over
// `composite_seeds`. `on_result` is called after each case.
std::vector<GradCaseResult> run_gradient_suite(std::size_t op_seeds, std::size_t composite_seeds,
                                               const std::function<void(const GradCaseResult&)>& on_result = {});

}  // namespace dualpf
