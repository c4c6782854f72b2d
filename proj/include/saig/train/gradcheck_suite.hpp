#pragma once

#include <cstdint>
#include <vector>

#include "saig/numerics/gradcheck.hpp"

namespace saig::train {

struct GradSuiteOptions {
  std::size_t seeds = 20;
  std::uint64_t base_seed = 1;
  double kernel_tolerance = 1e-4;
  double end_to_end_tolerance = 1e-3;
  bool end_to_end = true;
};

// 64-bit finite-difference checks of every differentiable kernel, each loss
// and a full 2-layer Siamese forward + loss. One result per check, holding
// the worst relative error over all seeds.
std::vector<nn::GradCheckResult> run_gradcheck_suite(const GradSuiteOptions& options = {});

}  // namespace saig::train
