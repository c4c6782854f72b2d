#pragma once

#include <functional>
#include <string>
#include <vector>

#include "saig/numerics/tensor.hpp"

namespace saig::nn {

inline constexpr double kZeroGradNorm = 1e-8;

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;  // worst over checked inputs
  bool passed = false;
};

// Compares reverse-mode gradients of a scalar function against central finite
// differences, input by input. The relative error of one input is
// ||analytic - numeric|| / max(||analytic||, ||numeric||). An input whose
// analytic and numeric gradient norms are both below kZeroGradNorm has a
// vanishing gradient and contributes no error.
// `fn` must rebuild its graph from the given tensors on every call.
GradCheckResult gradcheck(const std::string& name, std::vector<Tensor64> inputs,
                          const std::function<Tensor64(const std::vector<Tensor64>&)>& fn,
                          double tolerance, double step = 1e-6);

}  // namespace saig::nn
