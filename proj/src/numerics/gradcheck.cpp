#include "saig/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace saig::nn {

GradCheckResult gradcheck(const std::string& name, std::vector<Tensor64> inputs,
                          const std::function<Tensor64(const std::vector<Tensor64>&)>& fn, double tolerance,
                          double step) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  backward(fn(inputs));

  GradCheckResult result{name, 0.0, true};
  NoGradGuard no_grad;
  for (auto& t : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto values = t.mutable_data();
    double diff_sq = 0.0, analytic_sq = 0.0, numeric_sq = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = fn(inputs).item();
      values[i] = saved - step;
      const double down = fn(inputs).item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      diff_sq += (analytic[i] - numeric) * (analytic[i] - numeric);
      analytic_sq += analytic[i] * analytic[i];
      numeric_sq += numeric * numeric;
    }
    const double denom = std::max(std::sqrt(analytic_sq), std::sqrt(numeric_sq));
    if (denom < kZeroGradNorm) continue;  // both sides vanish (e.g. the key bias under softmax)
    result.max_rel_error = std::max(result.max_rel_error, std::sqrt(diff_sq) / denom);
  }
  result.passed = result.max_rel_error < tolerance;
  return result;
}

}  // namespace saig::nn
