#include "saig/train/optim.hpp"

#include <cmath>
#include <numbers>

#include "saig/errors.hpp"

namespace saig::train {

double lr_schedule(std::int64_t step, std::int64_t total_steps, double base_lr, double warmup_fraction) {
  if (total_steps <= 0 || step < 0 || step > total_steps) {
    throw ContractError("lr_schedule: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) +
                        "]");
  }
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) throw ContractError("lr_schedule: warmup_fraction must be in [0, 1)");
  const auto warmup = static_cast<std::int64_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  const double t = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename T>
void adamw_step(std::span<Tensor<T>> params, AdamWState<T>& state, double lr, double weight_decay,
                const AdamWHyper& hyper) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T{0});
      state.v.emplace_back(p.numel(), T{0});
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adamw_step: optimizer state does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - lr * weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.numel()) throw ContractError("adamw_step: moment size mismatch for parameter " + std::to_string(i));
    auto value = p.mutable_data();
    const auto grad = p.grad();
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[k]);
      const double mk = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g;
      const double vk = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = (mk / bc1) / (std::sqrt(vk / bc2) + hyper.eps);
      value[k] = static_cast<T>(static_cast<double>(value[k]) * decay - lr * update);
    }
  }
}

template <typename T>
double global_grad_norm(std::span<const Tensor<T>> params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (T g : p.grad()) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

template <typename T>
double clip_global_norm(std::span<Tensor<T>> params, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractError("clip_global_norm: max_norm must be positive");
  const double norm = global_grad_norm<T>(params);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params) {
      for (auto& g : p.mutable_grad()) g = static_cast<T>(g * s);
    }
  }
  return norm;
}

template <typename T>
double compute_gradients(std::span<Tensor<T>> params, const LossFn<T>& loss_fn) {
  for (auto& p : params) {
    if (!p.requires_grad()) p.set_requires_grad(true);
    p.zero_grad();
  }
  const Tensor<T> loss = loss_fn();
  nn::backward(loss);
  return static_cast<double>(loss.item());
}

template <typename T>
double sam_step(std::span<Tensor<T>> params, const LossFn<T>& loss_fn, double rho) {
  if (rho < 0.0) throw ContractError("sam_step: rho must be non-negative");
  const double loss = compute_gradients<T>(params, loss_fn);
  const double norm = global_grad_norm<T>(params);
  if (rho == 0.0 || norm == 0.0 || !std::isfinite(norm)) return loss;
  std::vector<std::vector<T>> saved;
  saved.reserve(params.size());
  for (auto& p : params) {
    auto value = p.mutable_data();
    saved.emplace_back(value.begin(), value.end());
    const auto grad = p.grad();
    for (std::size_t k = 0; k < value.size(); ++k) value[k] = static_cast<T>(value[k] + rho * grad[k] / norm);
  }
  compute_gradients<T>(params, loss_fn);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i].mutable_data();
    std::copy(saved[i].begin(), saved[i].end(), value.begin());
  }
  return loss;
}

#define SAIG_INSTANTIATE_OPTIM(T)                                                                      \
  template void adamw_step<T>(std::span<Tensor<T>>, AdamWState<T>&, double, double, const AdamWHyper&); \
  template double global_grad_norm<T>(std::span<const Tensor<T>>);                                    \
  template double clip_global_norm<T>(std::span<Tensor<T>>, double);                                  \
  template double compute_gradients<T>(std::span<Tensor<T>>, const LossFn<T>&);                       \
  template double sam_step<T>(std::span<Tensor<T>>, const LossFn<T>&, double);

SAIG_INSTANTIATE_OPTIM(float)
SAIG_INSTANTIATE_OPTIM(double)

}  // namespace saig::train
