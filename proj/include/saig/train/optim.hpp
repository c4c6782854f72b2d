#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "saig/numerics/tensor.hpp"

namespace saig::train {

using nn::Tensor;

// Linear ramp 0 -> base_lr over round(warmup_fraction * total_steps) steps,
// then half-cosine decay to 0 at total_steps.
double lr_schedule(std::int64_t step, std::int64_t total_steps, double base_lr, double warmup_fraction);

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamWState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t step = 0;  // updates applied so far
};

// One update of every tensor in `params` from its stored grad. Weight decay is
// decoupled: p <- p * (1 - lr * wd) before the Adam step.
template <typename T>
void adamw_step(std::span<Tensor<T>> params, AdamWState<T>& state, double lr, double weight_decay,
                const AdamWHyper& hyper = {});

template <typename T>
double global_grad_norm(std::span<const Tensor<T>> params);

// Scales every grad by max_norm / norm when norm > max_norm. Returns the
// norm before clipping.
template <typename T>
double clip_global_norm(std::span<Tensor<T>> params, double max_norm);

// Builds the loss graph at the current parameter values.
template <typename T>
using LossFn = std::function<Tensor<T>()>;

// Zeroes grads, evaluates `loss_fn` and backpropagates. Returns the loss.
template <typename T>
double compute_gradients(std::span<Tensor<T>> params, const LossFn<T>& loss_fn);

// Sharpness-aware gradients: ascend by rho * g / ||g|| from the current
// point, recompute the gradients there and put the parameters back. Grads
// hold the perturbed gradients on return. A zero gradient norm (or rho == 0)
// leaves the plain gradients in place. Returns the loss at the unperturbed point.
template <typename T>
double sam_step(std::span<Tensor<T>> params, const LossFn<T>& loss_fn, double rho);

}  // namespace saig::train
