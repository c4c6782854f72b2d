#pragma once

#include <cstddef>

#include "saig/numerics/ops.hpp"

namespace saig::aggregation {

using nn::Tensor;

// Spatial-mixing MLP (P -> 4P -> P) followed by a projection onto K spatial
// slots. Weights are stored [in, out] and act along the token axis.
template <typename T>
struct SmdParams {
  Tensor<T> w1, b1;  // [P, 4P], [4P]
  Tensor<T> w2, b2;  // [4P, P], [P]
  Tensor<T> w3, b3;  // [P, K], [K]

  std::size_t tokens() const { return w1.dim(0); }
  std::size_t slots() const { return w3.dim(1); }
};

// Per-position projection applied after average-pooling the token grid.
template <typename T>
struct LocalHeadParams {
  Tensor<T> weight;  // [C, proj_dim]
  Tensor<T> bias;    // [proj_dim]
};

// Mean over tokens, then L2 normalization. Accepts [P, C] (returns [C]) or
// [N, P, C] (returns [N, C]).
template <typename T>
Tensor<T> gap_head(const Tensor<T>& tokens);

// SMD descriptor before normalization, [N, K*C] laid out as K blocks of C.
template <typename T>
Tensor<T> smd_features(const Tensor<T>& tokens, const SmdParams<T>& params);

// Normalized SMD descriptor; [P, C] -> [K*C] or [N, P, C] -> [N, K*C].
template <typename T>
Tensor<T> smd_head(const Tensor<T>& tokens, const SmdParams<T>& params);

// Average-pools the grid_h x grid_w token grid to pool_h x pool_w, projects each
// pooled cell to proj_dim and concatenates cells row-major into one vector.
template <typename T>
Tensor<T> local_head(const Tensor<T>& tokens, std::size_t grid_h, std::size_t grid_w, std::size_t pool_h,
                     std::size_t pool_w, const LocalHeadParams<T>& params);

}  // namespace saig::aggregation
