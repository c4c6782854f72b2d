#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "saig/numerics/tensor.hpp"

namespace saig::nn {

// Builds an op result. `backward` is attached only when some input requires
// grad; otherwise the result is a plain leaf-like value with no history.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::vector<Tensor<T>> inputs,
                      const char* op, std::function<void(Node<T>&)> backward);

// Throws NumericError naming `where` if any value is NaN or infinite.
template <typename T>
void check_finite(const Tensor<T>& x, const std::string& where);

// --- elementwise / shape -------------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
// Elementwise product of equal shapes.
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
// x[..., n] + bias[n]
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
// Exact x * Phi(x) form.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
// Swaps the two trailing axes.
template <typename T> Tensor<T> transpose_last2(const Tensor<T>& x);

// --- products ------------------------------------------------------------

// a[..., k] x b[k, n] -> [..., n]; leading axes of `a` are flattened into rows.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// a[m, k] x b[n, k]^T -> [m, n]
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
// Batched: a[B, m, k] x b[B, k, n] -> [B, m, n]
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);
// Batched: a[B, m, k] x b[B, n, k]^T -> [B, m, n]
template <typename T> Tensor<T> bmm_nt(const Tensor<T>& a, const Tensor<T>& b);
// x[..., in] W[in, out] + b[out]
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// --- normalization / attention helpers -----------------------------------

template <typename T> Tensor<T> softmax_row(const Tensor<T>& x);
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-6));
// Row-wise x / ||x||; a zero row is a NumericError (degenerate input).
template <typename T> Tensor<T> l2_normalize_rows(const Tensor<T>& x);

// [B, P, H*dh] -> [B*H, P, dh]
template <typename T> Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads);
// [B*H, P, dh] -> [B, P, H*dh]
template <typename T> Tensor<T> merge_heads(const Tensor<T>& x, std::size_t heads);

// --- convolution ---------------------------------------------------------

// Cross-correlation with a 3x3 kernel. `input` is [N, C, H, W] or [C, H, W].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, std::size_t stride, std::size_t padding);

enum class BnMode { kTrain, kInfer };

template <typename T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(channels, T{0}), running_var(channels, T{1}) {}
};

// Per-channel normalization of [N, C, H, W] (or [C, H, W]). Training mode uses
// batch statistics and folds them into `stats` with `momentum`.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& stats, BnMode mode, T momentum = T(0.1), T eps = T(1e-5));

// [N, C, h, w] -> [N, h*w, C], positions in row-major order.
template <typename T> Tensor<T> feature_map_to_tokens(const Tensor<T>& x);
// [N, P, C] -> [N, C]
template <typename T> Tensor<T> mean_tokens(const Tensor<T>& x);
// Average-pools a [N, P, C] token grid of grid_h x grid_w down to out_h x out_w.
template <typename T>
Tensor<T> token_avg_pool(const Tensor<T>& x, std::size_t grid_h, std::size_t grid_w,
                         std::size_t out_h, std::size_t out_w);

// d[i][j] = ||a_i - b_j||_2 for a[N, d], b[M, d].
template <typename T> Tensor<T> pairwise_l2(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace saig::nn
