#include "saig/aggregation/heads.hpp"

#include <string>

namespace saig::aggregation {

namespace {

// Lifts [P, C] to [1, P, C]; reports whether the caller passed the unbatched form.
template <typename T>
std::pair<Tensor<T>, bool> as_batched(const Tensor<T>& tokens, const char* op) {
  if (tokens.rank() == 3) return {tokens, false};
  if (tokens.rank() == 2) return {nn::reshape(tokens, {1, tokens.dim(0), tokens.dim(1)}), true};
  throw DimensionError(std::string(op) + ": tokens must be [P, C] or [N, P, C], got " +
                       nn::shape_str(tokens.shape()));
}

template <typename T>
Tensor<T> finish(const Tensor<T>& rows, bool unbatched) {
  auto out = nn::l2_normalize_rows(rows);
  return unbatched ? nn::reshape(out, {out.dim(1)}) : out;
}

}  // namespace

template <typename T>
Tensor<T> gap_head(const Tensor<T>& tokens) {
  auto [x, unbatched] = as_batched(tokens, "gap_head");
  return finish(nn::mean_tokens(x), unbatched);
}

template <typename T>
Tensor<T> smd_features(const Tensor<T>& tokens, const SmdParams<T>& params) {
  auto [x, unbatched] = as_batched(tokens, "smd_head");
  const std::size_t N = x.dim(0), P = x.dim(1), C = x.dim(2);
  if (params.tokens() != P) {
    throw DimensionError("smd_head: parameters mix " + std::to_string(params.tokens()) + " tokens, input has " +
                         std::to_string(P));
  }
  const std::size_t K = params.slots();
  auto spatial = nn::transpose_last2(x);                                             // [N, C, P]
  auto mixed = nn::linear(nn::gelu(nn::linear(spatial, params.w1, params.b1)), params.w2, params.b2);
  auto slots = nn::linear(mixed, params.w3, params.b3);                              // [N, C, K]
  return nn::reshape(nn::transpose_last2(slots), {N, K * C});                       // K-major blocks of C
}

template <typename T>
Tensor<T> smd_head(const Tensor<T>& tokens, const SmdParams<T>& params) {
  return finish(smd_features(tokens, params), tokens.rank() == 2);
}

template <typename T>
Tensor<T> local_head(const Tensor<T>& tokens, std::size_t grid_h, std::size_t grid_w, std::size_t pool_h,
                     std::size_t pool_w, const LocalHeadParams<T>& params) {
  auto [x, unbatched] = as_batched(tokens, "local_head");
  const std::size_t N = x.dim(0);
  auto pooled = nn::token_avg_pool(x, grid_h, grid_w, pool_h, pool_w);
  auto projected = nn::linear(pooled, params.weight, params.bias);
  return finish(nn::reshape(projected, {N, projected.dim(1) * projected.dim(2)}), unbatched);
}

#define SAIG_INSTANTIATE_HEADS(T)                                                                      \
  template Tensor<T> gap_head<T>(const Tensor<T>&);                                                   \
  template Tensor<T> smd_features<T>(const Tensor<T>&, const SmdParams<T>&);                          \
  template Tensor<T> smd_head<T>(const Tensor<T>&, const SmdParams<T>&);                              \
  template Tensor<T> local_head<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t, \
                                   const LocalHeadParams<T>&);

SAIG_INSTANTIATE_HEADS(float)
SAIG_INSTANTIATE_HEADS(double)

}  // namespace saig::aggregation
