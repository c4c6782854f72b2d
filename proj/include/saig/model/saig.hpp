#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "saig/aggregation/heads.hpp"
#include "saig/model/config.hpp"
#include "saig/numerics/ops.hpp"

namespace saig::model {

using nn::BnMode;
using nn::Tensor;

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// Non-learnable state that still has to round-trip through checkpoints.
template <typename T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* values;
};

template <typename T>
struct StemParams {
  std::vector<Tensor<T>> conv;  // [C_out, C_in, 3, 3], no bias (BN follows)
  std::vector<Tensor<T>> bn_gamma;
  std::vector<Tensor<T>> bn_beta;
  std::vector<nn::BatchNormStats<T>> bn_stats;
  Tensor<T> proj_w;     // [C_last, dim]
  Tensor<T> proj_b;     // [dim]
  Tensor<T> pos_embed;  // [P, dim]
};

template <typename T>
struct AttentionParams {
  Tensor<T> ln_gamma, ln_beta;
  Tensor<T> wq, bq, wk, bk, wv, bv;
  Tensor<T> wo, bo;
};

// All parameters of one branch. `config` is resolved for the branch, i.e.
// config.input_hw is the resolution this branch was built for.
template <typename T>
struct BranchParams {
  ModelConfig config;
  StemParams<T> stem;
  std::vector<AttentionParams<T>> layers;
  Tensor<T> norm_gamma, norm_beta;
  std::optional<aggregation::SmdParams<T>> smd;
  std::optional<aggregation::LocalHeadParams<T>> local;
  Tensor<T> cls_w, cls_b;  // undefined unless classifier_classes > 0

  // Learnable tensors in a fixed order; handles share storage with the params.
  std::vector<NamedTensor<T>> parameters() const;
  std::vector<NamedBuffer<T>> buffers();
};

// Independent ground and aerial branches; nothing is shared between them.
template <typename T>
struct SiamesePair {
  BranchParams<T> ground;
  BranchParams<T> aerial;

  std::vector<NamedTensor<T>> parameters() const;  // "ground.*" then "aerial.*"
  std::vector<NamedBuffer<T>> buffers();
};

template <typename T>
struct PatchGrid {
  Tensor<T> tokens;  // [N, P, dim]
  TokenGrid grid;
};

// Deterministic per seed: truncated normal (std 0.02) for projection,
// attention, head and classifier weights, He-scaled truncated normal for conv
// kernels, zeros for biases and the position embedding, ones/zeros for norms.
template <typename T>
BranchParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

// Ground branch at config.input_hw, aerial branch at config.aerial_hw.
template <typename T>
SiamesePair<T> init_siamese(const ModelConfig& config, std::uint64_t seed);

// Six conv-BN-ReLU stages, per-position projection and the position embedding.
// `images` is [N, 3, H, W] or [3, H, W].
template <typename T>
PatchGrid<T> conv_stem_forward(const Tensor<T>& images, StemParams<T>& stem, const ModelConfig& config, BnMode mode);

// Pre-norm multi-head self-attention with a residual connection; no FFN.
// Accepts [P, D] or [N, P, D].
template <typename T>
Tensor<T> msa_layer_forward(const Tensor<T>& x, const AttentionParams<T>& params, std::size_t heads,
                            T eps = T(1e-6));

// Stem, attention stack and final LayerNorm: [N, P, dim] tokens ready for a head.
template <typename T>
PatchGrid<T> encode(const Tensor<T>& images, BranchParams<T>& params, BnMode mode);

// Full branch: unit-norm descriptors [N, descriptor_dim] (or [descriptor_dim]
// for a single [3, H, W] image). NumericError names the failing layer.
template <typename T>
Tensor<T> saig_forward(const Tensor<T>& images, BranchParams<T>& params, BnMode mode);

// Classifier logits [N, classes] from pooled (un-normalized) tokens.
template <typename T>
Tensor<T> classify(const Tensor<T>& images, BranchParams<T>& params, BnMode mode);

using Descriptor = std::vector<float>;

// Splits a [N, D] descriptor tensor into per-row vectors.
std::vector<Descriptor> to_descriptors(const Tensor<float>& rows);

}  // namespace saig::model
