#include "saig/model/complexity.hpp"

namespace saig::model {

std::uint64_t param_count(const ModelConfig& config) {
  config.validate();
  const std::uint64_t D = config.dim;
  const std::uint64_t P = token_grid(config, config.input_hw).count();
  std::uint64_t total = 0;

  std::uint64_t in_ch = 3;
  for (std::uint64_t out_ch : config.stem_channels) {
    total += out_ch * in_ch * 9;  // kernel, no bias
    total += 2 * out_ch;          // BN affine
    in_ch = out_ch;
  }
  total += in_ch * D + D;  // projection
  total += P * D;          // position embedding

  const std::uint64_t per_layer = 2 * D + 4 * (D * D + D);
  total += config.depth * per_layer;
  total += 2 * D;  // final LayerNorm

  switch (config.head) {
    case HeadType::kGap:
      break;
    case HeadType::kSmd:
      total += (P * 4 * P + 4 * P) + (4 * P * P + P) + (P * config.smd_k + config.smd_k);
      break;
    case HeadType::kLocal:
      total += D * config.local_proj_dim + config.local_proj_dim;
      break;
  }
  if (config.classifier_classes > 0) total += D * config.classifier_classes + config.classifier_classes;
  return total;
}

std::uint64_t siamese_param_count(const ModelConfig& config) {
  return param_count(config.for_branch(config.input_hw)) + param_count(config.for_branch(config.aerial_hw));
}

FlopBreakdown flop_count(const ModelConfig& config, ImageSize hw) {
  config.validate();
  const TokenGrid grid = token_grid(config, hw);
  const std::uint64_t D = config.dim;
  const std::uint64_t P = grid.count();
  FlopBreakdown f;

  std::uint64_t in_ch = 3, h = hw.height, w = hw.width;
  for (std::size_t i = 0; i < config.stem_channels.size(); ++i) {
    const std::uint64_t s = config.stem_strides[i];
    h = (h + 2 - 3) / s + 1;
    w = (w + 2 - 3) / s + 1;
    f.stem += config.stem_channels[i] * in_ch * 9 * h * w;
    in_ch = config.stem_channels[i];
  }
  f.projection = P * in_ch * D;
  f.attention = config.depth * (4 * P * D * D + 2 * P * P * D);

  switch (config.head) {
    case HeadType::kGap:
      break;
    case HeadType::kSmd:
      f.head = D * (P * 4 * P + 4 * P * P + P * config.smd_k);
      break;
    case HeadType::kLocal:
      f.head = config.local_pool_hw.height * config.local_pool_hw.width * D * config.local_proj_dim;
      break;
  }
  if (config.classifier_classes > 0) f.head += D * config.classifier_classes;
  return f;
}

std::uint64_t siamese_flop_count(const ModelConfig& config) {
  return flop_count(config, config.input_hw).total() + flop_count(config, config.aerial_hw).total();
}

}  // namespace saig::model
