#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace saig::model {

enum class Variant { kS, kD, kCustom };
enum class HeadType { kGap, kSmd, kLocal };

struct ImageSize {
  std::size_t height = 0;
  std::size_t width = 0;

  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

// Architecture of one branch. `input_hw` is the ground branch resolution and
// `aerial_hw` the aerial one; each branch owns a position embedding sized for
// its own token grid.
struct ModelConfig {
  Variant variant = Variant::kD;
  std::size_t depth = 22;
  std::size_t dim = 384;
  std::size_t heads = 12;
  std::vector<std::size_t> stem_channels{64, 128, 128, 256, 256, 512};
  std::vector<std::size_t> stem_strides{2, 2, 1, 2, 1, 2};
  std::size_t projection_dim = 384;
  HeadType head = HeadType::kGap;
  std::size_t smd_k = 8;
  ImageSize local_pool_hw{4, 16};
  std::size_t local_proj_dim = 48;
  std::size_t classifier_classes = 0;
  ImageSize input_hw{128, 512};
  ImageSize aerial_hw{256, 256};
  double layer_norm_eps = 1e-6;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  // Named variants at a given (ground, aerial) resolution.
  static ModelConfig saig_s();
  static ModelConfig saig_d();

  std::size_t downsample() const;  // product of stem strides
  std::size_t descriptor_dim() const;

  // Copy of this config resolved for a single branch at `hw` (input_hw = hw).
  ModelConfig for_branch(ImageSize hw) const;

  // Throws ContractError / DimensionError naming the offending field.
  void validate() const;
};

struct TokenGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t count() const { return height * width; }
};

// Token grid of an image of `hw` under `config`'s stem; DimensionError if `hw`
// is not divisible by the stem's downsampling factor.
TokenGrid token_grid(const ModelConfig& config, ImageSize hw);

std::string to_string(Variant v);
std::string to_string(HeadType h);
Variant parse_variant(const std::string& s);
HeadType parse_head(const std::string& s);

void to_json(nlohmann::json& j, const ImageSize& s);
void from_json(const nlohmann::json& j, ImageSize& s);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace saig::model
