#pragma once

#include <cstdint>
#include <vector>

#include "saig/model/config.hpp"
#include "saig/numerics/tensor.hpp"

namespace saig::data {

using model::ImageSize;
using Image = nn::Tensor<float>;  // [3, H, W], values in [0, 1]

struct TileOrigin {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const TileOrigin&, const TileOrigin&) = default;
};

struct ScenePair {
  Image ground;
  Image aerial;
  std::int64_t pair_id = 0;
  TileOrigin tile_origin;
  double tile_size = 1.0;
};

struct SceneSizes {
  ImageSize ground{32, 64};
  ImageSize aerial{32, 32};
};

// Renders `n` pairs, each from its own random latent scene (background
// texture, a road band and colored discs) rasterized top-down for the aerial
// view and as a 360-degree panorama around the tile center for the ground view.
// Pixel values are quantized to k/255 so an 8-bit lossless round trip is exact.
// Deterministic per seed; tiles sit on a non-overlapping unit grid.
std::vector<ScenePair> generate_scene_pairs(std::uint64_t seed, std::size_t n, SceneSizes sizes = {});

// Rigid transform of the whole scene seen from above: `quarter_turns`
// clockwise rotations, preceded by an east-west mirror when `mirror` is set.
struct SceneTransform {
  int quarter_turns = 0;
  bool mirror = false;
  double ground_gain = 1.0;  // exposure multiplier on the panorama, clamped to [0, 1]
};

// Applies `t` consistently to both views: the panorama is rolled by W/4
// columns per turn (and column-reversed for the mirror), the aerial tile is
// rotated / flipped. Needs a square aerial tile and W divisible by 4.
ScenePair transform_pair(const ScenePair& pair, SceneTransform t);

// Horizontal crop of a panorama: width round(W * fov / 360) starting at column
// round(W * orientation / 360), wrapping around the seam.
Image fov_crop(const Image& panorama, double fov_deg, double orientation_deg);

}  // namespace saig::data
