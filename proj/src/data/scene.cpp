#include "saig/data/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

namespace saig::data {

namespace {

using Rgb = std::array<double, 3>;

struct Disc {
  double u, v, radius;
  Rgb color;
};

struct LatentScene {
  Rgb background;
  Rgb texture_tint;
  double texture_freq_u, texture_freq_v, texture_phase;
  double road_angle, road_offset, road_width;
  Rgb road_color;
  std::vector<Disc> discs;
};

Rgb random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> c(0.05, 0.95);
  return {c(rng), c(rng), c(rng)};
}

LatentScene draw_scene(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  LatentScene s;
  s.background = random_color(rng);
  s.texture_tint = random_color(rng);
  s.texture_freq_u = 2.0 + 6.0 * unit(rng);
  s.texture_freq_v = 2.0 + 6.0 * unit(rng);
  s.texture_phase = 2.0 * std::numbers::pi * unit(rng);
  s.road_angle = std::numbers::pi * unit(rng);
  s.road_offset = 0.3 * (unit(rng) - 0.5);
  s.road_width = 0.06 + 0.08 * unit(rng);
  s.road_color = random_color(rng);
  const int discs = 3 + static_cast<int>(unit(rng) * 3.0);
  for (int i = 0; i < discs; ++i) {
    s.discs.push_back({0.1 + 0.8 * unit(rng), 0.1 + 0.8 * unit(rng), 0.08 + 0.17 * unit(rng), random_color(rng)});
  }
  return s;
}

// Color of the scene at tile-local coordinates (u right, v down), both in [0, 1].
Rgb shade(const LatentScene& s, double u, double v) {
  const double t = 0.5 + 0.5 * std::sin(s.texture_freq_u * u * 2.0 * std::numbers::pi +
                                        s.texture_freq_v * v * 2.0 * std::numbers::pi + s.texture_phase);
  Rgb c;
  for (int k = 0; k < 3; ++k) c[k] = 0.8 * s.background[k] + 0.2 * t * s.texture_tint[k];
  const double du = u - 0.5, dv = v - 0.5;
  const double across = -std::sin(s.road_angle) * du + std::cos(s.road_angle) * dv - s.road_offset;
  if (std::abs(across) < s.road_width * 0.5) c = s.road_color;
  for (const auto& d : s.discs) {
    if ((u - d.u) * (u - d.u) + (v - d.v) * (v - d.v) < d.radius * d.radius) c = d.color;
  }
  return c;
}

float quantize(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(std::round(clamped * 255.0) / 255.0);
}

Image render_aerial(const LatentScene& s, ImageSize size, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 0.02);
  Image img({3, size.height, size.width});
  auto px = img.mutable_data();
  const std::size_t plane = size.height * size.width;
  for (std::size_t r = 0; r < size.height; ++r) {
    for (std::size_t c = 0; c < size.width; ++c) {
      const Rgb color = shade(s, (c + 0.5) / size.width, (r + 0.5) / size.height);
      for (std::size_t k = 0; k < 3; ++k) px[k * plane + r * size.width + c] = quantize(color[k] + noise(rng));
    }
  }
  return img;
}

// Column c looks along azimuth 2*pi*(c + 0.5)/W clockwise from north (-v). Rows
// above the horizon show sky; rows below sample the ground plane from the tile
// boundary (top) to near the center (bottom).
Image render_ground(const LatentScene& s, ImageSize size, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 0.02);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double gain = 0.85 + 0.3 * unit(rng);
  const Rgb sky{0.55 + 0.2 * unit(rng), 0.7 + 0.2 * unit(rng), 0.95};
  const std::size_t horizon = size.height * 3 / 8;
  Image img({3, size.height, size.width});
  auto px = img.mutable_data();
  const std::size_t plane = size.height * size.width;
  for (std::size_t r = 0; r < size.height; ++r) {
    for (std::size_t c = 0; c < size.width; ++c) {
      Rgb color = sky;
      if (r >= horizon) {
        const double t = (r - horizon + 0.5) / static_cast<double>(size.height - horizon);
        const double azimuth = 2.0 * std::numbers::pi * (c + 0.5) / size.width;
        // Far end of the ray sits on the tile boundary, so the panorama covers the whole tile.
        const double edge = 0.5 / std::max(std::abs(std::sin(azimuth)), std::abs(std::cos(azimuth)));
        const double reach = edge * (1.0 - t) + 0.03 * t;
        color = shade(s, 0.5 + reach * std::sin(azimuth), 0.5 - reach * std::cos(azimuth));
        for (auto& ch : color) ch *= gain;
      }
      for (std::size_t k = 0; k < 3; ++k) px[k * plane + r * size.width + c] = quantize(color[k] + noise(rng));
    }
  }
  return img;
}

}  // namespace

std::vector<ScenePair> generate_scene_pairs(std::uint64_t seed, std::size_t n, SceneSizes sizes) {
  if (n == 0) throw ContractError("generate_scene_pairs: n must be >= 1");
  if (sizes.ground.height < 2 || sizes.ground.width == 0 || sizes.aerial.height == 0 || sizes.aerial.width == 0) {
    throw ContractError("generate_scene_pairs: image sizes must be positive");
  }
  std::mt19937_64 rng(seed);
  const std::size_t grid = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  std::vector<ScenePair> pairs;
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const LatentScene scene = draw_scene(rng);
    ScenePair p;
    p.aerial = render_aerial(scene, sizes.aerial, rng);
    p.ground = render_ground(scene, sizes.ground, rng);
    p.pair_id = static_cast<std::int64_t>(i);
    p.tile_origin = {static_cast<double>(i % grid), static_cast<double>(i / grid)};
    p.tile_size = 1.0;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

ScenePair transform_pair(const ScenePair& pair, SceneTransform t) {
  const std::size_t C = pair.ground.dim(0), H = pair.ground.dim(1), W = pair.ground.dim(2);
  const std::size_t n = pair.aerial.dim(1);
  if (pair.aerial.dim(2) != n) throw ContractError("transform_pair: aerial tile must be square");
  if (W % 4 != 0) throw ContractError("transform_pair: panorama width must be divisible by 4");
  const std::size_t turns = static_cast<std::size_t>(((t.quarter_turns % 4) + 4) % 4);
  const std::size_t shift = turns * W / 4;

  ScenePair out = pair;
  out.ground = Image({C, H, W});
  auto g = out.ground.mutable_data();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t r = 0; r < H; ++r) {
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t mirrored = t.mirror ? W - 1 - x : x;
        const double v = pair.ground[(c * H + r) * W + mirrored] * t.ground_gain;
        g[(c * H + r) * W + (x + shift) % W] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  out.aerial = Image({C, n, n});
  auto a = out.aerial.mutable_data();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t x = 0; x < n; ++x) {
        // Undo the rotation to find the source pixel, then the mirror.
        std::size_t sr = r, sx = x;
        for (std::size_t k = 0; k < turns; ++k) {
          const std::size_t pr = n - 1 - sx, px = sr;
          sr = pr;
          sx = px;
        }
        if (t.mirror) sx = n - 1 - sx;
        a[(c * n + r) * n + x] = pair.aerial[(c * n + sr) * n + sx];
      }
    }
  }
  return out;
}

Image fov_crop(const Image& panorama, double fov_deg, double orientation_deg) {
  if (!(fov_deg > 0.0 && fov_deg <= 360.0)) {
    throw ContractError("fov_crop: field of view must lie in (0, 360], got " + std::to_string(fov_deg));
  }
  if (panorama.rank() != 3) throw DimensionError("fov_crop: panorama must be [C, H, W]");
  const std::size_t C = panorama.dim(0), H = panorama.dim(1), W = panorama.dim(2);
  const auto width = static_cast<std::size_t>(std::lround(static_cast<double>(W) * fov_deg / 360.0));
  if (width == 0) throw DimensionError("fov_crop: crop narrower than one column");
  const long start_raw = std::lround(static_cast<double>(W) * orientation_deg / 360.0);
  const long w = static_cast<long>(W);
  const std::size_t start = static_cast<std::size_t>(((start_raw % w) + w) % w);
  Image out({C, H, width});
  auto dst = out.mutable_data();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t r = 0; r < H; ++r) {
      for (std::size_t x = 0; x < width; ++x) {
        dst[(c * H + r) * width + x] = panorama[(c * H + r) * W + (start + x) % W];
      }
    }
  }
  return out;
}

}  // namespace saig::data
