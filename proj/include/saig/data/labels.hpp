#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace saig::data {

// Axis-aligned square tile in world units.
struct Tile {
  std::int64_t id = 0;
  double x = 0.0;
  double y = 0.0;
  double size = 1.0;
};

inline constexpr double kPositiveIou = 0.39;           // strictly greater is positive
inline constexpr double kSemiPositiveLow = 1.0 / 7.0;  // inclusive
inline constexpr double kSemiPositiveHigh = 9.0 / 23.0;  // inclusive

// Labels of one query; references in neither list are negatives.
struct QueryLabels {
  std::vector<std::int64_t> positives;
  std::vector<std::int64_t> semi_positives;
};

// ContractError on a tile with size <= 0.
double tile_iou(const Tile& a, const Tile& b);

// IoU > 0.39 -> positive; otherwise IoU in [1/7, 9/23] -> semi-positive.
QueryLabels iou_label(const Tile& query, std::span<const Tile> references);

}  // namespace saig::data
