#include "saig/data/labels.hpp"

#include <algorithm>

#include "saig/errors.hpp"

namespace saig::data {

double tile_iou(const Tile& a, const Tile& b) {
  if (!(a.size > 0.0) || !(b.size > 0.0)) throw ContractError("tile_iou: degenerate tile (size <= 0)");
  const double w = std::max(0.0, std::min(a.x + a.size, b.x + b.size) - std::max(a.x, b.x));
  const double h = std::max(0.0, std::min(a.y + a.size, b.y + b.size) - std::max(a.y, b.y));
  const double inter = w * h;
  return inter / (a.size * a.size + b.size * b.size - inter);
}

QueryLabels iou_label(const Tile& query, std::span<const Tile> references) {
  QueryLabels labels;
  for (const auto& ref : references) {
    const double iou = tile_iou(query, ref);
    if (iou > kPositiveIou) {
      labels.positives.push_back(ref.id);
    } else if (iou >= kSemiPositiveLow && iou <= kSemiPositiveHigh) {
      labels.semi_positives.push_back(ref.id);
    }
  }
  return labels;
}

}  // namespace saig::data
