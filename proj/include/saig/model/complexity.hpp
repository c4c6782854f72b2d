#pragma once

#include <cstdint>

#include "saig/model/config.hpp"

namespace saig::model {

// Learnable scalars of one branch built at config.input_hw (the position
// embedding is the only resolution-dependent term, plus the SMD mixer).
std::uint64_t param_count(const ModelConfig& config);

// Ground branch at input_hw plus aerial branch at aerial_hw.
std::uint64_t siamese_param_count(const ModelConfig& config);

struct FlopBreakdown {
  std::uint64_t stem = 0;       // convolutions
  std::uint64_t projection = 0; // stem FC to `dim`
  std::uint64_t attention = 0;  // Q/K/V/O projections plus QK^T and AV
  std::uint64_t head = 0;       // SMD / local projection / classifier
  std::uint64_t total() const { return stem + projection + attention + head; }
};

// Analytic forward cost of one image at `hw`, counting one multiply-accumulate
// as one FLOP (the convention behind the published GFLOPs figures).
// Normalizations, activations and softmax are not counted.
FlopBreakdown flop_count(const ModelConfig& config, ImageSize hw);

// Ground image at input_hw plus aerial image at aerial_hw.
std::uint64_t siamese_flop_count(const ModelConfig& config);

}  // namespace saig::model
