#pragma once

#include <random>
#include <vector>

#include "saig/model/config.hpp"
#include "saig/numerics/tensor.hpp"

namespace test_support {

inline std::vector<double> uniform(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <typename T = double>
saig::nn::Tensor<T> random_tensor(saig::nn::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  const auto d = uniform(saig::nn::shape_numel(shape), seed, lo, hi);
  return saig::nn::Tensor<T>(std::move(shape), std::vector<T>(d.begin(), d.end()));
}

// Smallest sensible branch: 2 layers, width 16, 16x downsampling.
inline saig::model::ModelConfig small_config(saig::model::HeadType head = saig::model::HeadType::kGap) {
  saig::model::ModelConfig c;
  c.variant = saig::model::Variant::kCustom;
  c.depth = 2;
  c.dim = 16;
  c.projection_dim = 16;
  c.heads = 4;
  c.stem_channels = {4, 8, 8, 8, 8, 16};
  c.head = head;
  c.smd_k = 2;
  c.local_pool_hw = {1, 2};
  c.local_proj_dim = 4;
  c.input_hw = {32, 64};
  c.aerial_hw = {32, 32};
  return c;
}

}  // namespace test_support
