#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "saig/numerics/ops.hpp"

namespace saig::losses {

using nn::Tensor;

enum class Strategy { kExhaustive, kSemiHard, kInfoNce };

struct LossConfig {
  double alpha = 10.0;  // soft-margin triplet scale
  double tau = 0.02;    // InfoNCE temperature
  Strategy strategy = Strategy::kExhaustive;

  void validate() const;
};

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& s);
void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

// Square N x N matrix; row i is ground query i, column j is aerial reference j.
struct PairMatrix {
  std::size_t n = 0;
  std::vector<double> values;

  PairMatrix() = default;
  PairMatrix(std::size_t size, std::vector<double> v);
  double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

// d[i][j] = ||ground_i - aerial_j|| over [N, dim] descriptor rows.
PairMatrix distance_matrix(std::span<const float> ground, std::span<const float> aerial, std::size_t dim);

// Pairs (i, j), i != j, that must play neither the positive nor the negative
// role, e.g. semi-positive references. Empty means nothing is excluded.
struct ExclusionMask {
  std::size_t n = 0;
  std::vector<std::uint8_t> bits;

  bool empty() const { return bits.empty(); }
  bool excluded(std::size_t i, std::size_t j) const { return !bits.empty() && bits[i * n + j] != 0; }
};

// log(1 + exp(alpha * (d_pos - d_neg))) in overflow-free form.
double soft_margin_triplet(double d_pos, double d_neg, double alpha);

// Closest negative strictly farther than d_pos; the largest negative when none
// is. ContractError on an empty list.
double semi_hard_select(double d_pos, std::span<const double> negatives);

// Mean soft-margin triplet over every in-batch triplet in both retrieval
// directions: (d[i][i], d[i][j]) and (d[i][i], d[j][i]) for j != i.
double batch_triplet_exhaustive(const PairMatrix& d, double alpha, const ExclusionMask& mask = {});

// One semi-hard negative per anchor, 2N anchors (ground rows, aerial columns).
double batch_triplet_semi_hard(const PairMatrix& d, double alpha, const ExclusionMask& mask = {});

// Symmetrized InfoNCE over a similarity matrix, averaged over the row-wise
// (ground -> aerial) and column-wise (aerial -> ground) directions.
double info_nce(const PairMatrix& s, double tau, const ExclusionMask& mask = {});

// Differentiable forms over a [N, N] tensor; values agree with the functions above.
template <typename T>
Tensor<T> triplet_exhaustive_loss(const Tensor<T>& distances, T alpha, const ExclusionMask& mask = {});
template <typename T>
Tensor<T> triplet_semi_hard_loss(const Tensor<T>& distances, T alpha, const ExclusionMask& mask = {});
template <typename T>
Tensor<T> info_nce_loss(const Tensor<T>& similarities, T tau, const ExclusionMask& mask = {});

// Loss of a batch of matched [N, dim] unit descriptors under `config`.
template <typename T>
Tensor<T> retrieval_loss(const Tensor<T>& ground, const Tensor<T>& aerial, const LossConfig& config,
                         const ExclusionMask& mask = {});

}  // namespace saig::losses
