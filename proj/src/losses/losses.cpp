#include "saig/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace saig::losses {

void LossConfig::validate() const {
  if (!(alpha > 0.0)) throw ContractError("loss config: alpha must be positive");
  if (!(tau > 0.0)) throw ContractError("loss config: tau must be positive");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kExhaustive:
      return "exhaustive";
    case Strategy::kSemiHard:
      return "semi_hard";
    case Strategy::kInfoNce:
      return "info_nce";
  }
  return "exhaustive";
}

Strategy parse_strategy(const std::string& s) {
  if (s == "exhaustive") return Strategy::kExhaustive;
  if (s == "semi_hard") return Strategy::kSemiHard;
  if (s == "info_nce") return Strategy::kInfoNce;
  throw ParseError("unknown loss strategy '" + s + "'");
}

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = nlohmann::json{{"alpha", c.alpha}, {"tau", c.tau}, {"strategy", to_string(c.strategy)}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  if (!j.is_object()) throw ParseError("loss config must be a JSON object");
  try {
    if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
    if (j.contains("tau")) c.tau = j.at("tau").get<double>();
    if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("loss config: ") + e.what());
  }
}

PairMatrix::PairMatrix(std::size_t size, std::vector<double> v) : n(size), values(std::move(v)) {
  if (values.size() != n * n) throw DimensionError("pair matrix must be square");
}

PairMatrix distance_matrix(std::span<const float> ground, std::span<const float> aerial, std::size_t dim) {
  if (dim == 0 || ground.size() % dim != 0 || ground.size() != aerial.size()) {
    throw DimensionError("distance_matrix: ground/aerial descriptor blocks differ");
  }
  const std::size_t n = ground.size() / dim;
  std::vector<double> d(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sq = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double diff = static_cast<double>(ground[i * dim + k]) - aerial[j * dim + k];
        sq += diff * diff;
      }
      d[i * n + j] = std::sqrt(sq);
    }
  }
  return {n, std::move(d)};
}

namespace {

template <typename T>
T softplus(T z) {
  return std::max(z, T{0}) + std::log1p(std::exp(-std::abs(z)));
}

template <typename T>
T sigmoid(T z) {
  if (z >= T{0}) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

void check_square(std::size_t rows, std::size_t cols, const ExclusionMask& mask, const char* op) {
  if (rows != cols) throw DimensionError(std::string(op) + ": pair matrix must be square");
  if (rows < 2) throw ContractError(std::string(op) + ": needs at least 2 pairs for in-batch negatives");
  if (!mask.empty() && (mask.n != rows || mask.bits.size() != rows * rows)) {
    throw DimensionError(std::string(op) + ": exclusion mask size does not match the batch");
  }
}

// Index into `negatives` chosen by the semi-hard rule; first index wins ties.
template <typename T>
std::size_t semi_hard_index(T d_pos, std::span<const T> negatives) {
  std::size_t best = negatives.size();
  for (std::size_t k = 0; k < negatives.size(); ++k) {
    if (negatives[k] > d_pos && (best == negatives.size() || negatives[k] < negatives[best])) best = k;
  }
  if (best != negatives.size()) return best;
  return static_cast<std::size_t>(std::max_element(negatives.begin(), negatives.end()) - negatives.begin());
}

// A (positive, negative) entry pair of the flat N x N matrix.
struct Triplet {
  std::size_t pos;
  std::size_t neg;
};

std::vector<Triplet> exhaustive_triplets(std::size_t n, const ExclusionMask& mask) {
  std::vector<Triplet> out;
  out.reserve(2 * n * (n - 1));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && !mask.excluded(i, j)) out.push_back({i * n + i, i * n + j});
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && !mask.excluded(j, i)) out.push_back({i * n + i, j * n + i});
    }
  }
  return out;
}

template <typename T>
std::vector<Triplet> semi_hard_triplets(std::span<const T> d, std::size_t n, const ExclusionMask& mask) {
  std::vector<Triplet> out;
  std::vector<T> negatives;
  std::vector<std::size_t> where;
  auto pick = [&](std::size_t pos) {
    if (negatives.empty()) return;
    const std::size_t k = semi_hard_index<T>(d[pos], negatives);
    out.push_back({pos, where[k]});
  };
  for (std::size_t i = 0; i < n; ++i) {  // ground anchors: row i
    negatives.clear();
    where.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || mask.excluded(i, j)) continue;
      negatives.push_back(d[i * n + j]);
      where.push_back(i * n + j);
    }
    pick(i * n + i);
  }
  for (std::size_t i = 0; i < n; ++i) {  // aerial anchors: column i
    negatives.clear();
    where.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || mask.excluded(j, i)) continue;
      negatives.push_back(d[j * n + i]);
      where.push_back(j * n + i);
    }
    pick(i * n + i);
  }
  return out;
}

template <typename T>
T triplet_mean(std::span<const T> d, const std::vector<Triplet>& triplets, T alpha) {
  if (triplets.empty()) throw ContractError("triplet loss: every negative is excluded");
  T total{0};
  for (const auto& t : triplets) total += softplus(alpha * (d[t.pos] - d[t.neg]));
  return total / static_cast<T>(triplets.size());
}

template <typename T>
Tensor<T> triplet_tensor(const Tensor<T>& distances, T alpha, std::vector<Triplet> triplets, const char* op) {
  const T value = triplet_mean<T>(distances.data(), triplets, alpha);
  return nn::make_result<T>({1}, {value}, {distances}, op, [alpha, triplets = std::move(triplets)](nn::Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    const T scale = self.grad[0] * alpha / static_cast<T>(triplets.size());
    for (const auto& t : triplets) {
      const T w = scale * sigmoid(alpha * (in.value[t.pos] - in.value[t.neg]));
      in.grad[t.pos] += w;
      in.grad[t.neg] -= w;
    }
  });
}

// Per-direction InfoNCE terms and the gradient coefficients w.r.t. s.
template <typename T>
T info_nce_value(std::span<const T> s, std::size_t n, T tau, const ExclusionMask& mask, std::vector<T>* grad) {
  if (grad) grad->assign(n * n, T{0});
  double total = 0.0;  // 2n terms; a float accumulator drifts by several ulp
  std::vector<T> logits;
  std::vector<std::size_t> where;
  const T direction_weight = T(0.5) / static_cast<T>(n);
  for (int direction = 0; direction < 2; ++direction) {
    for (std::size_t i = 0; i < n; ++i) {
      logits.clear();
      where.clear();
      std::size_t self_slot = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t idx = direction == 0 ? i * n + k : k * n + i;
        if (k != i && (direction == 0 ? mask.excluded(i, k) : mask.excluded(k, i))) continue;
        if (k == i) self_slot = logits.size();
        logits.push_back(s[idx] / tau);
        where.push_back(idx);
      }
      const T peak = *std::max_element(logits.begin(), logits.end());
      T others{0};  // sum of exp(l - peak) over the unmatched entries
      for (std::size_t m = 0; m < logits.size(); ++m) {
        if (m != self_slot) others += std::exp(logits[m] - peak);
      }
      const T self_term = std::exp(logits[self_slot] - peak);
      const T log_denom = peak + std::log(self_term + others);
      // log1p keeps a dominant matched logit from rounding the loss to zero.
      const T term = logits[self_slot] == peak ? std::log1p(others) : log_denom - logits[self_slot];
      total += static_cast<double>(term) * (0.5 / static_cast<double>(n));
      if (grad) {
        for (std::size_t m = 0; m < logits.size(); ++m) {
          const T p = std::exp(logits[m] - log_denom);
          (*grad)[where[m]] += direction_weight * (p - (m == self_slot ? T(1) : T(0))) / tau;
        }
      }
    }
  }
  return static_cast<T>(total);
}

}  // namespace

double soft_margin_triplet(double d_pos, double d_neg, double alpha) {
  if (!(alpha > 0.0)) throw ContractError("soft_margin_triplet: alpha must be positive");
  return softplus(alpha * (d_pos - d_neg));
}

double semi_hard_select(double d_pos, std::span<const double> negatives) {
  if (negatives.empty()) throw ContractError("semi_hard_select: no negatives");
  return negatives[semi_hard_index<double>(d_pos, negatives)];
}

double batch_triplet_exhaustive(const PairMatrix& d, double alpha, const ExclusionMask& mask) {
  check_square(d.n, d.n, mask, "batch_triplet_exhaustive");
  return triplet_mean<double>(d.values, exhaustive_triplets(d.n, mask), alpha);
}

double batch_triplet_semi_hard(const PairMatrix& d, double alpha, const ExclusionMask& mask) {
  check_square(d.n, d.n, mask, "batch_triplet_semi_hard");
  return triplet_mean<double>(d.values, semi_hard_triplets<double>(d.values, d.n, mask), alpha);
}

double info_nce(const PairMatrix& s, double tau, const ExclusionMask& mask) {
  if (!(tau > 0.0)) throw ContractError("info_nce: tau must be positive");
  if (!mask.empty() && mask.n != s.n) throw DimensionError("info_nce: exclusion mask size does not match the batch");
  return info_nce_value<double>(s.values, s.n, tau, mask, nullptr);
}

template <typename T>
Tensor<T> triplet_exhaustive_loss(const Tensor<T>& distances, T alpha, const ExclusionMask& mask) {
  if (distances.rank() != 2) throw DimensionError("triplet loss expects an [N, N] distance matrix");
  check_square(distances.dim(0), distances.dim(1), mask, "triplet_exhaustive_loss");
  return triplet_tensor(distances, alpha, exhaustive_triplets(distances.dim(0), mask), "triplet_exhaustive");
}

template <typename T>
Tensor<T> triplet_semi_hard_loss(const Tensor<T>& distances, T alpha, const ExclusionMask& mask) {
  if (distances.rank() != 2) throw DimensionError("triplet loss expects an [N, N] distance matrix");
  check_square(distances.dim(0), distances.dim(1), mask, "triplet_semi_hard_loss");
  return triplet_tensor(distances, alpha, semi_hard_triplets<T>(distances.data(), distances.dim(0), mask),
                        "triplet_semi_hard");
}

template <typename T>
Tensor<T> info_nce_loss(const Tensor<T>& similarities, T tau, const ExclusionMask& mask) {
  if (!(tau > T{0})) throw ContractError("info_nce: tau must be positive");
  if (similarities.rank() != 2 || similarities.dim(0) != similarities.dim(1)) {
    throw DimensionError("info_nce expects an [N, N] similarity matrix");
  }
  const std::size_t n = similarities.dim(0);
  if (!mask.empty() && mask.n != n) throw DimensionError("info_nce: exclusion mask size does not match the batch");
  std::vector<T> coeff;
  const T value = info_nce_value<T>(similarities.data(), n, tau, mask, &coeff);
  return nn::make_result<T>({1}, {value}, {similarities}, "info_nce", [coeff = std::move(coeff)](nn::Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    for (std::size_t i = 0; i < coeff.size(); ++i) in.grad[i] += self.grad[0] * coeff[i];
  });
}

template <typename T>
Tensor<T> retrieval_loss(const Tensor<T>& ground, const Tensor<T>& aerial, const LossConfig& config,
                         const ExclusionMask& mask) {
  config.validate();
  switch (config.strategy) {
    case Strategy::kExhaustive:
      return triplet_exhaustive_loss(nn::pairwise_l2(ground, aerial), static_cast<T>(config.alpha), mask);
    case Strategy::kSemiHard:
      return triplet_semi_hard_loss(nn::pairwise_l2(ground, aerial), static_cast<T>(config.alpha), mask);
    case Strategy::kInfoNce:
      return info_nce_loss(nn::matmul_nt(ground, aerial), static_cast<T>(config.tau), mask);
  }
  throw ContractError("unknown loss strategy");
}

#define SAIG_INSTANTIATE_LOSSES(T)                                                                       \
  template Tensor<T> triplet_exhaustive_loss<T>(const Tensor<T>&, T, const ExclusionMask&);             \
  template Tensor<T> triplet_semi_hard_loss<T>(const Tensor<T>&, T, const ExclusionMask&);              \
  template Tensor<T> info_nce_loss<T>(const Tensor<T>&, T, const ExclusionMask&);                       \
  template Tensor<T> retrieval_loss<T>(const Tensor<T>&, const Tensor<T>&, const LossConfig&, const ExclusionMask&);

SAIG_INSTANTIATE_LOSSES(float)
SAIG_INSTANTIATE_LOSSES(double)

}  // namespace saig::losses
