#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "saig/losses/losses.hpp"
#include "support.hpp"

using namespace saig;
using namespace saig::losses;

namespace {

PairMatrix random_matrix(std::size_t n, std::uint64_t seed, double lo = 0.1, double hi = 2.0) {
  return {n, test_support::uniform(n * n, seed, lo, hi)};
}

double naive_triplet(double dp, double dn, double alpha) { return std::log(1.0 + std::exp(alpha * (dp - dn))); }

// Every ordered triplet spelled out: anchor, its positive, one negative.
double enumerate_exhaustive(const PairMatrix& d, double alpha) {
  double total = 0.0;
  int count = 0;
  for (std::size_t a = 0; a < d.n; ++a)
    for (std::size_t neg = 0; neg < d.n; ++neg) {
      if (neg == a) continue;
      total += naive_triplet(d(a, a), d(a, neg), alpha);  // ground anchor a, aerial negative
      total += naive_triplet(d(a, a), d(neg, a), alpha);  // aerial anchor a, ground negative
      count += 2;
    }
  return total / count;
}

double enumerate_semi_hard(const PairMatrix& d, double alpha) {
  double total = 0.0;
  for (int dir = 0; dir < 2; ++dir)
    for (std::size_t a = 0; a < d.n; ++a) {
      const double dp = d(a, a);
      double above = INFINITY, below = -INFINITY;
      for (std::size_t k = 0; k < d.n; ++k) {
        if (k == a) continue;
        const double dn = dir == 0 ? d(a, k) : d(k, a);
        if (dn > dp) above = std::min(above, dn);
        below = std::max(below, dn);
      }
      total += naive_triplet(dp, std::isfinite(above) ? above : below, alpha);
    }
  return total / (2.0 * d.n);
}

double naive_info_nce(const PairMatrix& s, double tau) {
  double total = 0.0;
  for (int dir = 0; dir < 2; ++dir)
    for (std::size_t i = 0; i < s.n; ++i) {
      long double den = 0.0L;
      for (std::size_t k = 0; k < s.n; ++k) den += std::exp(static_cast<long double>(dir == 0 ? s(i, k) : s(k, i)) / tau);
      total += -static_cast<double>(std::log(std::exp(static_cast<long double>(s(i, i)) / tau) / den));
    }
  return total / (2.0 * s.n);
}

PairMatrix permuted(const PairMatrix& d, const std::vector<std::size_t>& perm) {
  std::vector<double> v(d.n * d.n);
  for (std::size_t i = 0; i < d.n; ++i)
    for (std::size_t j = 0; j < d.n; ++j) v[i * d.n + j] = d(perm[i], perm[j]);
  return {d.n, v};
}

}  // namespace

TEST_CASE("soft-margin triplet") {
  CHECK(soft_margin_triplet(0.7, 0.7, 10.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(soft_margin_triplet(0.5, 0.6, 10.0) == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-15));
  CHECK(std::abs(soft_margin_triplet(0.5, 0.6, 10.0) - 0.3133) < 1e-4);
  const double big = soft_margin_triplet(5.5, 0.5, 10.0);
  CHECK(std::isfinite(big));
  CHECK(big == doctest::Approx(50.0 + std::log1p(std::exp(-50.0))).epsilon(1e-15));
  CHECK(std::isfinite(soft_margin_triplet(0.0, 1000.0, 10.0)));
  CHECK(soft_margin_triplet(0.0, 1000.0, 10.0) >= 0.0);
  CHECK(std::isfinite(soft_margin_triplet(1000.0, 0.0, 10.0)));

  for (double z : test_support::uniform(200, 1, -3.0, 3.0))
    CHECK(soft_margin_triplet(z, 0.0, 10.0) == doctest::Approx(naive_triplet(z, 0.0, 10.0)).epsilon(1e-6));
}

TEST_CASE("exhaustive batch loss") {
  CHECK(batch_triplet_exhaustive(PairMatrix(2, {0.4, 0.4, 0.4, 0.4}), 10.0) == doctest::Approx(std::log(2.0)));

  const PairMatrix d(2, {0.2, 0.9, 0.8, 0.3});
  const double four = (naive_triplet(0.2, 0.9, 10) + naive_triplet(0.2, 0.8, 10) + naive_triplet(0.3, 0.8, 10) +
                       naive_triplet(0.3, 0.9, 10)) / 4.0;
  CHECK(batch_triplet_exhaustive(d, 10.0) == doctest::Approx(four).epsilon(1e-12));

  for (std::size_t n = 2; n <= 8; ++n) {
    const auto m = random_matrix(n, 100 + n);
    CHECK(std::abs(batch_triplet_exhaustive(m, 10.0) - enumerate_exhaustive(m, 10.0)) < 1e-6);
  }
  CHECK_THROWS_AS(batch_triplet_exhaustive(PairMatrix(1, {0.0}), 10.0), ContractError);
}

TEST_CASE("semi-hard selection") {
  const std::vector<double> a{0.3, 0.55, 0.9};
  CHECK(semi_hard_select(0.5, a) == 0.55);
  const std::vector<double> above{0.8, 0.6, 0.7};
  CHECK(semi_hard_select(0.5, above) == 0.6);
  const std::vector<double> below{0.1, 0.4, 0.2};
  CHECK(semi_hard_select(0.5, below) == 0.4);
  const std::vector<double> tie{0.5, 0.2};
  CHECK(semi_hard_select(0.5, tie) == 0.5);  // not strictly farther: fallback to the max
  CHECK_THROWS_AS(semi_hard_select(0.5, std::vector<double>{}), ContractError);
}

TEST_CASE("semi-hard batch loss") {
  const PairMatrix sym(2, {0.2, 0.7, 0.7, 0.3});
  CHECK(batch_triplet_semi_hard(sym, 10.0) == doctest::Approx(batch_triplet_exhaustive(sym, 10.0)).epsilon(1e-12));

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = random_matrix(5, 200 + seed);
    CHECK(batch_triplet_semi_hard(m, 10.0) == doctest::Approx(enumerate_semi_hard(m, 10.0)).epsilon(1e-12));
  }
}

TEST_CASE("increasing negatives never raises the loss") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto m = random_matrix(6, 300 + seed);
    for (double delta : {0.01, 0.1, 0.5}) {
      std::vector<double> v = m.values;
      for (std::size_t i = 0; i < m.n; ++i)
        for (std::size_t j = 0; j < m.n; ++j)
          if (i != j) v[i * m.n + j] += delta;
      const PairMatrix shifted(m.n, v);
      CHECK(batch_triplet_exhaustive(shifted, 10.0) <= batch_triplet_exhaustive(m, 10.0));

      // The semi-hard choice moves only if some negative crosses d_pos; when
      // none does, the loss must not rise.
      bool crossing = false;
      for (std::size_t i = 0; i < m.n; ++i)
        for (std::size_t j = 0; j < m.n; ++j) {
          if (i == j) continue;
          for (double dp : {m(i, i), m(j, j)}) crossing = crossing || ((m(i, j) > dp) != (v[i * m.n + j] > dp));
        }
      if (!crossing) CHECK(batch_triplet_semi_hard(shifted, 10.0) <= batch_triplet_semi_hard(m, 10.0));
    }
  }
}

TEST_CASE("info_nce") {
  CHECK(info_nce(PairMatrix(4, std::vector<double>(16, 0.3)), 0.02) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(static_cast<float>(info_nce(PairMatrix(4, std::vector<double>(16, 0.0)), 0.02)) ==
        static_cast<float>(std::log(4.0)));

  const double tiny = info_nce(PairMatrix(2, {1.0, 0.0, 0.0, 1.0}), 0.02);
  CHECK(tiny == doctest::Approx(std::log1p(std::exp(-50.0))).epsilon(1e-12).scale(0.0));
  CHECK(std::abs(tiny - 1.9e-22) < 0.05e-22);

  CHECK(info_nce(PairMatrix(3, {1, -1, -1, -1, 1, -1, -1, -1, 1}), 0.001) == 0.0);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = random_matrix(6, 400 + seed, -1.0, 1.0);
    CHECK(info_nce(s, 0.1) == doctest::Approx(naive_info_nce(s, 0.1)).epsilon(1e-9));
  }
}

TEST_CASE("losses are invariant under a consistent relabeling") {
  const std::vector<std::size_t> perm{4, 2, 0, 5, 1, 3};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = random_matrix(6, 500 + seed);
    const auto p = permuted(m, perm);
    CHECK(batch_triplet_exhaustive(p, 10.0) == doctest::Approx(batch_triplet_exhaustive(m, 10.0)).epsilon(1e-12));
    CHECK(batch_triplet_semi_hard(p, 10.0) == doctest::Approx(batch_triplet_semi_hard(m, 10.0)).epsilon(1e-12));
    CHECK(info_nce(p, 0.05) == doctest::Approx(info_nce(m, 0.05)).epsilon(1e-12));
  }
}

TEST_CASE("exclusion mask removes pairs from both roles") {
  const auto m = random_matrix(4, 600);
  ExclusionMask mask{4, std::vector<std::uint8_t>(16, 0)};
  mask.bits[0 * 4 + 1] = 1;

  double total = 0.0;
  int count = 0;
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t k = 0; k < 4; ++k) {
      if (k == a) continue;
      if (!(a == 0 && k == 1)) total += naive_triplet(m(a, a), m(a, k), 10.0), ++count;
      if (!(k == 0 && a == 1)) total += naive_triplet(m(a, a), m(k, a), 10.0), ++count;
    }
  CHECK(count == 22);
  CHECK(batch_triplet_exhaustive(m, 10.0, mask) == doctest::Approx(total / count).epsilon(1e-12));

  ExclusionMask all{2, {0, 1, 1, 0}};
  CHECK_THROWS_AS(batch_triplet_exhaustive(PairMatrix(2, {0.1, 0.2, 0.3, 0.4}), 10.0, all), ContractError);
  ExclusionMask wrong{3, std::vector<std::uint8_t>(9, 0)};
  CHECK_THROWS_AS(info_nce(m, 0.1, wrong), DimensionError);
}

TEST_CASE("tensor forms agree with the scalar forms") {
  const auto m = random_matrix(5, 700);
  nn::Tensor64 t({5, 5}, m.values);
  CHECK(triplet_exhaustive_loss(t, 10.0).item() == doctest::Approx(batch_triplet_exhaustive(m, 10.0)).epsilon(1e-14));
  CHECK(triplet_semi_hard_loss(t, 10.0).item() == doctest::Approx(batch_triplet_semi_hard(m, 10.0)).epsilon(1e-14));
  CHECK(info_nce_loss(t, 0.3).item() == doctest::Approx(info_nce(m, 0.3)).epsilon(1e-14));

  const std::vector<float> g{1, 0, 0, 1, 0.6f, 0.8f}, a{0, 1, 1, 0, 0.8f, 0.6f};
  const auto d = distance_matrix(g, a, 2);
  CHECK(d(0, 0) == doctest::Approx(std::sqrt(2.0)));
  CHECK(d(0, 1) == 0.0);
  CHECK(d(2, 2) == doctest::Approx(std::sqrt(0.08)).epsilon(1e-6));
}

TEST_CASE("loss config") {
  LossConfig c;
  c.strategy = Strategy::kInfoNce;
  c.tau = 0.07;
  nlohmann::json j = c;
  CHECK(j.get<LossConfig>().tau == 0.07);
  CHECK(j.get<LossConfig>().strategy == Strategy::kInfoNce);
  CHECK_THROWS_AS(parse_strategy("hardest"), ParseError);
  c.alpha = 0.0;
  CHECK_THROWS_AS(c.validate(), ContractError);
}
