#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "doctest.h"
#include "saig/eval/report.hpp"
#include "saig/eval/retrieval.hpp"
#include "support.hpp"

using namespace saig;
using namespace saig::eval;

namespace {

std::vector<float> unit_rows(std::size_t n, std::size_t dim, std::uint64_t seed) {
  const auto raw = test_support::uniform(n * dim, seed);
  std::vector<float> out(raw.size());
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) s += raw[i * dim + k] * raw[i * dim + k];
    for (std::size_t k = 0; k < dim; ++k) out[i * dim + k] = static_cast<float>(raw[i * dim + k] / std::sqrt(s));
  }
  return out;
}

std::vector<std::int64_t> iota_ids(std::size_t n, std::int64_t first = 0) {
  std::vector<std::int64_t> ids(n);
  std::iota(ids.begin(), ids.end(), first);
  return ids;
}

// A ranking of `n` references with the positive (id 0) at 1-based `rank`.
Ranking with_positive_at(std::size_t rank, std::size_t n) {
  Ranking r;
  for (std::size_t i = 1; i < n; ++i) r.push_back(static_cast<std::int64_t>(i));
  r.insert(r.begin() + (rank - 1), 0);
  return r;
}

struct Instance {
  std::vector<float> queries;
  std::vector<float> refs;
  std::vector<std::int64_t> ids;
  std::vector<QueryLabels> labels;
};

Instance random_instance(std::size_t nq, std::size_t nr, std::size_t dim, std::uint64_t seed) {
  Instance in{unit_rows(nq, dim, seed), unit_rows(nr, dim, seed + 1), {}, {}};
  std::mt19937_64 rng(seed);
  in.ids = iota_ids(nr, 100);
  std::shuffle(in.ids.begin(), in.ids.end(), rng);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(nr) - 1), count(0, 3);
  for (std::size_t q = 0; q < nq; ++q) {
    QueryLabels l;
    const int np = count(rng), ns = count(rng);
    for (int k = 0; k < np + ns; ++k) {
      const auto id = in.ids[pick(rng)];
      if (std::count(l.positives.begin(), l.positives.end(), id) ||
          std::count(l.semi_positives.begin(), l.semi_positives.end(), id))
        continue;
      (k < np ? l.positives : l.semi_positives).push_back(id);
    }
    in.labels.push_back(l);
  }
  return in;
}

// Sorted (distance, id) pairs straight from the raw vectors.
std::vector<std::int64_t> brute_order(const float* q, const Instance& in, std::size_t dim) {
  std::vector<std::pair<double, std::int64_t>> v;
  for (std::size_t r = 0; r < in.ids.size(); ++r) {
    double d = 0.0;
    for (std::size_t k = 0; k < dim; ++k) d += std::pow(double(q[k]) - in.refs[r * dim + k], 2);
    v.emplace_back(d, in.ids[r]);
  }
  std::sort(v.begin(), v.end());
  std::vector<std::int64_t> out;
  for (auto& p : v) out.push_back(p.second);
  return out;
}

bool contains(const std::vector<std::int64_t>& v, std::int64_t id) { return std::find(v.begin(), v.end(), id) != v.end(); }

}  // namespace

TEST_CASE("ranking") {
  const DescriptorIndex idx(2, {1, 0, 0, 1, 0.6f, 0.8f}, {10, 20, 30});
  CHECK(rank_all(std::vector<float>{0, 1}, idx)[0].front() == 20);

  // Distances 0.2 / 0.1 / 0.3 along one axis.
  const float a = 0.2f, b = 0.1f, c = 0.3f;
  const std::vector<float> q{1, 0};
  const auto at = [](float d) {
    const float cosv = 1.0f - d * d / 2.0f;
    return std::vector<float>{cosv, std::sqrt(1.0f - cosv * cosv)};
  };
  std::vector<float> rows;
  for (float d : {a, b, c}) {
    const auto r = at(d);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  const auto order = rank_all(q, DescriptorIndex(2, rows, {1, 2, 3}))[0];
  CHECK(order == Ranking{2, 1, 3});

  const auto ties = rank_all(q, DescriptorIndex(2, {0, 1, 0, 1, 0, 1}, {7, 3, 5}))[0];
  CHECK(ties == Ranking{3, 5, 7});

  CHECK_THROWS_AS(rank_all(std::vector<float>{1, 0, 0}, idx), ContractError);
  CHECK_THROWS_AS(DescriptorIndex(2, {1, 0, 1, 0}, {1, 1}), ContractError);
  CHECK_THROWS_AS(DescriptorIndex(2, {1, 1}, {1}), ContractError);
  CHECK_THROWS_AS(DescriptorIndex(2, {1, 0, 0}, {1}), DimensionError);
}

TEST_CASE("recall examples") {
  const std::size_t n = 1000;
  std::vector<Ranking> rankings;
  for (std::size_t rank : {1u, 2u, 11u, 200u}) rankings.push_back(with_positive_at(rank, n));
  const auto labels = std::vector<QueryLabels>(4, QueryLabels{{0}, {}});
  CHECK(recall_at_k(rankings, labels, 1) == 0.25);
  CHECK(recall_at_k(rankings, labels, 10) == 0.5);
  CHECK(one_percent_k(n) == 10);
  CHECK(one_percent_k(1001) == 11);
  CHECK(one_percent_k(5) == 1);
  // r@1% on this set counts ranks within the top 1% of 1000 = 10: ranks 1 and 2.
  CHECK(recall_at_k(rankings, labels, one_percent_k(n)) == 0.5);
  CHECK(recall_at_k(rankings, labels, n) == 1.0);
  CHECK_THROWS_AS(recall_at_k(rankings, labels, 0), ContractError);
  CHECK_THROWS_AS(recall_at_k(rankings, std::vector<QueryLabels>(3), 1), ContractError);

  const auto all_first = std::vector<Ranking>(4, with_positive_at(1, 20));
  CHECK(recall_at_k(all_first, labels, 1) == 1.0);
}

TEST_CASE("hit rate") {
  std::vector<Ranking> r{{5, 0, 1}, {1, 0, 5}, {0, 1, 5}};
  std::vector<QueryLabels> l{{{0}, {5}}, {{0}, {}}, {{0}, {}}};
  CHECK(hit_rate(r, l) == doctest::Approx(2.0 / 3.0));
  CHECK(recall_at_k(r, l, 1) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("average precision") {
  CHECK(mean_average_precision({{0, 1, 2}}, {{{0}, {}}}).map == 1.0);
  CHECK(mean_average_precision({{0, 1, 2, 3}}, {{{0, 2}, {}}}).map == doctest::Approx(5.0 / 6.0));
  // A semi-positive is skipped, not counted as a miss.
  CHECK(mean_average_precision({{0, 9, 2, 3}}, {{{0, 2}, {9}}}).map == 1.0);
  const auto m = mean_average_precision({{0, 1}, {1, 0}}, {{{0}, {}}, {{}, {}}});
  CHECK(m.evaluated == 1);
  CHECK(m.excluded == 1);
  CHECK(m.map == 1.0);

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    Ranking r = iota_ids(12);
    std::shuffle(r.begin(), r.end(), rng);
    QueryLabels l{{r[0], r[3], r[7]}, {}};
    Ranking rev(r.rbegin(), r.rend());
    CHECK(mean_average_precision({rev}, {l}).map <= mean_average_precision({r}, {l}).map);
  }
}

TEST_CASE("metrics match brute force on random instances") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const std::size_t dim = 6, nq = 15, nr = 20 + 4 * seed % 80;
    const auto in = random_instance(nq, nr, dim, 10 * seed + 1);
    const DescriptorIndex idx(dim, in.refs, in.ids);
    const auto rankings = rank_all(in.queries, idx);
    REQUIRE(rankings.size() == nq);

    std::vector<std::vector<std::int64_t>> brute;
    for (std::size_t q = 0; q < nq; ++q) brute.push_back(brute_order(&in.queries[q * dim], in, dim));

    for (std::size_t k : {std::size_t{1}, std::size_t{5}, std::size_t{10}, one_percent_k(nr), nr}) {
      std::size_t hits = 0;
      for (std::size_t q = 0; q < nq; ++q) {
        bool found = false;
        for (std::size_t i = 0; i < std::min(k, nr); ++i) found = found || contains(in.labels[q].positives, brute[q][i]);
        hits += found;
      }
      CHECK(recall_at_k(rankings, in.labels, k) == static_cast<double>(hits) / nq);
    }

    std::size_t hits = 0, evaluated = 0;
    double ap_total = 0.0;
    for (std::size_t q = 0; q < nq; ++q) {
      const auto& l = in.labels[q];
      hits += contains(l.positives, brute[q][0]) || contains(l.semi_positives, brute[q][0]);
      if (l.positives.empty()) continue;
      ++evaluated;
      std::size_t rank = 0, found = 0;
      double ap = 0.0;
      for (auto id : brute[q]) {
        if (contains(l.semi_positives, id)) continue;
        ++rank;
        if (contains(l.positives, id)) ap += static_cast<double>(++found) / rank;
      }
      ap_total += ap / l.positives.size();
    }
    CHECK(hit_rate(rankings, in.labels) == static_cast<double>(hits) / nq);
    CHECK(hit_rate(rankings, in.labels) >= recall_at_k(rankings, in.labels, 1));
    const auto m = mean_average_precision(rankings, in.labels);
    CHECK(m.evaluated == evaluated);
    CHECK(m.map == doctest::Approx(evaluated ? ap_total / evaluated : 0.0).epsilon(1e-12));
  }
}

TEST_CASE("metrics are invariant under id relabeling") {
  const std::size_t dim = 5, nq = 12, nr = 40;
  const auto in = random_instance(nq, nr, dim, 77);
  const auto base = evaluate(rank_all(in.queries, DescriptorIndex(dim, in.refs, in.ids)), in.labels, nr);

  // Map every id through a random bijection.
  std::mt19937_64 rng(5);
  std::vector<std::int64_t> image = iota_ids(nr, 5000);
  std::shuffle(image.begin(), image.end(), rng);
  auto relabel = [&](std::int64_t id) { return image[static_cast<std::size_t>(id - 100)]; };
  std::vector<std::int64_t> ids;
  for (auto id : in.ids) ids.push_back(relabel(id));
  auto labels = in.labels;
  for (auto& l : labels) {
    for (auto& id : l.positives) id = relabel(id);
    for (auto& id : l.semi_positives) id = relabel(id);
  }
  const auto moved = evaluate(rank_all(in.queries, DescriptorIndex(dim, in.refs, ids)), labels, nr);
  CHECK(moved.to_json() == base.to_json());
}

TEST_CASE("cosine and L2 agree on unit vectors") {
  const std::size_t dim = 8;
  const auto in = random_instance(20, 50, dim, 91);
  const DescriptorIndex idx(dim, in.refs, in.ids);
  CHECK(rank_all(in.queries, idx, Metric::kL2) == rank_all(in.queries, idx, Metric::kCosine));
}

TEST_CASE("report") {
  const auto labels = one_to_one_labels({4, 8});
  CHECK(labels[1].positives == std::vector<std::int64_t>{8});
  const std::vector<Ranking> r{{4, 8}, {4, 8}};
  const auto rep = evaluate(r, labels, 2);
  const auto j = rep.to_json();
  CHECK(j["r@1"] == 0.5);
  CHECK(j["r@5"] == 1.0);
  CHECK(j["r@1%"] == 0.5);
  CHECK(j["hit_rate"] == 0.5);
  CHECK(j["map"] == 0.75);
  CHECK(j["n_queries"] == 2);

  CHECK(sha256_hex(std::string("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const auto full = report_json(rep, {{"a", 1}}, std::vector<std::uint8_t>{'a', 'b', 'c'});
  CHECK(full["checkpoint_hash"] == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(full["config_hash"] == sha256_hex(nlohmann::json{{"a", 1}}.dump()));
}

TEST_CASE("index persistence") {
  const auto rows = unit_rows(7, 4, 3);
  const DescriptorIndex idx(4, rows, {9, 3, 5, 1, 2, 8, 4});
  const auto path = std::filesystem::temp_directory_path() / "saig_test_index.bin";
  save_index(idx, path);
  const auto back = load_index(path);
  CHECK(back.ids() == idx.ids());
  CHECK(std::equal(back.rows().begin(), back.rows().end(), idx.rows().begin(), idx.rows().end()));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_index(path), IoError);
}
