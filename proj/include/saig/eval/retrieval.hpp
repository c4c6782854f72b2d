#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "json.hpp"
#include "saig/data/labels.hpp"

namespace saig::eval {

using data::QueryLabels;

// Reference descriptors, one unit-norm row per id.
class DescriptorIndex {
 public:
  // Validates unit norm (+-1e-5) and id uniqueness.
  DescriptorIndex(std::size_t dim, std::vector<float> rows, std::vector<std::int64_t> ids);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  std::span<const float> row(std::size_t i) const { return {rows_.data() + i * dim_, dim_}; }
  std::span<const float> rows() const { return rows_; }
  const std::vector<std::int64_t>& ids() const { return ids_; }

 private:
  std::size_t dim_;
  std::vector<float> rows_;
  std::vector<std::int64_t> ids_;
};

// Persisted in the checkpoint container: tensor "descriptors" [N, dim],
// config {"kind": "descriptor_index", "ids": [...]}.
void save_index(const DescriptorIndex& index, const std::filesystem::path& path);
DescriptorIndex load_index(const std::filesystem::path& path);

enum class Metric { kL2, kCosine };

// Reference ids best-first for one query.
using Ranking = std::vector<std::int64_t>;

// Ascending L2 distance (or descending cosine); ties go to the smaller id.
std::vector<Ranking> rank_all(std::span<const float> queries, const DescriptorIndex& index,
                              Metric metric = Metric::kL2);

// Fraction of queries with a positive among the first k ranked references.
double recall_at_k(const std::vector<Ranking>& rankings, const std::vector<QueryLabels>& labels, std::size_t k);

// k used for r@1%: ceil(n_ref / 100).
std::size_t one_percent_k(std::size_t n_ref);

// Rank-1 reference is a positive or a semi-positive.
double hit_rate(const std::vector<Ranking>& rankings, const std::vector<QueryLabels>& labels);

struct MapResult {
  double map = 0.0;
  std::size_t evaluated = 0;
  std::size_t excluded = 0;  // queries without any positive
};

// Standard AP per query; semi-positives are skipped in the ranking.
MapResult mean_average_precision(const std::vector<Ranking>& rankings, const std::vector<QueryLabels>& labels);

struct RetrievalReport {
  std::map<std::size_t, double> r_at;
  double r_at_1pct = 0.0;
  double hit_rate = 0.0;
  double map = 0.0;
  std::size_t n_queries = 0;
  std::size_t map_excluded = 0;

  nlohmann::json to_json() const;
};

RetrievalReport evaluate(const std::vector<Ranking>& rankings, const std::vector<QueryLabels>& labels,
                         std::size_t n_ref, std::span<const std::size_t> ks = std::span<const std::size_t>());

// Labels for the one-to-one protocol: query i's only positive is ids[i].
std::vector<QueryLabels> one_to_one_labels(const std::vector<std::int64_t>& ids);

}  // namespace saig::eval
