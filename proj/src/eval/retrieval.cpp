#include "saig/eval/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "saig/errors.hpp"
#include "saig/model/checkpoint.hpp"

namespace saig::eval {

namespace {

bool contains(const std::vector<std::int64_t>& ids, std::int64_t id) {
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

void check_sizes(const std::vector<Ranking>& rankings, const std::vector<QueryLabels>& labels) {
  if (rankings.size() != labels.size()) {
    throw ContractError("retrieval metrics: " + std::to_string(rankings.size()) + " rankings vs " +
                        std::to_string(labels.size()) + " label sets");
  }
}

constexpr std::size_t kDefaultKs[] = {1, 5, 10};

}  // namespace

DescriptorIndex::DescriptorIndex(std::size_t dim, std::vector<float> rows, std::vector<std::int64_t> ids)
    : dim_(dim), rows_(std::move(rows)), ids_(std::move(ids)) {
  if (dim_ == 0 || rows_.size() != dim_ * ids_.size()) {
    throw DimensionError("descriptor index: " + std::to_string(rows_.size()) + " values for " +
                         std::to_string(ids_.size()) + " ids of dim " + std::to_string(dim_));
  }
  if (std::set<std::int64_t>(ids_.begin(), ids_.end()).size() != ids_.size()) {
    throw ContractError("descriptor index: ids must be unique");
  }
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    double sq = 0.0;
    for (float v : row(i)) sq += static_cast<double>(v) * v;
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-5) {
      throw ContractError("descriptor index: row for id " + std::to_string(ids_[i]) + " is not unit norm");
    }
  }
}

void save_index(const DescriptorIndex& index, const std::filesystem::path& path) {
  model::CheckpointData data;
  data.config = {{"kind", "descriptor_index"}, {"ids", index.ids()}};
  data.tensors.push_back({"descriptors", {index.size(), index.dim()}, {index.rows().begin(), index.rows().end()}});
  model::save_checkpoint(path, data);
}

DescriptorIndex load_index(const std::filesystem::path& path) {
  const auto data = model::load_checkpoint(path);
  if (data.config.value("kind", "") != "descriptor_index") throw ParseError("'" + path.string() + "' is not a descriptor index");
  const auto& rec = data.at("descriptors");
  if (rec.shape.size() != 2) throw ParseError("descriptor index: 'descriptors' must be 2-D");
  return DescriptorIndex(rec.shape[1], rec.data, data.config.at("ids").get<std::vector<std::int64_t>>());
}

std::vector<Ranking> rank_all(std::span<const float> queries, const DescriptorIndex& index, Metric metric) {
  const std::size_t d = index.dim();
  if (queries.size() % d != 0) {
    throw ContractError("rank_all: query block of " + std::to_string(queries.size()) +
                        " values does not match descriptor dim " + std::to_string(d));
  }
  const std::size_t nq = queries.size() / d, nr = index.size();
  std::vector<Ranking> out(nq);
  std::vector<double> score(nr);
  std::vector<std::size_t> order(nr);
  for (std::size_t q = 0; q < nq; ++q) {
    const float* qv = queries.data() + q * d;
    for (std::size_t r = 0; r < nr; ++r) {
      const auto ref = index.row(r);
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        if (metric == Metric::kL2) {
          const double diff = static_cast<double>(qv[k]) - ref[k];
          acc += diff * diff;
        } else {
          acc -= static_cast<double>(qv[k]) * ref[k];
        }
      }
      score[r] = acc;  // smaller is better in both metrics
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (score[a] != score[b]) return score[a] < score[b];
      return index.ids()[a] < index.ids()[b];
    });
    out[q].reserve(nr);
    for (auto r : order) out[q].push_back(index.ids()[r]);
  }
  return out;
}

double recall_at_k(const std::vector<Ranking>& rankings, const std::vector<QueryLabels>& labels, std::size_t k) {
  if (k == 0) throw ContractError("recall_at_k: K must be >= 1");
  check_sizes(rankings, labels);
  if (rankings.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    const auto& r = rankings[q];
    const std::size_t limit = std::min(k, r.size());
    for (std::size_t i = 0; i < limit; ++i) {
      if (contains(labels[q].positives, r[i])) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

std::size_t one_percent_k(std::size_t n_ref) { return std::max<std::size_t>(1, (n_ref + 99) / 100); }

double hit_rate(const std::vector<Ranking>& rankings, const std::vector<QueryLabels>& labels) {
  check_sizes(rankings, labels);
  if (rankings.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    if (rankings[q].empty()) continue;
    const auto top = rankings[q].front();
    if (contains(labels[q].positives, top) || contains(labels[q].semi_positives, top)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

MapResult mean_average_precision(const std::vector<Ranking>& rankings, const std::vector<QueryLabels>& labels) {
  check_sizes(rankings, labels);
  MapResult result;
  double total = 0.0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    const auto& lab = labels[q];
    if (lab.positives.empty()) {
      ++result.excluded;
      continue;
    }
    std::size_t rank = 0, found = 0;
    double ap = 0.0;
    for (auto id : rankings[q]) {
      if (contains(lab.semi_positives, id)) continue;
      ++rank;
      if (contains(lab.positives, id)) {
        ++found;
        ap += static_cast<double>(found) / static_cast<double>(rank);
      }
    }
    total += ap / static_cast<double>(lab.positives.size());
    ++result.evaluated;
  }
  result.map = result.evaluated ? total / static_cast<double>(result.evaluated) : 0.0;
  return result;
}

nlohmann::json RetrievalReport::to_json() const {
  nlohmann::json j;
  for (const auto& [k, v] : r_at) j["r@" + std::to_string(k)] = v;
  j["r@1%"] = r_at_1pct;
  j["hit_rate"] = hit_rate;
  j["map"] = map;
  j["n_queries"] = n_queries;
  j["map_excluded_queries"] = map_excluded;
  return j;
}

RetrievalReport evaluate(const std::vector<Ranking>& rankings, const std::vector<QueryLabels>& labels,
                         std::size_t n_ref, std::span<const std::size_t> ks) {
  if (ks.empty()) ks = kDefaultKs;
  RetrievalReport report;
  for (auto k : ks) report.r_at[k] = recall_at_k(rankings, labels, k);
  report.r_at_1pct = recall_at_k(rankings, labels, one_percent_k(n_ref));
  report.hit_rate = hit_rate(rankings, labels);
  const auto m = mean_average_precision(rankings, labels);
  report.map = m.map;
  report.map_excluded = m.excluded;
  report.n_queries = rankings.size();
  return report;
}

std::vector<QueryLabels> one_to_one_labels(const std::vector<std::int64_t>& ids) {
  std::vector<QueryLabels> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) out[i].positives = {ids[i]};
  return out;
}

}  // namespace saig::eval
