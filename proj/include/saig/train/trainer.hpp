#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "saig/data/scene.hpp"
#include "saig/eval/retrieval.hpp"
#include "saig/losses/losses.hpp"
#include "saig/model/checkpoint.hpp"
#include "saig/model/config.hpp"
#include "saig/train/optim.hpp"

namespace saig::train {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.03;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  double warmup_fraction = 0.1;
  double clip_norm = 1.0;
  losses::LossConfig loss;
  bool sam_enabled = false;
  double sam_rho = 2.0;
  bool augment = false;  // random scene rotation / mirror per training sample
  std::uint64_t seed = 0;
  model::ModelConfig model;
  std::string data;  // manifest path
  AdamWHyper adam;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Loads a JSON config file; ParseError / IoError on failure.
TrainConfig load_train_config(const std::filesystem::path& path);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean training loss over the epoch's batches
  double r1 = 0.0;        // validation r@1

  nlohmann::json to_json() const;
};

struct TrainSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// floor(n / 8) pairs (at least one when n >= 2) held out by a seeded shuffle;
// both lists come back sorted.
TrainSplit split_indices(std::size_t n, std::uint64_t seed);

// Order of the training indices within one epoch, derived from (seed, epoch)
// alone so that a resumed run reproduces it.
std::vector<std::size_t> epoch_order(const std::vector<std::size_t>& train, std::uint64_t seed, std::size_t epoch);

struct TrainResult {
  std::vector<EpochMetrics> log;
  double best_r1 = 0.0;
  std::size_t best_epoch = 0;
  std::int64_t steps = 0;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
};

struct TrainOptions {
  std::filesystem::path out_dir;       // receives best.bin, last.bin, metrics.jsonl
  std::optional<std::filesystem::path> resume;  // checkpoint written by a previous run
  bool verbose = false;                // echo each metric line to stdout
};

// Trains a Siamese pair on `pairs` (every pair must match the model's ground
// and aerial resolutions). Deterministic given the config; execution is
// single-threaded. A non-finite loss raises NumericError naming the step and
// leaves the preceding step's state in nan_abort.bin.
TrainResult train(const TrainConfig& config, const std::vector<data::ScenePair>& pairs, const TrainOptions& options);

// Same, reading the dataset named by config.data.
TrainResult train(const TrainConfig& config, const TrainOptions& options);

// Unit descriptors [N, descriptor_dim] for a list of images, computed in
// inference mode in chunks.
std::vector<float> embed(model::BranchParams<float>& branch, const std::vector<const data::Image*>& images,
                         std::size_t chunk = 64);

// Validation r@1 (ground queries against aerial references, one-to-one).
double validation_r1(model::SiamesePair<float>& pair, const std::vector<data::ScenePair>& pairs,
                     const std::vector<std::size_t>& indices);

struct DatasetEvaluation {
  eval::RetrievalReport report;
  eval::DescriptorIndex index;  // aerial references
};

// Ground queries of `pairs` against their aerial references. Positives and
// semi-positives come from tile IoU.
DatasetEvaluation evaluate_pairs(model::SiamesePair<float>& pair, const std::vector<data::ScenePair>& pairs);

}  // namespace saig::train
