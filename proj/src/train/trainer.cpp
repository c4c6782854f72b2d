#include "saig/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <set>

#include "saig/data/labels.hpp"
#include "saig/data/manifest.hpp"
#include "saig/errors.hpp"
#include "saig/eval/retrieval.hpp"
#include "saig/model/saig.hpp"

namespace saig::train {

namespace {

using model::BnMode;

template <typename V>
void read_if(const nlohmann::json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

nn::Tensor<float> stack(const std::vector<const data::Image*>& images) {
  const auto& first = *images.front();
  const std::size_t per = first.numel();
  std::vector<float> values;
  values.reserve(per * images.size());
  for (const auto* img : images) {
    if (img->shape() != first.shape()) throw DimensionError("cannot batch images of different shapes");
    values.insert(values.end(), img->data().begin(), img->data().end());
  }
  nn::Shape shape{images.size()};
  shape.insert(shape.end(), first.shape().begin(), first.shape().end());
  return nn::Tensor<float>(std::move(shape), std::move(values));
}

data::Tile tile_of(const data::ScenePair& p) {
  return {p.pair_id, p.tile_origin.x, p.tile_origin.y, p.tile_size};
}

// Bit (i, j) set when aerial j is a semi-positive for ground i.
losses::ExclusionMask semi_positive_mask(const std::vector<data::ScenePair>& pairs, std::span<const std::size_t> batch) {
  std::vector<data::Tile> refs;
  for (auto idx : batch) refs.push_back(tile_of(pairs[idx]));
  losses::ExclusionMask mask;
  const std::size_t n = batch.size();
  bool any = false;
  std::vector<std::uint8_t> bits(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto labels = data::iou_label(refs[i], refs);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      if (std::find(labels.semi_positives.begin(), labels.semi_positives.end(), refs[j].id) !=
          labels.semi_positives.end()) {
        bits[i * n + j] = 1;
        any = true;
      }
    }
  }
  if (any) {
    mask.n = n;
    mask.bits = std::move(bits);
  }
  return mask;
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  // A lone trailing pair has no in-batch negative; fold it into the previous batch.
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

struct RunState {
  std::int64_t step = 0;
  std::size_t epoch = 0;  // completed epochs
  double best_r1 = -1.0;
  std::size_t best_epoch = 0;
  std::vector<EpochMetrics> log;
};

nlohmann::json log_json(const std::vector<EpochMetrics>& log) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : log) arr.push_back(m.to_json());
  return arr;
}

model::CheckpointData make_checkpoint(model::SiamesePair<float>& pair, const TrainConfig& config,
                                      const AdamWState<float>& opt, const RunState& run) {
  auto data = model::snapshot(pair);
  data.config["train"] = config;
  data.state = {{"step", run.step},
                {"epoch", run.epoch},
                {"best_r1", run.best_r1},
                {"best_epoch", run.best_epoch},
                {"log", log_json(run.log)}};
  const auto params = pair.parameters();
  if (!opt.m.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      data.tensors.push_back({"opt.m." + params[i].name, params[i].tensor.shape(), opt.m[i]});
      data.tensors.push_back({"opt.v." + params[i].name, params[i].tensor.shape(), opt.v[i]});
    }
  }
  return data;
}

void write_metrics(const std::filesystem::path& path, const std::vector<EpochMetrics>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write metric log '" + path.string() + "'");
  for (const auto& m : log) out << m.to_json().dump() << '\n';
}

nlohmann::json comparable(const TrainConfig& c) {
  nlohmann::json j = c;
  j.erase("data");
  return j;
}

void check_pairs(const TrainConfig& config, const std::vector<data::ScenePair>& pairs) {
  std::set<std::int64_t> ids;
  for (const auto& p : pairs) {
    if (!ids.insert(p.pair_id).second) throw ContractError("train: duplicate pair_id " + std::to_string(p.pair_id));
    const model::ImageSize g{p.ground.dim(1), p.ground.dim(2)}, a{p.aerial.dim(1), p.aerial.dim(2)};
    if (!(g == config.model.input_hw) || !(a == config.model.aerial_hw)) {
      throw ContractError("train: pair " + std::to_string(p.pair_id) + " has ground " + std::to_string(g.height) + "x" +
                          std::to_string(g.width) + " / aerial " + std::to_string(a.height) + "x" +
                          std::to_string(a.width) + ", model expects " + std::to_string(config.model.input_hw.height) +
                          "x" + std::to_string(config.model.input_hw.width) + " / " +
                          std::to_string(config.model.aerial_hw.height) + "x" +
                          std::to_string(config.model.aerial_hw.width));
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ContractError("train config: lr must be > 0");
  if (!(clip_norm > 0.0)) throw ContractError("train config: clip_norm must be > 0");
  if (batch_size < 2) throw ContractError("train config: batch_size must be >= 2");
  if (epochs < 1) throw ContractError("train config: epochs must be >= 1");
  if (weight_decay < 0.0) throw ContractError("train config: weight_decay must be >= 0");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) throw ContractError("train config: warmup_fraction must be in [0, 1)");
  if (sam_rho < 0.0) throw ContractError("train config: sam_rho must be >= 0");
  loss.validate();
  model.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"weight_decay", c.weight_decay},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"warmup_fraction", c.warmup_fraction},
                     {"clip_norm", c.clip_norm},
                     {"loss", c.loss},
                     {"sam_enabled", c.sam_enabled},
                     {"sam_rho", c.sam_rho},
                     {"augment", c.augment},
                     {"seed", c.seed},
                     {"model", c.model},
                     {"data", c.data},
                     {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ParseError("train config must be a JSON object");
  try {
    read_if(j, "lr", c.lr);
    read_if(j, "weight_decay", c.weight_decay);
    read_if(j, "batch_size", c.batch_size);
    read_if(j, "epochs", c.epochs);
    read_if(j, "warmup_fraction", c.warmup_fraction);
    read_if(j, "clip_norm", c.clip_norm);
    read_if(j, "sam_enabled", c.sam_enabled);
    read_if(j, "sam_rho", c.sam_rho);
    read_if(j, "augment", c.augment);
    read_if(j, "seed", c.seed);
    read_if(j, "data", c.data);
    if (j.contains("loss")) c.loss = j.at("loss").get<losses::LossConfig>();
    if (j.contains("model")) c.model = j.at("model").get<model::ModelConfig>();
    if (j.contains("adam")) {
      const auto& a = j.at("adam");
      read_if(a, "beta1", c.adam.beta1);
      read_if(a, "beta2", c.adam.beta2);
      read_if(a, "eps", c.adam.eps);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return doc.get<TrainConfig>();
}

nlohmann::json EpochMetrics::to_json() const { return {{"epoch", epoch}, {"loss", loss}, {"r@1", r1}}; }

TrainSplit split_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5u};
  std::mt19937_64 rng(seq);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t n_val = n >= 2 ? std::max<std::size_t>(1, n / 8) : 0;
  TrainSplit split;
  split.validation.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  split.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

std::vector<std::size_t> epoch_order(const std::vector<std::size_t>& train, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order = train;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x6u};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<float> embed(model::BranchParams<float>& branch, const std::vector<const data::Image*>& images,
                         std::size_t chunk) {
  nn::NoGradGuard no_grad;
  std::vector<float> out;
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t end = std::min(images.size(), start + chunk);
    const std::vector<const data::Image*> part(images.begin() + static_cast<std::ptrdiff_t>(start),
                                               images.begin() + static_cast<std::ptrdiff_t>(end));
    const auto desc = model::saig_forward(stack(part), branch, BnMode::kInfer);
    out.insert(out.end(), desc.data().begin(), desc.data().end());
  }
  return out;
}

double validation_r1(model::SiamesePair<float>& pair, const std::vector<data::ScenePair>& pairs,
                     const std::vector<std::size_t>& indices) {
  if (indices.empty()) return 0.0;
  std::vector<const data::Image*> ground, aerial;
  std::vector<std::int64_t> ids;
  for (auto i : indices) {
    ground.push_back(&pairs[i].ground);
    aerial.push_back(&pairs[i].aerial);
    ids.push_back(pairs[i].pair_id);
  }
  const auto q = embed(pair.ground, ground);
  auto r = embed(pair.aerial, aerial);
  const std::size_t dim = r.size() / ids.size();
  const eval::DescriptorIndex index(dim, std::move(r), ids);
  return eval::recall_at_k(eval::rank_all(q, index), eval::one_to_one_labels(ids), 1);
}

TrainResult train(const TrainConfig& config, const std::vector<data::ScenePair>& pairs, const TrainOptions& options) {
  config.validate();
  check_pairs(config, pairs);
  const auto split = split_indices(pairs.size(), config.seed);
  if (split.train.size() < 2) throw ContractError("train: need at least 3 pairs (2 for training, 1 held out)");

  auto pair = model::init_siamese<float>(config.model, config.seed);
  const auto named = pair.parameters();
  std::vector<nn::Tensor<float>> params;
  for (const auto& p : named) params.push_back(p.tensor);
  auto buffers = pair.buffers();

  AdamWState<float> opt;
  RunState run;
  if (options.resume) {
    const auto ck = model::load_checkpoint(*options.resume);
    if (!ck.config.contains("train") || comparable(ck.config["train"].get<TrainConfig>()) != comparable(config)) {
      throw ContractError("resume: checkpoint '" + options.resume->string() + "' was written with a different config");
    }
    if (ck.state.is_null()) throw ParseError("resume: checkpoint has no trainer state");
    model::restore(pair, ck);
    run.step = ck.state.at("step").get<std::int64_t>();
    run.epoch = ck.state.at("epoch").get<std::size_t>();
    run.best_r1 = ck.state.at("best_r1").get<double>();
    run.best_epoch = ck.state.at("best_epoch").get<std::size_t>();
    for (const auto& m : ck.state.at("log")) {
      run.log.push_back({m.at("epoch").get<std::size_t>(), m.at("loss").get<double>(), m.at("r@1").get<double>()});
    }
    opt.step = run.step;
    if (run.step > 0) {
      for (const auto& p : named) {
        opt.m.push_back(ck.at("opt.m." + p.name).data);
        opt.v.push_back(ck.at("opt.v." + p.name).data);
      }
    }
  }

  std::filesystem::create_directories(options.out_dir);
  TrainResult result;
  result.best_checkpoint = options.out_dir / "best.bin";
  result.last_checkpoint = options.out_dir / "last.bin";

  const std::size_t per_epoch = make_batches(split.train, config.batch_size).size();
  const auto total_steps = static_cast<std::int64_t>(per_epoch * config.epochs);

  for (std::size_t epoch = run.epoch + 1; epoch <= config.epochs; ++epoch) {
    const auto batches = make_batches(epoch_order(split.train, config.seed, epoch), config.batch_size);
    std::seed_seq aug_seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                          static_cast<std::uint32_t>(epoch), 0x7u};
    std::mt19937_64 aug_rng(aug_seq);
    double loss_sum = 0.0;
    for (const auto& batch : batches) {
      std::vector<data::ScenePair> augmented;
      if (config.augment) {
        augmented.reserve(batch.size());
        for (auto i : batch) {
          const auto draw = aug_rng();
          const double gain = 0.85 + 0.3 * std::uniform_real_distribution<double>(0.0, 1.0)(aug_rng);
          augmented.push_back(
              data::transform_pair(pairs[i], {static_cast<int>(draw & 3u), ((draw >> 2) & 1u) != 0, gain}));
        }
      }
      std::vector<const data::Image*> g_imgs, a_imgs;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& p = config.augment ? augmented[b] : pairs[batch[b]];
        g_imgs.push_back(&p.ground);
        a_imgs.push_back(&p.aerial);
      }
      const auto g = stack(g_imgs), a = stack(a_imgs);
      const auto mask = semi_positive_mask(pairs, batch);

      std::vector<std::vector<float>> saved_buffers;
      for (const auto& b : buffers) saved_buffers.push_back(*b.values);
      int calls = 0;
      const LossFn<float> loss_fn = [&]() {
        // The SAM re-evaluation must not advance BN running statistics a second time.
        const bool replay = calls++ > 0;
        std::vector<std::vector<float>> keep;
        if (replay) {
          for (const auto& b : buffers) keep.push_back(*b.values);
        }
        const auto dg = model::saig_forward(g, pair.ground, BnMode::kTrain);
        const auto da = model::saig_forward(a, pair.aerial, BnMode::kTrain);
        if (replay) {
          for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].values = keep[i];
        }
        return losses::retrieval_loss(dg, da, config.loss, mask);
      };

      double loss = 0.0, norm = 0.0;
      try {
        loss = config.sam_enabled ? sam_step<float>(params, loss_fn, config.sam_rho)
                                  : compute_gradients<float>(params, loss_fn);
        if (!std::isfinite(loss)) throw NumericError("loss is " + std::to_string(loss));
        norm = clip_global_norm<float>(params, config.clip_norm);
        if (!std::isfinite(norm)) throw NumericError("gradient norm is " + std::to_string(norm));
      } catch (const NumericError& e) {
        for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].values = saved_buffers[i];
        const auto path = options.out_dir / "nan_abort.bin";
        model::save_checkpoint(path, make_checkpoint(pair, config, opt, run));
        throw NumericError("non-finite training state at step " + std::to_string(run.step) + " (" + e.what() +
                           "); state of the preceding step saved to '" + path.string() + "'");
      }
      const double lr = lr_schedule(run.step, total_steps, config.lr, config.warmup_fraction);
      adamw_step<float>(params, opt, lr, config.weight_decay, config.adam);
      ++run.step;
      loss_sum += loss;
    }

    EpochMetrics m{epoch, loss_sum / static_cast<double>(batches.size()),
                   validation_r1(pair, pairs, split.validation)};
    run.log.push_back(m);
    run.epoch = epoch;
    if (options.verbose) std::cout << m.to_json().dump() << std::endl;
    write_metrics(options.out_dir / "metrics.jsonl", run.log);
    if (m.r1 > run.best_r1) {
      run.best_r1 = m.r1;
      run.best_epoch = epoch;
      model::save_checkpoint(result.best_checkpoint, make_checkpoint(pair, config, opt, run));
    }
    model::save_checkpoint(result.last_checkpoint, make_checkpoint(pair, config, opt, run));
  }

  result.log = run.log;
  result.best_r1 = run.best_r1;
  result.best_epoch = run.best_epoch;
  result.steps = run.step;
  return result;
}

DatasetEvaluation evaluate_pairs(model::SiamesePair<float>& pair, const std::vector<data::ScenePair>& pairs) {
  if (pairs.empty()) throw ContractError("evaluate: no pairs");
  std::vector<const data::Image*> ground, aerial;
  std::vector<std::int64_t> ids;
  std::vector<data::Tile> tiles;
  for (const auto& p : pairs) {
    ground.push_back(&p.ground);
    aerial.push_back(&p.aerial);
    ids.push_back(p.pair_id);
    tiles.push_back(tile_of(p));
  }
  const auto q = embed(pair.ground, ground);
  auto r = embed(pair.aerial, aerial);
  const std::size_t dim = r.size() / ids.size();
  eval::DescriptorIndex index(dim, std::move(r), ids);
  std::vector<eval::QueryLabels> labels;
  labels.reserve(tiles.size());
  for (const auto& t : tiles) labels.push_back(data::iou_label(t, tiles));
  auto report = eval::evaluate(eval::rank_all(q, index), labels, index.size());
  return {std::move(report), std::move(index)};
}

TrainResult train(const TrainConfig& config, const TrainOptions& options) {
  if (config.data.empty()) throw ContractError("train: config has no 'data' manifest path");
  return train(config, data::load_dataset(config.data), options);
}

}  // namespace saig::train
