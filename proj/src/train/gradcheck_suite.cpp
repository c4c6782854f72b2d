#include "saig/train/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <map>
#include <random>
#include <string>

#include "saig/aggregation/heads.hpp"
#include "saig/errors.hpp"
#include "saig/losses/losses.hpp"
#include "saig/model/saig.hpp"
#include "saig/numerics/ops.hpp"

namespace saig::train {

namespace {

using nn::Shape;
using T64 = nn::Tensor64;
using Inputs = std::vector<T64>;
using Fn = std::function<T64(const Inputs&)>;

struct Check {
  std::string name;
  Inputs inputs;
  Fn fn;
};

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  T64 uniform(Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(nn::shape_numel(shape));
    for (auto& x : v) x = d(rng_);
    return T64(std::move(shape), std::move(v));
  }

  // Values bounded away from zero, for kinked ops.
  T64 away_from_zero(Shape shape) {
    auto t = uniform(std::move(shape));
    for (auto& x : t.mutable_data()) x = x < 0 ? x - 0.1 : x + 0.1;
    return t;
  }

 private:
  std::mt19937_64 rng_;
};

// Scalar read-out <y, w> with a fixed random weight.
T64 project(const T64& y, const T64& w) { return nn::sum(nn::mul(y, w)); }

std::vector<Check> kernel_checks(Gen& g) {
  std::vector<Check> c;
  auto unary = [&](const std::string& name, T64 x, Shape out, std::function<T64(const T64&)> op) {
    const auto w = g.uniform(std::move(out));
    c.push_back({name, {x}, [op, w](const Inputs& in) { return project(op(in[0]), w); }});
  };
  auto binary = [&](const std::string& name, T64 a, T64 b, Shape out, std::function<T64(const T64&, const T64&)> op) {
    const auto w = g.uniform(std::move(out));
    c.push_back({name, {a, b}, [op, w](const Inputs& in) { return project(op(in[0], in[1]), w); }});
  };

  binary("add", g.uniform({3, 4}), g.uniform({3, 4}), {3, 4}, [](auto& a, auto& b) { return nn::add(a, b); });
  binary("mul", g.uniform({3, 4}), g.uniform({3, 4}), {3, 4}, [](auto& a, auto& b) { return nn::mul(a, b); });
  binary("add_bias", g.uniform({2, 3, 4}), g.uniform({4}), {2, 3, 4},
         [](auto& a, auto& b) { return nn::add_bias(a, b); });
  unary("scale", g.uniform({5}), {5}, [](auto& x) { return nn::scale(x, 1.7); });
  unary("relu", g.away_from_zero({4, 5}), {4, 5}, [](auto& x) { return nn::relu(x); });
  unary("gelu", g.uniform({4, 5}, -3.0, 3.0), {4, 5}, [](auto& x) { return nn::gelu(x); });
  unary("sum", g.uniform({3, 4}), {1}, [](auto& x) { return nn::sum(nn::mul(x, x)); });
  unary("mean", g.uniform({3, 4}), {1}, [](auto& x) { return nn::mean(nn::mul(x, x)); });
  unary("reshape", g.uniform({3, 4}), {2, 6}, [](auto& x) { return nn::reshape(x, {2, 6}); });
  unary("transpose_last2", g.uniform({2, 3, 4}), {2, 4, 3}, [](auto& x) { return nn::transpose_last2(x); });
  binary("matmul", g.uniform({2, 3, 4}), g.uniform({4, 5}), {2, 3, 5}, [](auto& a, auto& b) { return nn::matmul(a, b); });
  binary("matmul_nt", g.uniform({3, 4}), g.uniform({5, 4}), {3, 5},
         [](auto& a, auto& b) { return nn::matmul_nt(a, b); });
  binary("bmm", g.uniform({2, 3, 4}), g.uniform({2, 4, 5}), {2, 3, 5}, [](auto& a, auto& b) { return nn::bmm(a, b); });
  binary("bmm_nt", g.uniform({2, 3, 4}), g.uniform({2, 5, 4}), {2, 3, 5},
         [](auto& a, auto& b) { return nn::bmm_nt(a, b); });
  {
    const auto w = g.uniform({2, 3, 5});
    c.push_back({"linear", {g.uniform({2, 3, 4}), g.uniform({4, 5}), g.uniform({5})},
                 [w](const Inputs& in) { return project(nn::linear(in[0], in[1], in[2]), w); }});
  }
  unary("softmax_row", g.uniform({3, 5}, -2.0, 2.0), {3, 5}, [](auto& x) { return nn::softmax_row(x); });
  {
    const auto w = g.uniform({2, 3, 6});
    c.push_back({"layer_norm", {g.uniform({2, 3, 6}), g.uniform({6}), g.uniform({6})},
                 [w](const Inputs& in) { return project(nn::layer_norm(in[0], in[1], in[2]), w); }});
  }
  unary("l2_normalize_rows", g.away_from_zero({4, 5}), {4, 5}, [](auto& x) { return nn::l2_normalize_rows(x); });
  unary("split_heads", g.uniform({2, 3, 6}), {4, 3, 3}, [](auto& x) { return nn::split_heads(x, 2); });
  unary("merge_heads", g.uniform({4, 3, 3}), {2, 3, 6}, [](auto& x) { return nn::merge_heads(x, 2); });
  binary("conv2d_s1", g.uniform({2, 3, 5, 6}), g.uniform({4, 3, 3, 3}), {2, 4, 5, 6},
         [](auto& x, auto& w) { return nn::conv2d(x, w, 1, 1); });
  binary("conv2d_s2", g.uniform({2, 3, 5, 6}), g.uniform({4, 3, 3, 3}), {2, 4, 3, 3},
         [](auto& x, auto& w) { return nn::conv2d(x, w, 2, 1); });
  {
    const auto w = g.uniform({3, 4, 3, 3});
    c.push_back({"batch_norm_train", {g.uniform({3, 4, 3, 3}), g.uniform({4}), g.uniform({4})},
                 [w](const Inputs& in) {
                   nn::BatchNormStats<double> stats(4);
                   return project(nn::batch_norm(in[0], in[1], in[2], stats, nn::BnMode::kTrain), w);
                 }});
    const auto w2 = g.uniform({3, 4, 3, 3});
    std::vector<double> mean_v(4), var_v(4);
    const auto m = g.uniform({4}), v = g.uniform({4}, 0.5, 2.0);
    std::copy(m.data().begin(), m.data().end(), mean_v.begin());
    std::copy(v.data().begin(), v.data().end(), var_v.begin());
    c.push_back({"batch_norm_infer", {g.uniform({3, 4, 3, 3}), g.uniform({4}), g.uniform({4})},
                 [w2, mean_v, var_v](const Inputs& in) {
                   nn::BatchNormStats<double> stats(4);
                   stats.running_mean = mean_v;
                   stats.running_var = var_v;
                   return project(nn::batch_norm(in[0], in[1], in[2], stats, nn::BnMode::kInfer), w2);
                 }});
  }
  unary("feature_map_to_tokens", g.uniform({2, 3, 2, 3}), {2, 6, 3}, [](auto& x) { return nn::feature_map_to_tokens(x); });
  unary("mean_tokens", g.uniform({2, 5, 3}), {2, 3}, [](auto& x) { return nn::mean_tokens(x); });
  unary("token_avg_pool", g.uniform({2, 24, 3}), {2, 6, 3}, [](auto& x) { return nn::token_avg_pool(x, 4, 6, 2, 3); });
  binary("pairwise_l2", g.uniform({4, 5}), g.uniform({3, 5}), {4, 3}, [](auto& a, auto& b) { return nn::pairwise_l2(a, b); });

  unary("gap_head", g.uniform({2, 6, 5}), {2, 5}, [](auto& x) { return aggregation::gap_head(x); });
  {
    const auto w = g.uniform({2, 15});
    Inputs in{g.uniform({2, 6, 5}), g.uniform({6, 24}, -0.5, 0.5), g.uniform({24}), g.uniform({24, 6}, -0.5, 0.5),
              g.uniform({6}), g.uniform({6, 3}), g.uniform({3})};
    c.push_back({"smd_head", in, [w](const Inputs& t) {
                   aggregation::SmdParams<double> p{t[1], t[2], t[3], t[4], t[5], t[6]};
                   return project(aggregation::smd_head(t[0], p), w);
                 }});
  }
  {
    const auto w = g.uniform({2, 24});
    c.push_back({"local_head", {g.uniform({2, 32, 5}), g.uniform({5, 3}), g.uniform({3})}, [w](const Inputs& t) {
                   aggregation::LocalHeadParams<double> p{t[1], t[2]};
                   return project(aggregation::local_head(t[0], 4, 8, 2, 4, p), w);
                 }});
  }
  {
    const std::size_t d = 8;
    const auto w = g.uniform({2, 5, d});
    Inputs in{g.uniform({2, 5, d}), g.uniform({d}), g.uniform({d})};
    for (int i = 0; i < 4; ++i) {
      in.push_back(g.uniform({d, d}, -0.5, 0.5));
      in.push_back(g.uniform({d}));
    }
    c.push_back({"msa_layer", in, [w](const Inputs& t) {
                   model::AttentionParams<double> p{t[1], t[2], t[3], t[4], t[5], t[6], t[7], t[8], t[9], t[10]};
                   return project(model::msa_layer_forward(t[0], p, 2), w);
                 }});
  }

  // Losses over raw distance / similarity matrices.
  c.push_back({"loss_triplet_exhaustive", {g.uniform({5, 5}, 0.2, 1.8)},
               [](const Inputs& in) { return losses::triplet_exhaustive_loss(in[0], 10.0); }});
  c.push_back({"loss_triplet_semi_hard", {g.uniform({5, 5}, 0.2, 1.8)},
               [](const Inputs& in) { return losses::triplet_semi_hard_loss(in[0], 10.0); }});
  c.push_back({"loss_info_nce", {g.uniform({5, 5})}, [](const Inputs& in) { return losses::info_nce_loss(in[0], 0.02); }});
  // Full loss passes from unnormalized descriptors.
  for (auto strategy : {losses::Strategy::kExhaustive, losses::Strategy::kSemiHard, losses::Strategy::kInfoNce}) {
    losses::LossConfig cfg;
    cfg.strategy = strategy;
    c.push_back({"retrieval_loss_" + losses::to_string(strategy), {g.away_from_zero({4, 6}), g.away_from_zero({4, 6})},
                 [cfg](const Inputs& in) {
                   return losses::retrieval_loss(nn::l2_normalize_rows(in[0]), nn::l2_normalize_rows(in[1]), cfg);
                 }});
  }
  return c;
}

model::ModelConfig tiny_config(model::HeadType head) {
  model::ModelConfig cfg;
  cfg.variant = model::Variant::kCustom;
  cfg.depth = 2;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.projection_dim = 8;
  cfg.stem_channels = {4, 4, 4, 4, 4, 4};
  cfg.stem_strides = {2, 2, 1, 2, 1, 1};
  cfg.head = head;
  cfg.smd_k = 2;
  cfg.input_hw = {16, 32};
  cfg.aerial_hw = {16, 16};
  return cfg;
}

// Smallest |input| over every stem ReLU. Central differences straddle the
// kink when this is within a few steps of zero.
double relu_margin(const T64& images, model::StemParams<double>& stem, const model::ModelConfig& cfg) {
  nn::NoGradGuard no_grad;
  double margin = std::numeric_limits<double>::infinity();
  T64 x = images;
  for (std::size_t i = 0; i < stem.conv.size(); ++i) {
    auto stats = stem.bn_stats[i];
    x = nn::conv2d(x, stem.conv[i], cfg.stem_strides[i], 1);
    x = nn::batch_norm(x, stem.bn_gamma[i], stem.bn_beta[i], stats, nn::BnMode::kTrain, cfg.bn_momentum, cfg.bn_eps);
    for (double v : x.data()) margin = std::min(margin, std::abs(v));
    x = nn::relu(x);
  }
  return margin;
}

Check end_to_end_check(Gen& g, std::uint64_t seed, model::HeadType head, losses::Strategy strategy) {
  constexpr double kReluMargin = 1e-4;
  constexpr int kMaxDraws = 64;
  const auto model_cfg = tiny_config(head);
  std::shared_ptr<model::SiamesePair<double>> pair;
  T64 ground, aerial;
  for (int draw = 0;; ++draw) {
    if (draw == kMaxDraws) throw NumericError("end-to-end gradcheck: no draw keeps the stem ReLUs off their kink");
    pair = std::make_shared<model::SiamesePair<double>>(model::init_siamese<double>(model_cfg, seed));
    // At init the biases are zero and Q/K are tiny, so attention is near uniform
    // and several gradients sit at finite-difference noise level. Move off it.
    for (auto& p : pair->parameters()) {
      auto v = p.tensor.mutable_data();
      const auto noise = g.uniform({v.size()}, -0.3, 0.3);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += noise[i];
    }
    ground = g.uniform({3, 3, 16, 32}, 0.0, 1.0);
    aerial = g.uniform({3, 3, 16, 16}, 0.0, 1.0);
    if (relu_margin(ground, pair->ground.stem, model_cfg) >= kReluMargin &&
        relu_margin(aerial, pair->aerial.stem, model_cfg) >= kReluMargin) {
      break;
    }
  }
  Inputs inputs;
  for (const auto& p : pair->parameters()) inputs.push_back(p.tensor);
  losses::LossConfig cfg;
  cfg.strategy = strategy;
  return {"end_to_end_2layer", inputs,
          [pair, ground, aerial, cfg](const Inputs&) {
            const auto dg = model::saig_forward(ground, pair->ground, nn::BnMode::kTrain);
            const auto da = model::saig_forward(aerial, pair->aerial, nn::BnMode::kTrain);
            return losses::retrieval_loss(dg, da, cfg);
          }};
}

}  // namespace

std::vector<nn::GradCheckResult> run_gradcheck_suite(const GradSuiteOptions& options) {
  std::map<std::string, nn::GradCheckResult> worst;
  std::vector<std::string> order;
  auto record = [&](const nn::GradCheckResult& r) {
    auto [it, fresh] = worst.try_emplace(r.name, r);
    if (fresh) {
      order.push_back(r.name);
      return;
    }
    it->second.max_rel_error = std::max(it->second.max_rel_error, r.max_rel_error);
    it->second.passed = it->second.passed && r.passed;
  };
  for (std::size_t s = 0; s < options.seeds; ++s) {
    const std::uint64_t seed = options.base_seed + s;
    Gen g(seed);
    for (auto& c : kernel_checks(g)) record(nn::gradcheck(c.name, c.inputs, c.fn, options.kernel_tolerance));
    if (options.end_to_end) {
      const auto head = s % 2 == 0 ? model::HeadType::kGap : model::HeadType::kSmd;
      const losses::Strategy strategies[] = {losses::Strategy::kExhaustive, losses::Strategy::kSemiHard,
                                             losses::Strategy::kInfoNce};
      const auto c = end_to_end_check(g, seed, head, strategies[s % 3]);
      record(nn::gradcheck(c.name, c.inputs, c.fn, options.end_to_end_tolerance));
    }
  }
  std::vector<nn::GradCheckResult> out;
  for (const auto& name : order) out.push_back(worst.at(name));
  return out;
}

}  // namespace saig::train
