#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include "doctest.h"
#include "saig/errors.hpp"
#include "saig/model/saig.hpp"
#include "saig/train/optim.hpp"
#include "saig/train/trainer.hpp"
#include "support.hpp"

using namespace saig;
using namespace saig::train;
using nn::Shape;
using nn::Tensor64;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("saig_train_" + name);
  fs::remove_all(dir);
  return dir;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.model = test_support::small_config();
  c.lr = 1e-3;
  c.batch_size = 4;
  c.epochs = 3;
  c.seed = 11;
  return c;
}

Tensor64 leaf(std::vector<double> v) {
  const std::size_t n = v.size();
  Tensor64 t(Shape{n}, std::move(v));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

TEST_CASE("lr schedule") {
  const std::int64_t total = 1000;
  const double base = 1e-3;
  CHECK(lr_schedule(0, total, base, 0.1) == 0.0);
  CHECK(lr_schedule(50, total, base, 0.1) == doctest::Approx(base / 2));
  CHECK(lr_schedule(100, total, base, 0.1) == doctest::Approx(base));
  CHECK(lr_schedule(550, total, base, 0.1) == doctest::Approx(base / 2));
  CHECK(lr_schedule(total, total, base, 0.1) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(std::abs(lr_schedule(99, total, base, 0.1) - lr_schedule(101, total, base, 0.1)) < base * 0.02);
  CHECK(lr_schedule(0, total, base, 0.0) == doctest::Approx(base));
  double prev = base;
  for (std::int64_t s = 100; s <= total; s += 10) {
    const double lr = lr_schedule(s, total, base, 0.1);
    CHECK(lr <= prev + 1e-15);
    prev = lr;
  }
  CHECK_THROWS_AS(lr_schedule(0, 0, base, 0.1), ContractError);
}

TEST_CASE("adamw against a scalar oracle") {
  std::vector<Tensor64> params{leaf({0.5, -1.0})};
  AdamWState<double> st;
  const double lr = 0.01, wd = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> p{0.5, -1.0}, m(2, 0.0), v(2, 0.0);
  const std::vector<std::vector<double>> grads{{0.2, -0.4}, {0.1, 0.3}, {-0.5, 0.05}};
  for (std::size_t t = 0; t < grads.size(); ++t) {
    auto g = params[0].mutable_grad();
    if (g.empty()) {
      params[0].zero_grad();
      g = params[0].mutable_grad();
    }
    g[0] = grads[t][0];
    g[1] = grads[t][1];
    adamw_step<double>(params, st, lr, wd);
    for (std::size_t i = 0; i < 2; ++i) {
      p[i] *= 1.0 - lr * wd;
      m[i] = b1 * m[i] + (1 - b1) * grads[t][i];
      v[i] = b2 * v[i] + (1 - b2) * grads[t][i] * grads[t][i];
      const double mh = m[i] / (1 - std::pow(b1, t + 1.0)), vh = v[i] / (1 - std::pow(b2, t + 1.0));
      p[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
    CHECK(params[0][0] == doctest::Approx(p[0]).epsilon(1e-12));
    CHECK(params[0][1] == doctest::Approx(p[1]).epsilon(1e-12));
  }
  CHECK(st.step == 3);
}

TEST_CASE("adamw degenerate updates") {
  SUBCASE("zero gradient and zero decay") {
    std::vector<Tensor64> params{leaf({0.3, -2.0, 7.0})};
    params[0].zero_grad();
    AdamWState<double> st;
    adamw_step<double>(params, st, 0.1, 0.0);
    CHECK(params[0][0] == 0.3);
    CHECK(params[0][1] == -2.0);
    CHECK(params[0][2] == 7.0);
  }
  SUBCASE("decay only") {
    std::vector<Tensor64> params{leaf({0.3, -2.0})};
    params[0].zero_grad();
    AdamWState<double> st;
    adamw_step<double>(params, st, 0.1, 0.5);
    CHECK(params[0][0] == doctest::Approx(0.3 * 0.95));
    CHECK(params[0][1] == doctest::Approx(-2.0 * 0.95));
  }
}

TEST_CASE("global norm clipping") {
  auto make = [](double a, double b) {
    std::vector<Tensor64> ps{leaf({0.0}), leaf({0.0})};
    for (auto& p : ps) p.zero_grad();
    ps[0].mutable_grad()[0] = a;
    ps[1].mutable_grad()[0] = b;
    return ps;
  };
  auto small = make(0.3, 0.4);
  CHECK(clip_global_norm<double>(small, 1.0) == doctest::Approx(0.5));
  CHECK(small[0].grad()[0] == doctest::Approx(0.3));
  CHECK(small[1].grad()[0] == doctest::Approx(0.4));

  auto big = make(0.0, 4.0);
  CHECK(clip_global_norm<double>(big, 1.0) == doctest::Approx(4.0));
  CHECK(big[1].grad()[0] == doctest::Approx(1.0));

  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto g = test_support::uniform(2, seed, -3.0, 3.0);
    auto ps = make(g[0], g[1]);
    const double pre = clip_global_norm<double>(ps, 1.5);
    const std::vector<Tensor64> view(ps.begin(), ps.end());
    CHECK(global_grad_norm<double>(view) == doctest::Approx(std::min(pre, 1.5)));
  }
}

TEST_CASE("sam step") {
  // L = w^2 / 2: the gradient at w + rho * sign(w) is w + rho.
  std::vector<Tensor64> params{leaf({1.0})};
  const LossFn<double> loss = [&]() { return nn::scale(nn::sum(nn::mul(params[0], params[0])), 0.5); };
  const double l = sam_step<double>(params, loss, 0.5);
  CHECK(l == doctest::Approx(0.5));
  CHECK(params[0].grad()[0] == doctest::Approx(1.5));
  CHECK(params[0][0] == 1.0);

  std::vector<Tensor64> plain{leaf({1.0})};
  const LossFn<double> plain_loss = [&]() { return nn::scale(nn::sum(nn::mul(plain[0], plain[0])), 0.5); };
  sam_step<double>(plain, plain_loss, 0.0);
  CHECK(plain[0].grad()[0] == doctest::Approx(1.0));

  // Two parameters: the ascent direction is the normalized joint gradient.
  std::vector<Tensor64> two{leaf({3.0}), leaf({4.0})};
  const LossFn<double> two_loss = [&]() {
    return nn::scale(nn::add(nn::sum(nn::mul(two[0], two[0])), nn::sum(nn::mul(two[1], two[1]))), 0.5);
  };
  sam_step<double>(two, two_loss, 1.0);
  CHECK(two[0].grad()[0] == doctest::Approx(3.6));
  CHECK(two[1].grad()[0] == doctest::Approx(4.8));
  CHECK(two[0][0] == 3.0);
  CHECK(two[1][0] == 4.0);
}

TEST_CASE("split and epoch order") {
  const auto s = split_indices(100, 3);
  CHECK(s.validation.size() == 12);
  CHECK(s.train.size() == 88);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.validation.begin(), s.validation.end());
  CHECK(all.size() == 100);
  CHECK(std::is_sorted(s.train.begin(), s.train.end()));
  CHECK(split_indices(100, 3).validation == s.validation);
  CHECK(split_indices(100, 4).validation != s.validation);
  CHECK(split_indices(3, 0).validation.size() == 1);

  const auto o1 = epoch_order(s.train, 3, 1);
  CHECK(epoch_order(s.train, 3, 1) == o1);
  CHECK(epoch_order(s.train, 3, 2) != o1);
  CHECK(std::set<std::size_t>(o1.begin(), o1.end()) == std::set<std::size_t>(s.train.begin(), s.train.end()));
}

TEST_CASE("train config json and validation") {
  auto c = tiny_config();
  c.augment = true;
  c.sam_enabled = true;
  c.data = "x/manifest.json";
  nlohmann::json j = c;
  const auto back = j.get<TrainConfig>();
  CHECK(nlohmann::json(back) == j);

  auto bad = [](auto edit) {
    auto c = tiny_config();
    edit(c);
    CHECK_THROWS_AS(c.validate(), ContractError);
  };
  bad([](TrainConfig& c) { c.lr = 0.0; });
  bad([](TrainConfig& c) { c.clip_norm = -1.0; });
  bad([](TrainConfig& c) { c.batch_size = 1; });
  bad([](TrainConfig& c) { c.epochs = 0; });
  bad([](TrainConfig& c) { c.weight_decay = -0.1; });
  bad([](TrainConfig& c) { c.warmup_fraction = 1.0; });
  bad([](TrainConfig& c) { c.sam_rho = -1.0; });
  CHECK_THROWS_AS(nlohmann::json::array().get<TrainConfig>(), ParseError);
  CHECK_THROWS_AS(nlohmann::json({{"lr", "fast"}}).get<TrainConfig>(), ParseError);
  CHECK_THROWS_AS(load_train_config("/nonexistent/cfg.json"), IoError);
}

TEST_CASE("training run, determinism and resume") {
  const auto pairs = data::generate_scene_pairs(21, 8);
  const auto config = tiny_config();

  const auto a_dir = scratch("a"), b_dir = scratch("b");
  const auto a = saig::train::train(config, pairs, {a_dir});
  REQUIRE(a.log.size() == 3);
  CHECK(a.steps == 6);  // 7 training pairs in batches of 4 and 3
  for (const auto& m : a.log) {
    CHECK(std::isfinite(m.loss));
    CHECK(m.r1 >= 0.0);
    CHECK(m.r1 <= 1.0);
  }
  CHECK(fs::exists(a_dir / "best.bin"));
  CHECK(fs::exists(a_dir / "metrics.jsonl"));

  saig::train::train(config, pairs, {b_dir});
  CHECK(slurp(a_dir / "last.bin") == slurp(b_dir / "last.bin"));
  CHECK(slurp(a_dir / "best.bin") == slurp(b_dir / "best.bin"));
  CHECK(slurp(a_dir / "metrics.jsonl") == slurp(b_dir / "metrics.jsonl"));

  // A single held-out pair always ranks first, so the best checkpoint is epoch 1.
  REQUIRE(a.best_epoch == 1);
  const auto r_dir = scratch("resume");
  const auto r = saig::train::train(config, pairs, {r_dir, a_dir / "best.bin"});
  CHECK(r.steps == a.steps);
  CHECK(slurp(a_dir / "last.bin") == slurp(r_dir / "last.bin"));
  CHECK(slurp(a_dir / "metrics.jsonl") == slurp(r_dir / "metrics.jsonl"));

  auto other = config;
  other.lr = 2e-3;
  CHECK_THROWS_AS(saig::train::train(other, pairs, {scratch("mismatch"), a_dir / "best.bin"}), ContractError);

  auto loaded = model::load_siamese(model::load_checkpoint(a_dir / "last.bin"));
  const auto ev = evaluate_pairs(loaded, pairs);
  CHECK(ev.index.size() == 8);
  CHECK(ev.report.n_queries == 8);
  CHECK(ev.report.r_at.at(1) >= 0.0);
}

TEST_CASE("augmented and SAM runs stay deterministic") {
  const auto pairs = data::generate_scene_pairs(22, 8);
  auto config = tiny_config();
  config.epochs = 1;
  config.augment = true;
  config.sam_enabled = true;
  config.sam_rho = 0.05;
  const auto a_dir = scratch("aug_a"), b_dir = scratch("aug_b");
  const auto a = saig::train::train(config, pairs, {a_dir});
  saig::train::train(config, pairs, {b_dir});
  CHECK(std::isfinite(a.log.front().loss));
  CHECK(slurp(a_dir / "last.bin") == slurp(b_dir / "last.bin"));
}

TEST_CASE("training input errors") {
  auto pairs = data::generate_scene_pairs(23, 8);
  const auto config = tiny_config();
  CHECK_THROWS_AS(saig::train::train(config, std::vector<data::ScenePair>(pairs.begin(), pairs.begin() + 2), {scratch("few")}),
                  ContractError);
  auto dup = pairs;
  dup[1].pair_id = dup[0].pair_id;
  CHECK_THROWS_AS(saig::train::train(config, dup, {scratch("dup")}), ContractError);
  auto wrong = config;
  wrong.model.input_hw = {32, 128};
  CHECK_THROWS_AS(saig::train::train(wrong, pairs, {scratch("size")}), ContractError);
  CHECK_THROWS_AS(saig::train::train(config, TrainOptions{scratch("nodata")}), ContractError);
}

TEST_CASE("non-finite input aborts with a checkpoint") {
  auto pairs = data::generate_scene_pairs(24, 8);
  for (auto& p : pairs) p.ground.mutable_data()[5] = std::numeric_limits<float>::quiet_NaN();
  const auto dir = scratch("nan");
  bool threw = false;
  try {
    saig::train::train(tiny_config(), pairs, {dir});
  } catch (const NumericError& e) {
    threw = true;
    CHECK(std::string(e.what()).find("at step 0") != std::string::npos);
  }
  CHECK(threw);
  CHECK(fs::exists(dir / "nan_abort.bin"));
  CHECK_NOTHROW(model::load_siamese(model::load_checkpoint(dir / "nan_abort.bin")));
}
