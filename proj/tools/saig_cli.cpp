// Command-line front end: gen-data, train, eval, paramcount, flopcount, gradcheck.
//
// Exit codes: 0 success, 1 contract / file / numeric error, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "saig/data/manifest.hpp"
#include "saig/errors.hpp"
#include "saig/eval/report.hpp"
#include "saig/model/checkpoint.hpp"
#include "saig/model/complexity.hpp"
#include "saig/train/gradcheck_suite.hpp"
#include "saig/train/trainer.hpp"

namespace {

using saig::model::ImageSize;
using saig::model::ModelConfig;

ImageSize parse_size(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t used = 0;
    const auto h = std::stoul(text.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(text);
    const auto rest = text.substr(x + 1);
    const auto w = std::stoul(rest, &used);
    if (used != rest.size() || h == 0 || w == 0) throw std::invalid_argument(text);
    return {h, w};
  } catch (const std::logic_error&) {
    throw CLI::ValidationError("size", "expected HxW, got '" + text + "'");
  }
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw saig::IoError("cannot open config '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw saig::ParseError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

// Variant preset, optionally overridden by a JSON config's "model" section
// (or the whole document when it has no such section).
ModelConfig model_from(const std::string& variant, const std::string& config_path) {
  ModelConfig cfg = saig::model::parse_variant(variant) == saig::model::Variant::kS ? ModelConfig::saig_s()
                                                                                      : ModelConfig::saig_d();
  if (!config_path.empty()) {
    const auto doc = read_json(config_path);
    cfg = doc.contains("model") ? doc["model"].get<ModelConfig>() : doc.get<ModelConfig>();
  }
  return cfg;
}

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool deterministic = false;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAIG cross-view retrieval toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON config file");
  app.add_option("--seed", g.seed, "seed override");
  app.add_option("--out", g.out, "output path override");
  app.add_flag("--deterministic", g.deterministic, "single-threaded bit-exact execution (always on in this build)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "render synthetic ground/aerial pairs and a manifest");
  gen->fallthrough();
  std::size_t gen_count = 256;
  std::string gen_ground = "32x64", gen_aerial = "32x32", gen_split = "train";
  gen->add_option("--count", gen_count, "number of pairs")->check(CLI::PositiveNumber);
  gen->add_option("--ground", gen_ground, "ground panorama size HxW");
  gen->add_option("--aerial", gen_aerial, "aerial tile size HxW");
  gen->add_option("--split", gen_split, "split name recorded in the manifest");

  // train
  auto* tr = app.add_subcommand("train", "train a Siamese pair from a JSON TrainConfig");
  tr->fallthrough();
  std::string tr_data, tr_resume;
  std::optional<std::size_t> tr_epochs;
  bool tr_quiet = false;
  tr->add_option("--data", tr_data, "manifest path (overrides config.data)");
  tr->add_option("--epochs", tr_epochs, "epoch count override");
  tr->add_option("--resume", tr_resume, "resume from a checkpoint written by the same config");
  tr->add_flag("--quiet", tr_quiet, "do not echo metric lines");

  // eval
  auto* ev = app.add_subcommand("eval", "retrieval metrics of a checkpoint on a manifest");
  ev->fallthrough();
  std::string ev_checkpoint, ev_data, ev_index;
  ev->add_option("--checkpoint", ev_checkpoint, "model checkpoint")->required();
  ev->add_option("--data", ev_data, "manifest path (default: the checkpoint's training data)");
  ev->add_option("--index", ev_index, "also write the aerial descriptor index here");

  // paramcount
  auto* pc = app.add_subcommand("paramcount", "learnable parameter count");
  pc->fallthrough();
  std::string pc_variant = "saig-s", pc_input = "224x224", pc_ground = "128x512", pc_aerial = "256x256";
  std::size_t pc_classes = 0;
  bool pc_siamese = false;
  std::string pc_head = "gap";
  pc->add_option("--variant", pc_variant, "saig-s or saig-d");
  pc->add_option("--classes", pc_classes, "classifier classes (0 = none)");
  pc->add_option("--input", pc_input, "single-branch input size HxW");
  pc->add_flag("--siamese", pc_siamese, "count both branches at --ground / --aerial");
  pc->add_option("--ground", pc_ground, "ground size HxW (Siamese)");
  pc->add_option("--aerial", pc_aerial, "aerial size HxW (Siamese)");
  pc->add_option("--head", pc_head, "gap, smd or local");

  // flopcount
  auto* fc = app.add_subcommand("flopcount", "forward GFLOPs of the Siamese pair (one MAC = one FLOP)");
  fc->fallthrough();
  std::string fc_variant = "saig-s", fc_ground = "128x512", fc_aerial = "256x256", fc_head = "gap";
  bool fc_json = false;
  fc->add_option("--variant", fc_variant, "saig-s or saig-d");
  fc->add_option("--ground", fc_ground, "ground size HxW");
  fc->add_option("--aerial", fc_aerial, "aerial size HxW");
  fc->add_option("--head", fc_head, "gap, smd or local");
  fc->add_flag("--json", fc_json, "print a per-branch breakdown as JSON");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "64-bit finite-difference gradient suite");
  gc->fallthrough();
  std::size_t gc_seeds = 20;
  gc->add_option("--seeds", gc_seeds, "random seeds per check")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      if (g.out.empty()) throw CLI::RequiredError("--out");
      saig::data::SceneSizes sizes{parse_size(gen_ground), parse_size(gen_aerial)};
      const auto pairs = saig::data::generate_scene_pairs(g.seed.value_or(0), gen_count, sizes);
      saig::data::save_dataset(pairs, g.out, gen_split);
      std::cout << (std::filesystem::path(g.out) / "manifest.json").string() << '\n';
      return 0;
    }

    if (tr->parsed()) {
      if (g.config.empty()) throw CLI::RequiredError("--config");
      auto cfg = saig::train::load_train_config(g.config);
      if (g.seed) cfg.seed = *g.seed;
      if (tr_epochs) cfg.epochs = *tr_epochs;
      if (!tr_data.empty()) cfg.data = tr_data;
      saig::train::TrainOptions opts;
      opts.out_dir = g.out.empty() ? std::filesystem::path("run") : std::filesystem::path(g.out);
      opts.verbose = !tr_quiet;
      if (!tr_resume.empty()) opts.resume = tr_resume;
      const auto result = saig::train::train(cfg, opts);
      std::cerr << "best r@1 " << result.best_r1 << " at epoch " << result.best_epoch << ", " << result.steps
                << " steps; checkpoints in " << opts.out_dir.string() << '\n';
      return 0;
    }

    if (ev->parsed()) {
      const auto bytes = saig::model::read_file_bytes(ev_checkpoint);
      const auto ck = saig::model::decode_checkpoint(bytes);
      std::string manifest = ev_data;
      if (manifest.empty() && ck.config.contains("train")) manifest = ck.config["train"].value("data", "");
      if (manifest.empty()) throw CLI::RequiredError("--data");
      auto pair = saig::model::load_siamese(ck);
      const auto pairs = saig::data::load_dataset(manifest);
      const auto result = saig::train::evaluate_pairs(pair, pairs);
      if (!ev_index.empty()) saig::eval::save_index(result.index, ev_index);
      const auto report = saig::eval::report_json(result.report, ck.config, bytes);
      if (g.out.empty()) {
        std::cout << report.dump(2) << '\n';
      } else {
        std::ofstream out(g.out, std::ios::trunc);
        if (!out) throw saig::IoError("cannot write report '" + g.out + "'");
        out << report.dump(2) << '\n';
      }
      return 0;
    }

    if (pc->parsed()) {
      auto cfg = model_from(pc_variant, g.config);
      cfg.head = saig::model::parse_head(pc_head);
      cfg.classifier_classes = pc_classes;
      std::uint64_t count = 0;
      if (pc_siamese) {
        cfg.input_hw = parse_size(pc_ground);
        cfg.aerial_hw = parse_size(pc_aerial);
        count = saig::model::siamese_param_count(cfg);
      } else {
        cfg.input_hw = cfg.aerial_hw = parse_size(pc_input);
        count = saig::model::param_count(cfg);
      }
      std::cout << count << '\n';
      return 0;
    }

    if (fc->parsed()) {
      auto cfg = model_from(fc_variant, g.config);
      cfg.head = saig::model::parse_head(fc_head);
      cfg.input_hw = parse_size(fc_ground);
      cfg.aerial_hw = parse_size(fc_aerial);
      const auto ground = saig::model::flop_count(cfg, cfg.input_hw);
      const auto aerial = saig::model::flop_count(cfg, cfg.aerial_hw);
      const double total = static_cast<double>(ground.total() + aerial.total()) / 1e9;
      if (fc_json) {
        std::cout << nlohmann::json{{"gflops", total},
                                    {"ground_gflops", static_cast<double>(ground.total()) / 1e9},
                                    {"aerial_gflops", static_cast<double>(aerial.total()) / 1e9}}
                         .dump(2)
                  << '\n';
      } else {
        std::printf("%.3f\n", total);
      }
      return 0;
    }

    if (gc->parsed()) {
      saig::train::GradSuiteOptions opts;
      opts.seeds = gc_seeds;
      if (g.seed) opts.base_seed = *g.seed;
      bool ok = true;
      for (const auto& r : saig::train::run_gradcheck_suite(opts)) {
        std::printf("%-32s %.3e %s\n", r.name.c_str(), r.max_rel_error, r.passed ? "PASS" : "FAIL");
        ok = ok && r.passed;
      }
      return ok ? 0 : 1;
    }
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const saig::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
