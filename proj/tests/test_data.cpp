#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "saig/data/image_io.hpp"
#include "saig/data/labels.hpp"
#include "saig/data/manifest.hpp"
#include "saig/data/scene.hpp"
#include "saig/model/checkpoint.hpp"

using namespace saig;
using namespace saig::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("saig_test_data_" + name);
  fs::remove_all(p);
  return p;
}

bool same_values(const Image& a, const Image& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

// Aerial pixels resampled into panorama geometry (nearest pixel) for the rows
// below the horizon: the azimuth of a column, the ground distance of a row.
std::vector<double> reproject(const Image& aerial, std::size_t H, std::size_t W) {
  const std::size_t n = aerial.dim(1), horizon = H * 3 / 8;
  std::vector<double> out;
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t r = horizon; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) {
        const double t = (r - horizon + 0.5) / static_cast<double>(H - horizon);
        const double az = 2.0 * std::numbers::pi * (c + 0.5) / W;
        const double edge = 0.5 / std::max(std::abs(std::sin(az)), std::abs(std::cos(az)));
        const double reach = edge * (1.0 - t) + 0.03 * t;
        const double u = 0.5 + reach * std::sin(az), v = 0.5 - reach * std::cos(az);
        const auto col = std::min(n - 1, static_cast<std::size_t>(u * n));
        const auto row = std::min(n - 1, static_cast<std::size_t>(v * n));
        out.push_back(aerial[(k * n + row) * n + col]);
      }
  return out;
}

std::vector<double> below_horizon(const Image& ground) {
  const std::size_t H = ground.dim(1), W = ground.dim(2), horizon = H * 3 / 8;
  std::vector<double> out;
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t r = horizon; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) out.push_back(ground[(k * H + r) * W + c]);
  return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= a.size();
  mb /= b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

double layout_agreement(const ScenePair& ground_from, const ScenePair& aerial_from) {
  const auto& g = ground_from.ground;
  return pearson(below_horizon(g), reproject(aerial_from.aerial, g.dim(1), g.dim(2)));
}

}  // namespace

TEST_CASE("generation is deterministic per seed") {
  const auto a = generate_scene_pairs(5, 6);
  const auto b = generate_scene_pairs(5, 6);
  const auto c = generate_scene_pairs(6, 6);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(same_values(a[i].ground, b[i].ground));
    CHECK(same_values(a[i].aerial, b[i].aerial));
    CHECK(a[i].tile_origin == b[i].tile_origin);
    CHECK_FALSE(same_values(a[i].aerial, c[i].aerial));
  }
}

TEST_CASE("256 pairs with distinct scenes and tiles") {
  const auto pairs = generate_scene_pairs(0, 256);
  REQUIRE(pairs.size() == 256);
  CHECK(pairs[0].ground.shape() == nn::Shape{3, 32, 64});
  CHECK(pairs[0].aerial.shape() == nn::Shape{3, 32, 32});
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(pairs[i].pair_id == static_cast<std::int64_t>(i));
    for (std::size_t j = i + 1; j < pairs.size(); ++j) {
      REQUIRE_FALSE(same_values(pairs[i].aerial, pairs[j].aerial));
      REQUIRE(tile_iou({0, pairs[i].tile_origin.x, pairs[i].tile_origin.y, 1.0},
                       {1, pairs[j].tile_origin.x, pairs[j].tile_origin.y, 1.0}) == 0.0);
    }
  }
  for (float v : pairs[3].ground.data()) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
    REQUIRE(std::round(v * 255.0f) / 255.0f == v);
  }
}

TEST_CASE("ground layout follows its own aerial tile") {
  double intra = 0.0, cross = 0.0;
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto p = generate_scene_pairs(1000 + seed, 2);
    const double own = layout_agreement(p[0], p[0]);
    const double other = layout_agreement(p[0], p[1]);
    intra += own;
    cross += other;
    wins += own > other;
  }
  MESSAGE("mean intra ", intra / 100, ", mean cross ", cross / 100, ", wins ", wins);
  CHECK(intra / 100 > 0.8);
  CHECK(std::abs(cross / 100) < 0.2);
  CHECK(wins >= 95);
}

TEST_CASE("scene transforms keep both views consistent") {
  const auto pairs = generate_scene_pairs(42, 8);
  for (const auto& p : pairs) {
    for (int turns = 0; turns < 4; ++turns)
      for (bool mirror : {false, true}) {
        const auto t = transform_pair(p, {turns, mirror});
        CHECK(layout_agreement(t, t) > 0.9 * layout_agreement(p, p));
      }
    // Composition laws, checked exactly.
    const auto once = transform_pair(p, {1, false});
    CHECK(same_values(transform_pair(once, {1, false}).aerial, transform_pair(p, {2, false}).aerial));
    CHECK(same_values(transform_pair(once, {1, false}).ground, transform_pair(p, {2, false}).ground));
    const auto full = transform_pair(p, {4, false});
    CHECK(same_values(full.aerial, p.aerial));
    CHECK(same_values(full.ground, p.ground));
    const auto twice = transform_pair(transform_pair(p, {0, true}), {0, true});
    CHECK(same_values(twice.aerial, p.aerial));
    CHECK(same_values(twice.ground, p.ground));
  }
  // One clockwise quarter turn moves the top-left aerial pixel to the top-right.
  const auto& p = pairs[0];
  const auto r = transform_pair(p, {1, false});
  const std::size_t n = 32;
  CHECK(r.aerial[n - 1] == p.aerial[0]);
  CHECK(r.ground[16] == p.ground[0]);

  auto odd = p;
  odd.ground = Image({3, 4, 6}, 0.5f);
  CHECK_THROWS_AS(transform_pair(odd, {}), ContractError);
}

TEST_CASE("fov crop") {
  Image pano({3, 2, 512});
  auto d = pano.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(i % 512) / 512.0f;

  CHECK(same_values(fov_crop(pano, 360, 0), pano));
  CHECK(fov_crop(pano, 180, 0).dim(2) == 256);
  CHECK(fov_crop(pano, 90, 0).dim(2) == 128);
  CHECK(fov_crop(pano, 70, 0).dim(2) == 100);

  const auto wrap = fov_crop(pano, 40, 350);
  REQUIRE(wrap.dim(2) == 57);
  const std::size_t start = 498;  // round(512 * 350 / 360)
  for (std::size_t x = 0; x < 57; ++x) CHECK(wrap[x] == pano[(start + x) % 512]);

  for (double theta : {0.0, 33.0, 90.0, 271.5}) {
    const auto shifted = fov_crop(pano, 360, theta);
    const double back = 360.0 * (512 - std::lround(512 * theta / 360.0)) / 512.0;
    CHECK(same_values(fov_crop(shifted, 360, back), pano));
  }
  CHECK_THROWS_AS(fov_crop(pano, 0, 0), ContractError);
  CHECK_THROWS_AS(fov_crop(pano, 361, 0), ContractError);
}

TEST_CASE("IoU labels") {
  const Tile q{0, 0.0, 0.0, 1.0};
  CHECK(tile_iou(q, {1, 0.0, 0.0, 1.0}) == 1.0);
  CHECK(tile_iou(q, {2, 0.5, 0.0, 1.0}) == doctest::Approx(1.0 / 3.0));
  CHECK(tile_iou(q, {3, 2.0, 0.0, 1.0}) == 0.0);
  const std::vector<Tile> refs{{1, 0.0, 0.0, 1.0}, {2, 0.5, 0.0, 1.0}, {3, 2.0, 0.0, 1.0}};
  const auto l = iou_label(q, refs);
  CHECK(l.positives == std::vector<std::int64_t>{1});
  CHECK(l.semi_positives == std::vector<std::int64_t>{2});

  SUBCASE("exact threshold values") {
    // 139 x 78 overlap of two 139-wide tiles: IoU = 10842 / 27800 = 0.39.
    const Tile big{0, 0.0, 0.0, 139.0};
    const Tile at39{7, 0.0, 61.0, 139.0};
    REQUIRE(tile_iou(big, at39) == kPositiveIou);
    const auto a = iou_label(big, std::vector<Tile>{at39});
    CHECK(a.positives.empty());
    CHECK(a.semi_positives == std::vector<std::int64_t>{7});

    // 3 x 3 overlap of 4-wide tiles: 9 / 23.  1 x 1 overlap of 2-wide tiles: 1 / 7.
    const Tile high{8, 1.0, 1.0, 4.0};
    REQUIRE(tile_iou({0, 0.0, 0.0, 4.0}, high) == kSemiPositiveHigh);
    // 9/23 also exceeds 0.39; the positive label takes precedence.
    const auto h = iou_label({0, 0.0, 0.0, 4.0}, std::vector<Tile>{high});
    CHECK(h.positives.size() == 1);
    CHECK(h.semi_positives.empty());
    const Tile low{9, 1.0, 1.0, 2.0};
    REQUIRE(tile_iou({0, 0.0, 0.0, 2.0}, low) == kSemiPositiveLow);
    CHECK(iou_label({0, 0.0, 0.0, 2.0}, std::vector<Tile>{low}).semi_positives.size() == 1);
    const Tile under{10, 1.0, 1.001, 2.0};
    const auto u = iou_label({0, 0.0, 0.0, 2.0}, std::vector<Tile>{under});
    CHECK(u.positives.empty());
    CHECK(u.semi_positives.empty());
  }
  CHECK_THROWS_AS(tile_iou(q, {1, 0.0, 0.0, 0.0}), ContractError);
}

TEST_CASE("png round trip") {
  const auto dir = scratch("png");
  fs::create_directories(dir);
  const auto p = generate_scene_pairs(3, 1)[0];
  write_png(p.ground, dir / "g.png");
  CHECK(same_values(read_png(dir / "g.png"), p.ground));
  CHECK_THROWS_AS(read_png(dir / "missing.png"), IoError);
  std::ofstream(dir / "junk.png") << "not a png";
  CHECK_THROWS_AS(read_png(dir / "junk.png"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("dataset and manifest") {
  const auto dir = scratch("set");
  const auto pairs = generate_scene_pairs(9, 5);
  const auto m = save_dataset(pairs, dir, "val");
  CHECK(load_manifest(dir / "manifest.json") == m);

  const auto back = load_dataset(dir / "manifest.json");
  REQUIRE(back.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(same_values(back[i].ground, pairs[i].ground));
    CHECK(same_values(back[i].aerial, pairs[i].aerial));
    CHECK(back[i].tile_origin == pairs[i].tile_origin);
  }

  SUBCASE("identical bytes on disk") {
    const auto again = scratch("set_again");
    save_dataset(generate_scene_pairs(9, 5), again, "val");
    for (const auto* f : {"manifest.json", "ground_00000.png", "aerial_00004.png"})
      CHECK(model::read_file_bytes(dir / f) == model::read_file_bytes(again / f));
    fs::remove_all(again);
  }
  SUBCASE("schema errors") {
    auto doc = manifest_to_json(m);
    CHECK(manifest_from_json(doc) == m);

    auto missing = doc;
    missing["items"][2].erase("ground_path");
    try {
      manifest_from_json(missing);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      const std::string what = e.what();
      CHECK(what.find("pair_id 2") != std::string::npos);
      CHECK(what.find("ground_path") != std::string::npos);
    }
    auto version = doc;
    version["version"] = 2;
    try {
      manifest_from_json(version);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("unsupported version") != std::string::npos);
    }
    auto dup = doc;
    dup["items"][1]["pair_id"] = 0;
    CHECK_THROWS_AS(manifest_from_json(dup), ParseError);
    fs::remove(dir / "aerial_00003.png");
    CHECK_THROWS_AS(load_manifest(dir / "manifest.json"), IoError);
    CHECK_NOTHROW(load_manifest(dir / "manifest.json", false));
  }
  fs::remove_all(dir);
}
