#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "saig/data/scene.hpp"

namespace saig::data {

inline constexpr int kManifestVersion = 1;

struct ManifestItem {
  std::int64_t pair_id = 0;
  std::string ground_path;  // relative to the manifest's directory unless absolute
  std::string aerial_path;
  TileOrigin tile_origin;
  double tile_size = 1.0;

  friend bool operator==(const ManifestItem&, const ManifestItem&) = default;
};

struct Manifest {
  int version = kManifestVersion;
  std::string split = "train";
  std::vector<ManifestItem> items;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

// Schema violations raise ParseError naming the field (and pair_id when known).
Manifest manifest_from_json(const nlohmann::json& doc);
nlohmann::json manifest_to_json(const Manifest& manifest);

// With `check_files`, every referenced image must exist (IoError otherwise).
Manifest load_manifest(const std::filesystem::path& path, bool check_files = true);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

// Writes ground_NNNNN.png / aerial_NNNNN.png plus manifest.json into `dir`.
Manifest save_dataset(const std::vector<ScenePair>& pairs, const std::filesystem::path& dir,
                      const std::string& split = "train");

// Decodes every pair referenced by the manifest at `manifest_path`.
std::vector<ScenePair> load_dataset(const std::filesystem::path& manifest_path);

}  // namespace saig::data
