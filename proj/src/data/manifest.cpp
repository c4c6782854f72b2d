#include "saig/data/manifest.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "saig/data/image_io.hpp"

namespace saig::data {

namespace {

std::string item_context(const nlohmann::json& item) {
  if (item.is_object() && item.contains("pair_id") && item["pair_id"].is_number_integer()) {
    return "item with pair_id " + std::to_string(item["pair_id"].get<std::int64_t>());
  }
  return "item";
}

template <typename V>
V required(const nlohmann::json& obj, const char* field, const std::string& context) {
  if (!obj.contains(field)) throw ParseError("manifest " + context + ": missing field '" + field + "'");
  try {
    return obj.at(field).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError("manifest " + context + ": field '" + field + "' has the wrong type");
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

Manifest manifest_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ParseError("manifest: document must be a JSON object");
  Manifest m;
  m.version = required<int>(doc, "version", "document");
  if (m.version != kManifestVersion) {
    throw ParseError("manifest: unsupported version " + std::to_string(m.version) + " (expected " +
                     std::to_string(kManifestVersion) + ")");
  }
  m.split = required<std::string>(doc, "split", "document");
  if (!doc.contains("items") || !doc["items"].is_array()) throw ParseError("manifest: missing field 'items'");
  std::set<std::int64_t> ids;
  for (const auto& item : doc["items"]) {
    const std::string ctx = item_context(item);
    if (!item.is_object()) throw ParseError("manifest: items must be objects");
    ManifestItem it;
    it.pair_id = required<std::int64_t>(item, "pair_id", ctx);
    it.ground_path = required<std::string>(item, "ground_path", ctx);
    it.aerial_path = required<std::string>(item, "aerial_path", ctx);
    const auto origin = required<std::vector<double>>(item, "tile_origin", ctx);
    if (origin.size() != 2) throw ParseError("manifest " + ctx + ": field 'tile_origin' must be [x, y]");
    it.tile_origin = {origin[0], origin[1]};
    it.tile_size = required<double>(item, "tile_size", ctx);
    if (!ids.insert(it.pair_id).second) throw ParseError("manifest " + ctx + ": duplicate pair_id");
    m.items.push_back(std::move(it));
  }
  return m;
}

nlohmann::json manifest_to_json(const Manifest& manifest) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : manifest.items) {
    items.push_back({{"pair_id", it.pair_id},
                     {"ground_path", it.ground_path},
                     {"aerial_path", it.aerial_path},
                     {"tile_origin", {it.tile_origin.x, it.tile_origin.y}},
                     {"tile_size", it.tile_size}});
  }
  return {{"version", manifest.version}, {"split", manifest.split}, {"items", items}};
}

Manifest load_manifest(const std::filesystem::path& path, bool check_files) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest '" + path.string() + "' is not valid JSON: " + e.what());
  }
  Manifest m = manifest_from_json(doc);
  if (check_files) {
    const auto base = path.parent_path();
    for (const auto& it : m.items) {
      for (const auto& p : {it.ground_path, it.aerial_path}) {
        if (!std::filesystem::exists(resolve(base, p))) {
          throw IoError("manifest item with pair_id " + std::to_string(it.pair_id) + ": missing file '" + p + "'");
        }
      }
    }
  }
  return m;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  out << manifest_to_json(manifest).dump(2) << '\n';
}

Manifest save_dataset(const std::vector<ScenePair>& pairs, const std::filesystem::path& dir,
                      const std::string& split) {
  std::filesystem::create_directories(dir);
  Manifest m;
  m.split = split;
  char name[64];
  for (const auto& p : pairs) {
    ManifestItem it;
    it.pair_id = p.pair_id;
    std::snprintf(name, sizeof(name), "ground_%05lld.png", static_cast<long long>(p.pair_id));
    it.ground_path = name;
    std::snprintf(name, sizeof(name), "aerial_%05lld.png", static_cast<long long>(p.pair_id));
    it.aerial_path = name;
    it.tile_origin = p.tile_origin;
    it.tile_size = p.tile_size;
    write_png(p.ground, dir / it.ground_path);
    write_png(p.aerial, dir / it.aerial_path);
    m.items.push_back(std::move(it));
  }
  save_manifest(m, dir / "manifest.json");
  return m;
}

std::vector<ScenePair> load_dataset(const std::filesystem::path& manifest_path) {
  const Manifest m = load_manifest(manifest_path);
  const auto base = manifest_path.parent_path();
  std::vector<ScenePair> pairs;
  pairs.reserve(m.items.size());
  for (const auto& it : m.items) {
    ScenePair p;
    p.pair_id = it.pair_id;
    p.ground = read_png(resolve(base, it.ground_path));
    p.aerial = read_png(resolve(base, it.aerial_path));
    p.tile_origin = it.tile_origin;
    p.tile_size = it.tile_size;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace saig::data
