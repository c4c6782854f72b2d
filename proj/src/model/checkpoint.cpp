#include "saig/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace saig::model {

namespace {

static_assert(sizeof(float) == 4);

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64_le(std::span<const std::uint8_t> bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes[i]} << (8 * i);
  return v;
}

void put_f32_le(std::uint8_t* dst, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) dst[i] = static_cast<std::uint8_t>(bits >> (8 * i));
}

float get_f32_le(const std::uint8_t* src) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= std::uint32_t{src[i]} << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

const TensorRecord* CheckpointData::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const TensorRecord& CheckpointData::at(const std::string& name) const {
  if (const auto* t = find(name)) return *t;
  throw ParseError("checkpoint has no tensor named '" + name + "'");
}

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data) {
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : data.tensors) {
    if (nn::shape_numel(t.shape) != t.data.size()) {
      throw DimensionError("checkpoint tensor '" + t.name + "' shape does not match its data");
    }
    const std::uint64_t len = t.data.size() * 4;
    table.push_back({{"name", t.name}, {"shape", t.shape}, {"byte_offset", offset}, {"byte_len", len}});
    offset += len;
  }
  nlohmann::json header{{"format_version", kCheckpointFormatVersion}, {"config", data.config}, {"tensors", table}};
  if (!data.state.is_null()) header["state"] = data.state;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(8 + text.size() + offset);
  put_u64_le(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t blob = out.size();
  out.resize(blob + offset);
  std::uint8_t* cursor = out.data() + blob;
  for (const auto& t : data.tensors) {
    for (float v : t.data) {
      put_f32_le(cursor, v);
      cursor += 4;
    }
  }
  return out;
}

CheckpointData decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw ParseError("checkpoint truncated: missing header length");
  const std::uint64_t header_len = get_u64_le(bytes);
  if (header_len > bytes.size() - 8) throw ParseError("checkpoint truncated: header runs past end of file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (!header.contains("format_version") || header["format_version"] != kCheckpointFormatVersion) {
    throw ParseError("unsupported checkpoint format_version " +
                     (header.contains("format_version") ? header["format_version"].dump() : std::string("<missing>")));
  }
  const auto blob = bytes.subspan(8 + header_len);
  CheckpointData data;
  data.config = header.value("config", nlohmann::json::object());
  if (header.contains("state")) data.state = header["state"];
  try {
    for (const auto& entry : header.at("tensors")) {
      TensorRecord t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<nn::Shape>();
      const auto offset = entry.at("byte_offset").get<std::uint64_t>();
      const auto len = entry.at("byte_len").get<std::uint64_t>();
      if (len != nn::shape_numel(t.shape) * 4 || offset > blob.size() || len > blob.size() - offset) {
        throw ParseError("checkpoint tensor '" + t.name + "' has an inconsistent byte range");
      }
      t.data.resize(len / 4);
      for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = get_f32_le(blob.data() + offset + 4 * i);
      data.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint tensor table: ") + e.what());
  }
  return data;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  const auto bytes = encode_checkpoint(data);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint '" + path.string() + "' does not exist");
  return decode_checkpoint(read_file_bytes(path));
}

CheckpointData snapshot(SiamesePair<float>& pair) {
  CheckpointData data;
  ModelConfig cfg = pair.ground.config;
  cfg.aerial_hw = pair.aerial.config.input_hw;
  data.config["model"] = cfg;
  for (const auto& p : pair.parameters()) {
    data.tensors.push_back({p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
  }
  for (const auto& b : pair.buffers()) data.tensors.push_back({b.name, {b.values->size()}, *b.values});
  return data;
}

void restore(SiamesePair<float>& pair, const CheckpointData& data) {
  for (auto& p : pair.parameters()) {
    const auto& rec = data.at(p.name);
    if (rec.shape != p.tensor.shape()) {
      throw DimensionError("checkpoint tensor '" + p.name + "' has shape " + nn::shape_str(rec.shape) +
                           ", model expects " + nn::shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    std::copy(rec.data.begin(), rec.data.end(), dst.begin());
  }
  for (auto& b : pair.buffers()) {
    const auto& rec = data.at(b.name);
    if (rec.data.size() != b.values->size()) throw DimensionError("checkpoint buffer '" + b.name + "' size mismatch");
    *b.values = rec.data;
  }
}

SiamesePair<float> load_siamese(const CheckpointData& data) {
  if (!data.config.contains("model")) throw ParseError("checkpoint config has no 'model' section");
  const auto cfg = data.config["model"].get<ModelConfig>();
  auto pair = init_siamese<float>(cfg, 0);
  restore(pair, data);
  return pair;
}

}  // namespace saig::model
