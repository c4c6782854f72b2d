#pragma once

// Binary container shared by model checkpoints, trainer state and descriptor
// indices:
//
//   [u64 little-endian header length L][L bytes of JSON header][float32 LE blob]
//
// The header is {"format_version": 1, "config": {...}, "tensors": [{"name",
// "shape", "byte_offset", "byte_len"}], "state": {...}} where byte offsets are
// relative to the start of the blob and "state" is optional.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "saig/model/saig.hpp"

namespace saig::model {

inline constexpr int kCheckpointFormatVersion = 1;

struct TensorRecord {
  std::string name;
  nn::Shape shape;
  std::vector<float> data;
};

struct CheckpointData {
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json state;  // null when absent
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;
  const TensorRecord& at(const std::string& name) const;  // ParseError if absent
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data);
CheckpointData decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

// Parameters and BN running statistics of both branches, config["model"] set.
CheckpointData snapshot(SiamesePair<float>& pair);

// Overwrites every parameter and buffer of `pair` from `data`; names and
// shapes must match exactly.
void restore(SiamesePair<float>& pair, const CheckpointData& data);

// Rebuilds a pair from config["model"] and restores its tensors.
SiamesePair<float> load_siamese(const CheckpointData& data);

}  // namespace saig::model
