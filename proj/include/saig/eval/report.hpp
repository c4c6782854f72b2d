#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "json.hpp"
#include "saig/eval/retrieval.hpp"

namespace saig::eval {

// Lower-case hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& text);

// report.to_json() plus "config_hash" (of config.dump()) and "checkpoint_hash".
nlohmann::json report_json(const RetrievalReport& report, const nlohmann::json& config,
                           std::span<const std::uint8_t> checkpoint_bytes);

}  // namespace saig::eval
