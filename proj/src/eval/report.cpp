#include "saig/eval/report.hpp"

#include <openssl/evp.h>

#include <cstdio>

#include "saig/errors.hpp"

namespace saig::eval {

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  std::string hex(2 * len, '0');
  for (unsigned int i = 0; i < len; ++i) std::snprintf(&hex[2 * i], 3, "%02x", digest[i]);
  return hex;
}

std::string sha256_hex(const std::string& text) {
  return sha256_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

nlohmann::json report_json(const RetrievalReport& report, const nlohmann::json& config,
                           std::span<const std::uint8_t> checkpoint_bytes) {
  auto j = report.to_json();
  j["config_hash"] = sha256_hex(config.dump());
  j["checkpoint_hash"] = sha256_hex(checkpoint_bytes);
  return j;
}

}  // namespace saig::eval
