#include "saig/model/config.hpp"

#include <algorithm>
#include <cctype>

#include "saig/errors.hpp"

namespace saig::model {

ModelConfig ModelConfig::saig_s() {
  ModelConfig c;
  c.variant = Variant::kS;
  c.depth = 11;
  return c;
}

ModelConfig ModelConfig::saig_d() {
  ModelConfig c;
  c.variant = Variant::kD;
  c.depth = 22;
  return c;
}

std::size_t ModelConfig::downsample() const {
  std::size_t f = 1;
  for (auto s : stem_strides) f *= s;
  return f;
}

std::size_t ModelConfig::descriptor_dim() const {
  switch (head) {
    case HeadType::kGap:
      return dim;
    case HeadType::kSmd:
      return smd_k * dim;
    case HeadType::kLocal:
      return local_pool_hw.height * local_pool_hw.width * local_proj_dim;
  }
  return dim;
}

ModelConfig ModelConfig::for_branch(ImageSize hw) const {
  ModelConfig c = *this;
  c.input_hw = hw;
  c.aerial_hw = hw;
  return c;
}

void ModelConfig::validate() const {
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ContractError("model config: dim " + std::to_string(dim) + " not divisible by heads " +
                        std::to_string(heads));
  }
  if (projection_dim != dim) throw ContractError("model config: projection_dim must equal dim");
  if (stem_channels.empty() || stem_channels.size() != stem_strides.size()) {
    throw ContractError("model config: stem_channels and stem_strides must have equal non-zero length");
  }
  if (std::any_of(stem_channels.begin(), stem_channels.end(), [](auto c) { return c == 0; }) ||
      std::any_of(stem_strides.begin(), stem_strides.end(), [](auto s) { return s == 0; })) {
    throw ContractError("model config: stem channels and strides must be positive");
  }
  if (variant == Variant::kS && depth != 11) throw ContractError("model config: variant S requires depth 11");
  if (variant == Variant::kD && depth != 22) throw ContractError("model config: variant D requires depth 22");
  if (head == HeadType::kSmd && smd_k == 0) throw ContractError("model config: smd_k must be >= 1");
  if (head == HeadType::kLocal && (local_proj_dim == 0 || local_pool_hw.height == 0 || local_pool_hw.width == 0)) {
    throw ContractError("model config: local head needs positive pool size and projection");
  }
  token_grid(*this, input_hw);
  token_grid(*this, aerial_hw);
}

TokenGrid token_grid(const ModelConfig& config, ImageSize hw) {
  const std::size_t f = config.downsample();
  if (hw.height == 0 || hw.width == 0 || hw.height % f != 0 || hw.width % f != 0) {
    throw DimensionError("input " + std::to_string(hw.height) + "x" + std::to_string(hw.width) +
                         " is not divisible by the stem factor " + std::to_string(f));
  }
  return {hw.height / f, hw.width / f};
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kS:
      return "S";
    case Variant::kD:
      return "D";
    case Variant::kCustom:
      return "custom";
  }
  return "custom";
}

std::string to_string(HeadType h) {
  switch (h) {
    case HeadType::kGap:
      return "gap";
    case HeadType::kSmd:
      return "smd";
    case HeadType::kLocal:
      return "local";
  }
  return "gap";
}

namespace {
std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}
}  // namespace

Variant parse_variant(const std::string& s) {
  const auto v = lower(s);
  if (v == "s" || v == "saig-s") return Variant::kS;
  if (v == "d" || v == "saig-d") return Variant::kD;
  if (v == "custom") return Variant::kCustom;
  throw ParseError("unknown variant '" + s + "'");
}

HeadType parse_head(const std::string& s) {
  const auto v = lower(s);
  if (v == "gap") return HeadType::kGap;
  if (v == "smd") return HeadType::kSmd;
  if (v == "local") return HeadType::kLocal;
  throw ParseError("unknown head '" + s + "'");
}

void to_json(nlohmann::json& j, const ImageSize& s) { j = nlohmann::json::array({s.height, s.width}); }

void from_json(const nlohmann::json& j, ImageSize& s) {
  if (!j.is_array() || j.size() != 2) throw ParseError("image size must be [height, width]");
  s.height = j[0].get<std::size_t>();
  s.width = j[1].get<std::size_t>();
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"variant", to_string(c.variant)},
                     {"depth", c.depth},
                     {"dim", c.dim},
                     {"heads", c.heads},
                     {"stem_channels", c.stem_channels},
                     {"stem_strides", c.stem_strides},
                     {"projection_dim", c.projection_dim},
                     {"head", to_string(c.head)},
                     {"smd_k", c.smd_k},
                     {"local_pool_hw", c.local_pool_hw},
                     {"local_proj_dim", c.local_proj_dim},
                     {"classifier_classes", c.classifier_classes},
                     {"input_hw", c.input_hw},
                     {"aerial_hw", c.aerial_hw},
                     {"layer_norm_eps", c.layer_norm_eps},
                     {"bn_momentum", c.bn_momentum},
                     {"bn_eps", c.bn_eps}};
}

// Missing keys keep their defaults; present keys must have the right type.
void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw ParseError("model config must be a JSON object");
  try {
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    if (c.variant == Variant::kS) c.depth = 11;
    if (c.variant == Variant::kD) c.depth = 22;
    if (j.contains("depth")) c.depth = j.at("depth").get<std::size_t>();
    if (j.contains("dim")) c.dim = j.at("dim").get<std::size_t>();
    if (j.contains("heads")) c.heads = j.at("heads").get<std::size_t>();
    if (j.contains("stem_channels")) c.stem_channels = j.at("stem_channels").get<std::vector<std::size_t>>();
    if (j.contains("stem_strides")) c.stem_strides = j.at("stem_strides").get<std::vector<std::size_t>>();
    c.projection_dim = j.value("projection_dim", c.dim);
    if (j.contains("head")) c.head = parse_head(j.at("head").get<std::string>());
    if (j.contains("smd_k")) c.smd_k = j.at("smd_k").get<std::size_t>();
    if (j.contains("local_pool_hw")) c.local_pool_hw = j.at("local_pool_hw").get<ImageSize>();
    if (j.contains("local_proj_dim")) c.local_proj_dim = j.at("local_proj_dim").get<std::size_t>();
    if (j.contains("classifier_classes")) c.classifier_classes = j.at("classifier_classes").get<std::size_t>();
    if (j.contains("input_hw")) c.input_hw = j.at("input_hw").get<ImageSize>();
    c.aerial_hw = j.contains("aerial_hw") ? j.at("aerial_hw").get<ImageSize>() : c.input_hw;
    if (j.contains("layer_norm_eps")) c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
    if (j.contains("bn_momentum")) c.bn_momentum = j.at("bn_momentum").get<double>();
    if (j.contains("bn_eps")) c.bn_eps = j.at("bn_eps").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
}

}  // namespace saig::model
