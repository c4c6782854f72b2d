#pragma once

#include <filesystem>

#include "saig/data/scene.hpp"

namespace saig::data {

// 8-bit RGB PNG. Values are rounded to the nearest k/255; decoding maps back
// to k/255, so quantized images round-trip exactly.
void write_png(const Image& image, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);

}  // namespace saig::data
