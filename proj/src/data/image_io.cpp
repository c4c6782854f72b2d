#include "saig/data/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace saig::data {

void write_png(const Image& image, const std::filesystem::path& path) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("write_png: image must be [3, H, W]");
  const std::size_t H = image.dim(1), W = image.dim(2), plane = H * W;
  std::vector<png_byte> pixels(plane * 3);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      const double v = std::clamp(static_cast<double>(image[k * plane + i]), 0.0, 1.0);
      pixels[i * 3 + k] = static_cast<png_byte>(std::lround(v * 255.0));
    }
  }
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(W);
  png.height = static_cast<png_uint_32>(H);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw IoError("cannot write PNG '" + path.string() + "': " + msg);
  }
}

Image read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw IoError("cannot read PNG '" + path.string() + "': " + msg);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<png_byte> pixels(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, pixels.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw IoError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  const std::size_t H = png.height, W = png.width, plane = H * W;
  Image img({3, H, W});
  auto dst = img.mutable_data();
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t k = 0; k < 3; ++k) dst[k * plane + i] = static_cast<float>(pixels[i * 3 + k] / 255.0);
  }
  return img;
}

}  // namespace saig::data
