#pragma once

// 8-bit RGB PNG input/output. Images are [1,3,H,W] float tensors in [0,1].

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "freqformer/error.hpp"
#include "freqformer/tensor.hpp"

namespace fqf {

/// Interleaved 8-bit RGB pixels, row-major.
struct Rgb8 {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> pixels;
};

/// Decodes an 8-bit PNG. Gray and palette images are expanded to RGB, an
/// alpha channel is dropped. 16-bit files are rejected.
inline Rgb8 read_png_rgb8(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw IoError("no such file: " + path);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DecodeError("cannot decode " + path + ": " + img.message);
  }
  if (img.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&img);
    throw DecodeError(path + ": 16-bit PNG is not supported, expected 8-bit RGB");
  }
  img.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> rgba(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, rgba.data(), 0, nullptr)) {
    throw DecodeError("cannot decode " + path + ": " + img.message);
  }
  Rgb8 out{img.height, img.width, {}};
  out.pixels.resize(static_cast<std::size_t>(out.height * out.width * 3));
  for (std::size_t p = 0; p < static_cast<std::size_t>(out.height * out.width); ++p)
    for (std::size_t c = 0; c < 3; ++c) out.pixels[p * 3 + c] = rgba[p * 4 + c];
  return out;
}

inline void write_png_rgb8(const Rgb8& image, const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write " + path + ": " + img.message);
  }
}

/// Quantizes one value in [0,1] to 8 bits, rounding half away from zero.
inline std::uint8_t quantize_unit(double v) {
  const double c = std::clamp(v, 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::round(c));
}

inline Tensor<float> rgb8_to_tensor(const Rgb8& im) {
  const std::int64_t H = im.height, W = im.width;
  std::vector<float> v(static_cast<std::size_t>(3 * H * W));
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t p = 0; p < H * W; ++p)
      v[static_cast<std::size_t>(c * H * W + p)] = static_cast<float>(im.pixels[static_cast<std::size_t>(p * 3 + c)]) / 255.0f;
  return Tensor<float>(Shape{1, 3, H, W}, std::move(v));
}

template <class T>
Rgb8 tensor_to_rgb8(const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(0) != 1 || x.dim(1) != 3) {
    throw ShapeError("save_png", "expected [1,3,H,W], got " + x.shape().str());
  }
  const std::int64_t H = x.dim(2), W = x.dim(3);
  Rgb8 im{H, W, std::vector<std::uint8_t>(static_cast<std::size_t>(3 * H * W))};
  const auto d = x.data();
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t p = 0; p < H * W; ++p)
      im.pixels[static_cast<std::size_t>(p * 3 + c)] = quantize_unit(static_cast<double>(d[static_cast<std::size_t>(c * H * W + p)]));
  return im;
}

inline Tensor<float> load_png(const std::string& path) { return rgb8_to_tensor(read_png_rgb8(path)); }

template <class T>
void save_png(const Tensor<T>& image, const std::string& path) {
  write_png_rgb8(tensor_to_rgb8(image), path);
}

}  // namespace fqf
