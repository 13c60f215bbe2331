#pragma once

#include "sculpt/core.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace sculpt {

// Interleaved H x W x channels image with values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<double> pixels;
  std::string source_id;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  double& at(int y, int x, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

// 8-bit PNG in, RGB out (alpha composited over white, gray expanded).
Image read_png(const std::filesystem::path& path);
// Writes 1 (gray), 3 (RGB) or 4 (RGBA) channel images, values clamped and rounded.
void write_png(const std::filesystem::path& path, const Image& image);

// Rec. 601 luma, one channel. One-channel inputs are returned as is.
Image luminance(const Image& image);

Image crop(const Image& image, int x0, int y0, int width, int height);

// Bilinear with half-pixel centers and clamped borders.
Image resize_bilinear(const Image& image, int width, int height);

double mean_abs_difference(const Image& a, const Image& b);

}  // namespace sculpt
