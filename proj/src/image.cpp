#include "sculpt/image.hpp"

#include <algorithm>
#include <cmath>

#include <png.h>

namespace sculpt {

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw ConfigError("cannot read PNG " + path.string() + ": " + png.message);
  png.format = PNG_FORMAT_RGBA;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&png);
    throw ConfigError("cannot decode PNG " + path.string() + ": " + png.message);
  }

  Image out(static_cast<int>(png.width), static_cast<int>(png.height), 3);
  out.source_id = path.filename().string();
  for (std::size_t i = 0; i < static_cast<std::size_t>(out.width) * out.height; ++i) {
    const double alpha = buffer[4 * i + 3] / 255.0;
    for (int c = 0; c < 3; ++c)
      out.pixels[3 * i + static_cast<std::size_t>(c)] = buffer[4 * i + static_cast<std::size_t>(c)] / 255.0 * alpha + (1.0 - alpha);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  switch (image.channels) {
    case 1: png.format = PNG_FORMAT_GRAY; break;
    case 3: png.format = PNG_FORMAT_RGB; break;
    case 4: png.format = PNG_FORMAT_RGBA; break;
    default: throw ContractViolation("write_png supports 1, 3 or 4 channels");
  }
  std::vector<png_byte> buffer(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), buffer.begin(), [](double v) {
    return static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  });
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr))
    throw PipelineError("cannot write PNG " + path.string() + ": " + png.message);
}

Image luminance(const Image& image) {
  if (image.channels == 1) return image;
  require(image.channels >= 3, "luminance needs an RGB image");
  Image out(image.width, image.height, 1);
  out.source_id = image.source_id;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      out.at(y, x) = 0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) + 0.114 * image.at(y, x, 2);
  return out;
}

Image crop(const Image& image, int x0, int y0, int width, int height) {
  require(x0 >= 0 && y0 >= 0 && width >= 1 && height >= 1 && x0 + width <= image.width &&
              y0 + height <= image.height,
          "crop box outside the image");
  Image out(width, height, image.channels);
  out.source_id = image.source_id;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(y0 + y, x0 + x, c);
  return out;
}

namespace {

struct Tap {
  int i0, i1;
  double f;
};

std::vector<Tap> taps(int in, int out) {
  std::vector<Tap> t(static_cast<std::size_t>(out));
  for (int o = 0; o < out; ++o) {
    const double src = std::clamp((o + 0.5) * in / out - 0.5, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    t[static_cast<std::size_t>(o)] = Tap{i0, std::min(i0 + 1, in - 1), src - i0};
  }
  return t;
}

}  // namespace

Image resize_bilinear(const Image& image, int width, int height) {
  require(width >= 1 && height >= 1, "resize target must be positive");
  if (width == image.width && height == image.height) return image;
  const auto tx = taps(image.width, width);
  const auto ty = taps(image.height, height);
  Image out(width, height, image.channels);
  out.source_id = image.source_id;
  for (int y = 0; y < height; ++y) {
    const auto& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < width; ++x) {
      const auto& b = tx[static_cast<std::size_t>(x)];
      for (int c = 0; c < image.channels; ++c) {
        const double top = image.at(a.i0, b.i0, c) * (1 - b.f) + image.at(a.i0, b.i1, c) * b.f;
        const double bottom = image.at(a.i1, b.i0, c) * (1 - b.f) + image.at(a.i1, b.i1, c) * b.f;
        out.at(y, x, c) = top * (1 - a.f) + bottom * a.f;
      }
    }
  }
  return out;
}

double mean_abs_difference(const Image& a, const Image& b) {
  require(a.same_shape(b), "mean_abs_difference: images differ in shape");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) sum += std::abs(a.pixels[i] - b.pixels[i]);
  return a.pixels.empty() ? 0.0 : sum / static_cast<double>(a.pixels.size());
}

}  // namespace sculpt
