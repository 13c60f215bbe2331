#include "sculpt/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace sculpt {

Image synthetic_object(std::uint64_t seed, const SyntheticOptions& options) {
  require(options.width >= 8 && options.height >= 8, "synthetic images must be at least 8x8");
  Rng rng(seed);
  const double side = std::min(options.width, options.height);
  const double cx = options.width * (0.5 + 0.1 * (rng.uniform() - 0.5));
  const double cy = options.height * (0.5 + 0.1 * (rng.uniform() - 0.5));

  struct Blob {
    double x, y, sx, sy, amount;
    std::array<double, 3> color;
  };
  std::vector<Blob> blobs;
  for (int b = 0; b < options.blobs; ++b) {
    Blob blob;
    blob.x = cx + (rng.uniform() - 0.5) * 0.24 * side;
    blob.y = cy + (rng.uniform() - 0.5) * 0.24 * side;
    blob.sx = (options.min_sigma + (options.max_sigma - options.min_sigma) * rng.uniform()) * side;
    blob.sy = (options.min_sigma + (options.max_sigma - options.min_sigma) * rng.uniform()) * side;
    blob.amount = 0.5 + 0.4 * rng.uniform();
    for (double& c : blob.color) c = 0.6 * rng.uniform();
    blobs.push_back(blob);
  }
  const double period = side * (0.08 + 0.06 * rng.uniform());

  Image out(options.width, options.height, 3, 1.0);
  out.source_id = "synthetic-" + std::to_string(seed);
  for (int y = 0; y < options.height; ++y)
    for (int x = 0; x < options.width; ++x) {
      const double stripe = options.stripes ? 0.75 + 0.25 * std::sin(2.0 * M_PI * (x + y) / period) : 1.0;
      for (const auto& b : blobs) {
        const double dx = (x + 0.5 - b.x) / b.sx;
        const double dy = (y + 0.5 - b.y) / b.sy;
        const double a = b.amount * stripe * std::exp(-0.5 * (dx * dx + dy * dy));
        for (int c = 0; c < 3; ++c) out.at(y, x, c) -= a * (1.0 - b.color[static_cast<std::size_t>(c)]);
      }
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = std::clamp(out.at(y, x, c), 0.0, 1.0);
    }
  return out;
}

DemoInputs demo_inputs(std::uint64_t seed) {
  SyntheticOptions content;
  content.width = 160;
  content.height = 128;
  SyntheticOptions style;
  style.blobs = 4;
  style.stripes = true;
  return {synthetic_object(derive_seed(seed, "content"), content),
          synthetic_object(derive_seed(seed, "style"), style)};
}

}  // namespace sculpt
