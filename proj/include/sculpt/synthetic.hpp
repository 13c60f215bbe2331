#pragma once

// Seeded synthetic inputs: soft colored blobs on a white background, with
// optional stripes for style images.

#include "sculpt/image.hpp"

namespace sculpt {

struct SyntheticOptions {
  int width = 128;
  int height = 128;
  int blobs = 3;
  double min_sigma = 0.06;  // blob radius range, relative to the shorter side
  double max_sigma = 0.12;
  bool stripes = false;
};

Image synthetic_object(std::uint64_t seed, const SyntheticOptions& options = {});

struct DemoInputs {
  Image content;
  Image style;
};

DemoInputs demo_inputs(std::uint64_t seed);

}  // namespace sculpt
