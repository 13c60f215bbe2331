#pragma once

// Flat named-tensor archive for the toy backbone: weights.json (format,
// hyperparameters, seed, and per-tensor name/shape/offset/count) next to
// weights.bin (float64 little-endian, tensors back to back).

#include "sculpt/backbone.hpp"

#include <filesystem>

namespace sculpt {

void save_weights(ToyFlowHost& host, const std::filesystem::path& dir);

// Rebuilds the host from an archive. Missing or mis-shaped tensors are a
// ConfigError naming the tensor.
ToyFlowHost load_weights(const std::filesystem::path& dir);

}  // namespace sculpt
