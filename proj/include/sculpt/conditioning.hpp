#pragma once

// Input preparation: background snap, foreground crop and resize with a
// replayable transform record; pluggable edge extractors; the reference
// patch embedder.

#include "sculpt/condition.hpp"
#include "sculpt/image.hpp"

#include <functional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace sculpt {

// RGB, at least 8x8, values in [0, 1]. ContractViolation otherwise.
void validate_input_image(const Image& image);

struct BackgroundOp {
  double threshold = 0.95;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> mask;  // 1 where the pixel was snapped to white

  std::uint64_t mask_id() const;
};

struct CropOp {
  int x = 0;
  int y = 0;
  int side = 0;
  bool center_fallback = false;  // no foreground was found
};

struct ResizeOp {
  int from_width = 0;
  int from_height = 0;
  int to_width = 0;
  int to_height = 0;
};

using TransformOp = std::variant<BackgroundOp, CropOp, ResizeOp>;

std::string op_name(const TransformOp& op);

struct TransformRecord {
  int input_width = 0;
  int input_height = 0;
  std::vector<TransformOp> ops;

  std::vector<std::string> op_names() const;
};

struct PreprocessOptions {
  int resolution = 128;
  double background_threshold = 0.95;
  double crop_margin = 1.2;  // crop side relative to the larger foreground extent
};

struct Preprocessed {
  Image image;
  TransformRecord record;
};

// Pixels with luminance >= threshold snap to white (recorded only if any
// changed); a square crop around the foreground (recorded unless it is the
// whole image; an empty foreground falls back to a recorded center crop);
// a bilinear resize to resolution^2 (always recorded).
Preprocessed preprocess(const Image& image, const PreprocessOptions& options = {});

// Re-applies the recorded ops to an image of the recorded input size. On
// one-channel maps (edge maps) the background op zeroes the snapped pixels.
Image replay(const TransformRecord& record, const Image& image);

using EdgeExtractor = std::function<Image(const Image&)>;

// Normalized Sobel gradient magnitude of the luminance, replicate border.
// Output is one channel in [0, 1]; all zero for a constant image.
Image sobel_edges(const Image& image);

class EdgeRegistry {
 public:
  static EdgeRegistry& instance();
  void add(std::string id, EdgeExtractor extractor);
  // ConfigError listing the registered ids if `id` is unknown.
  const EdgeExtractor& get(std::string_view id) const;
  std::vector<std::string> ids() const;

 private:
  EdgeRegistry();
  std::vector<std::pair<std::string, EdgeExtractor>> extractors_;
};

Image extract_edges(const Image& image, std::string_view extractor = "sobel");

struct EmbedderConfig {
  int resolution = 128;
  int patch = 16;
  int condition_dim = 32;
  std::uint64_t seed = 7;
  bool bias = true;
};

// Patchify into (resolution / patch)^2 tokens, row-major over patches, each
// flattened (y, x, channel); then tokens = patches * W + b. One-channel
// images are replicated to three channels first.
class ReferenceEmbedder {
 public:
  explicit ReferenceEmbedder(const EmbedderConfig& config);

  ConditionEmbedding embed(const Image& image, ConditionOrigin origin) const;
  Matrix patchify(const Image& image) const;  // [T, 3 * patch^2]

  const EmbedderConfig& config() const { return config_; }
  const Matrix& projection() const { return projection_; }  // [3 * patch^2, D]
  const Matrix& bias() const { return bias_; }              // [1, D]
  int tokens() const { return (config_.resolution / config_.patch) * (config_.resolution / config_.patch); }

 private:
  EmbedderConfig config_;
  Matrix projection_;
  Matrix bias_;
};

}  // namespace sculpt
