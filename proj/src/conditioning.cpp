#include "sculpt/conditioning.hpp"

#include <algorithm>
#include <cmath>

namespace sculpt {

ConditionEmbedding mean_embedding(std::span<const ConditionEmbedding> embeddings) {
  require(!embeddings.empty(), "mean_embedding needs at least one embedding");
  Matrix sum = Matrix::Zero(embeddings[0].tokens.rows(), embeddings[0].tokens.cols());
  for (const auto& e : embeddings) {
    require(e.tokens.rows() == sum.rows() && e.tokens.cols() == sum.cols(),
            "mean_embedding: embeddings differ in shape");
    sum += e.tokens;
  }
  return {sum / static_cast<double>(embeddings.size()), embeddings[0].origin};
}

void validate_input_image(const Image& image) {
  require(image.channels == 3, "input image must be RGB");
  require(image.width >= 8 && image.height >= 8, "input image must be at least 8x8");
  require(image.pixels.size() == static_cast<std::size_t>(image.width) * image.height * 3,
          "input image buffer does not match its size");
  for (double v : image.pixels) require(v >= 0.0 && v <= 1.0, "input pixels must lie in [0, 1]");
}

std::uint64_t BackgroundOp::mask_id() const {
  return fnv1a(std::string_view(reinterpret_cast<const char*>(mask.data()), mask.size()));
}

std::string op_name(const TransformOp& op) {
  return std::visit(
      [](const auto& o) -> std::string {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, BackgroundOp>) return "background";
        if constexpr (std::is_same_v<T, CropOp>) return "crop";
        return "resize";
      },
      op);
}

std::vector<std::string> TransformRecord::op_names() const {
  std::vector<std::string> out;
  for (const auto& op : ops) out.push_back(op_name(op));
  return out;
}

namespace {

// RGB: snapped pixels become white. One-channel maps: snapped pixels become
// zero, i.e. removed background carries no edges.
Image apply_background(const BackgroundOp& op, const Image& image) {
  Image out = image;
  const double fill = image.channels == 1 ? 0.0 : 1.0;
  const auto ch = static_cast<std::size_t>(out.channels);
  for (std::size_t i = 0; i < op.mask.size(); ++i)
    if (op.mask[i])
      for (std::size_t c = 0; c < ch; ++c) out.pixels[i * ch + c] = fill;
  return out;
}

Image apply_op(const TransformOp& op, const Image& image) {
  if (const auto* bg = std::get_if<BackgroundOp>(&op)) {
    require(image.width == bg->width && image.height == bg->height, "background mask size mismatch");
    return apply_background(*bg, image);
  }
  if (const auto* c = std::get_if<CropOp>(&op)) return crop(image, c->x, c->y, c->side, c->side);
  const auto& r = std::get<ResizeOp>(op);
  require(image.width == r.from_width && image.height == r.from_height, "resize input size mismatch");
  return resize_bilinear(image, r.to_width, r.to_height);
}

}  // namespace

Preprocessed preprocess(const Image& image, const PreprocessOptions& options) {
  validate_input_image(image);
  require(options.resolution >= 1, "model resolution must be positive");
  const int w = image.width;
  const int h = image.height;
  Preprocessed out{image, TransformRecord{w, h, {}}};

  const Image lum = luminance(image);
  BackgroundOp bg{options.background_threshold, w, h, std::vector<std::uint8_t>(lum.pixels.size(), 0)};
  bool changed = false;
  for (std::size_t i = 0; i < lum.pixels.size(); ++i) {
    if (lum.pixels[i] < options.background_threshold) continue;
    bg.mask[i] = 1;
    for (int c = 0; c < 3; ++c) changed |= image.pixels[3 * i + static_cast<std::size_t>(c)] != 1.0;
  }
  if (changed) {
    out.image = apply_background(bg, out.image);
    out.record.ops.emplace_back(std::move(bg));
  }

  int x_min = w, y_min = h, x_max = -1, y_max = -1;
  const Image snapped = luminance(out.image);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (snapped.at(y, x) < options.background_threshold) {
        x_min = std::min(x_min, x);
        x_max = std::max(x_max, x);
        y_min = std::min(y_min, y);
        y_max = std::max(y_max, y);
      }

  const int limit = std::min(w, h);
  CropOp box;
  if (x_max < 0) {
    box = CropOp{(w - limit) / 2, (h - limit) / 2, limit, true};
  } else {
    const int extent = std::max(x_max - x_min + 1, y_max - y_min + 1);
    box.side = std::min(limit, static_cast<int>(std::ceil(options.crop_margin * extent)));
    const double cx = 0.5 * (x_min + x_max + 1);
    const double cy = 0.5 * (y_min + y_max + 1);
    box.x = std::clamp(static_cast<int>(std::lround(cx - 0.5 * box.side)), 0, w - box.side);
    box.y = std::clamp(static_cast<int>(std::lround(cy - 0.5 * box.side)), 0, h - box.side);
  }
  if (box.center_fallback || box.side != w || box.side != h) {
    out.image = crop(out.image, box.x, box.y, box.side, box.side);
    out.record.ops.emplace_back(box);
  }

  ResizeOp resize{out.image.width, out.image.height, options.resolution, options.resolution};
  out.image = resize_bilinear(out.image, resize.to_width, resize.to_height);
  out.record.ops.emplace_back(resize);
  return out;
}

Image replay(const TransformRecord& record, const Image& image) {
  if (image.width != record.input_width || image.height != record.input_height)
    throw ContractViolation("replay expects a " + std::to_string(record.input_width) + "x" +
                            std::to_string(record.input_height) + " image, got " + std::to_string(image.width) +
                            "x" + std::to_string(image.height));
  Image out = image;
  for (const auto& op : record.ops) out = apply_op(op, out);
  return out;
}

Image sobel_edges(const Image& image) {
  const Image lum = luminance(image);
  const int w = lum.width;
  const int h = lum.height;
  auto px = [&](int y, int x) { return lum.at(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1)); };

  Image out(w, h, 1);
  out.source_id = image.source_id;
  double peak = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
      const double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
      out.at(y, x) = std::hypot(gx, gy);
      peak = std::max(peak, out.at(y, x));
    }
  if (peak > 0.0)
    for (double& v : out.pixels) v /= peak;
  return out;
}

EdgeRegistry::EdgeRegistry() { extractors_.emplace_back("sobel", sobel_edges); }

EdgeRegistry& EdgeRegistry::instance() {
  static EdgeRegistry registry;
  return registry;
}

void EdgeRegistry::add(std::string id, EdgeExtractor extractor) {
  for (auto& [name, fn] : extractors_)
    if (name == id) {
      fn = std::move(extractor);
      return;
    }
  extractors_.emplace_back(std::move(id), std::move(extractor));
}

const EdgeExtractor& EdgeRegistry::get(std::string_view id) const {
  for (const auto& [name, fn] : extractors_)
    if (name == id) return fn;
  std::string known;
  for (const auto& name : ids()) known += (known.empty() ? "" : ", ") + name;
  throw ConfigError("unknown edge extractor '" + std::string(id) + "' (registered: " + known + ")");
}

std::vector<std::string> EdgeRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [name, fn] : extractors_) out.push_back(name);
  return out;
}

Image extract_edges(const Image& image, std::string_view extractor) {
  return EdgeRegistry::instance().get(extractor)(image);
}

ReferenceEmbedder::ReferenceEmbedder(const EmbedderConfig& config) : config_(config) {
  require(config.patch >= 1 && config.resolution % config.patch == 0,
          "model resolution must be divisible by the patch size");
  require(config.condition_dim >= 1, "condition dim must be positive");
  const int in = 3 * config.patch * config.patch;
  Rng rng(config.seed);
  projection_ = normal_matrix(rng, in, config.condition_dim, 1.0 / std::sqrt(static_cast<double>(in)));
  bias_ = config.bias ? normal_matrix(rng, 1, config.condition_dim, 0.1) : Matrix::Zero(1, config.condition_dim);
}

Matrix ReferenceEmbedder::patchify(const Image& image) const {
  if (image.width % config_.patch != 0 || image.height % config_.patch != 0)
    throw ContractViolation("image size " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                            " not divisible by patch " + std::to_string(config_.patch));
  require(image.width == config_.resolution && image.height == config_.resolution,
          "embedder expects a preprocessed image at model resolution");
  require(image.channels == 1 || image.channels == 3, "embedder takes one- or three-channel images");
  const int p = config_.patch;
  const int per_row = image.width / p;
  Matrix out(tokens(), 3 * p * p);
  for (int t = 0; t < out.rows(); ++t) {
    const int py = t / per_row;
    const int px = t % per_row;
    int col = 0;
    for (int y = 0; y < p; ++y)
      for (int x = 0; x < p; ++x)
        for (int c = 0; c < 3; ++c)
          out(t, col++) = image.at(py * p + y, px * p + x, image.channels == 1 ? 0 : c);
  }
  return out;
}

ConditionEmbedding ReferenceEmbedder::embed(const Image& image, ConditionOrigin origin) const {
  Matrix tokens = (patchify(image) * projection_).rowwise() + bias_.row(0);
  return {std::move(tokens), origin};
}

}  // namespace sculpt
