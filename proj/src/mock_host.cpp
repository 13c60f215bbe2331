#include "sculpt/mock_host.hpp"

#include <cmath>

namespace sculpt {

namespace {

ModelShape shape_of(const MockHostConfig& c, int depth) {
  return ModelShape{c.channels, c.channels, c.heads, depth, c.condition_dim};
}

}  // namespace

MockUNetHost::MockUNetHost(const MockHostConfig& config)
    : config_(config),
      encoder_(VelocityModel::seeded(1, shape_of(config, 2), derive_seed(config.weights_seed, "encoder"), "enc.")),
      unet_(VelocityModel::seeded(2, shape_of(config, 2 * config.levels + 1),
                                  derive_seed(config.weights_seed, "unet"), "unet.")) {
  require(config.levels >= 1, "mock host needs at least one level");
  stage1_names_ = {"encoder.0.attn", "encoder.1.attn"};
  for (int i = 0; i < config.levels; ++i) stage2_names_.push_back("down." + std::to_string(i) + ".attn");
  stage2_names_.push_back("mid.attn");
  for (int i = 0; i < config.levels; ++i) stage2_names_.push_back("up." + std::to_string(i) + ".attn");

  Rng rng(derive_seed(config.weights_seed, "readouts"));
  const double sc = 1.0 / std::sqrt(static_cast<double>(config.channels));
  occupancy_weight_ = normal_matrix(rng, config.channels, 1, sc);
  color_weight_ = normal_matrix(rng, config.channels, 3, sc);
}

HostSpec MockUNetHost::spec() const {
  return HostSpec{"mock-unet", config_.grid_resolution, config_.channels, config_.condition_dim,
                  SiteLayout{static_cast<int>(stage1_names_.size()), static_cast<int>(stage2_names_.size())}};
}

std::vector<SiteDescriptor> MockUNetHost::attention_sites() const {
  std::vector<SiteDescriptor> out;
  for (std::size_t i = 0; i < stage1_names_.size(); ++i)
    out.push_back({stage1_names_[i], 1, static_cast<int>(i), &encoder_.blocks()[i].self_attn});
  for (std::size_t i = 0; i < stage2_names_.size(); ++i)
    out.push_back({stage2_names_[i], 2, static_cast<int>(i), &unet_.blocks()[i].self_attn});
  return out;
}

std::vector<Matrix> MockUNetHost::velocity(int stage, std::span<const StreamInput> streams, double t,
                                           SiteDispatch& dispatch) const {
  require(stage == 1 || stage == 2, "stage must be 1 or 2");
  const auto sites = attention_sites();
  if (stage == 1) {
    auto hidden = encoder_.embed_streams(streams, t);
    for (std::size_t i = 0; i < stage1_names_.size(); ++i) encoder_.blocks()[i].apply(sites[i], hidden, streams, dispatch);
    return encoder_.read_out(hidden);
  }

  const std::size_t base = stage1_names_.size();
  const auto levels = static_cast<std::size_t>(config_.levels);
  auto hidden = unet_.embed_streams(streams, t);
  std::vector<std::vector<Matrix>> skips;
  for (std::size_t i = 0; i < levels; ++i) {
    unet_.blocks()[i].apply(sites[base + i], hidden, streams, dispatch);
    skips.push_back(hidden);
  }
  unet_.blocks()[levels].apply(sites[base + levels], hidden, streams, dispatch);
  for (std::size_t i = 0; i < levels; ++i) {
    const auto& skip = skips[levels - 1 - i];
    for (std::size_t s = 0; s < hidden.size(); ++s) hidden[s] = 0.5 * (hidden[s] + skip[s]);
    unet_.blocks()[levels + 1 + i].apply(sites[base + levels + 1 + i], hidden, streams, dispatch);
  }
  return unet_.read_out(hidden);
}

Vector MockUNetHost::occupancy_logits(const Matrix& dense_features) const {
  return (dense_features * occupancy_weight_).col(0);
}

Matrix MockUNetHost::voxel_colors(const Matrix& sparse_features) const {
  return (sparse_features * color_weight_).unaryExpr([](double x) { return sigmoid(x); });
}

}  // namespace sculpt
