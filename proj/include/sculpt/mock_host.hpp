#pragma once

// A second host with a different site layout, used to check that the hook
// protocol is backbone-agnostic: stage 1 is a two-block encoder, stage 2 a
// down / mid / up stack with skip connections.

#include "sculpt/backbone.hpp"

namespace sculpt {

struct MockHostConfig {
  int grid_resolution = 6;
  int channels = 16;
  int heads = 2;
  int condition_dim = 32;
  int levels = 2;  // down blocks = up blocks = levels
  std::uint64_t weights_seed = 4242;
};

class MockUNetHost final : public FlowHost {
 public:
  explicit MockUNetHost(const MockHostConfig& config);

  HostSpec spec() const override;
  std::vector<SiteDescriptor> attention_sites() const override;
  std::vector<Matrix> velocity(int stage, std::span<const StreamInput> streams, double t,
                               SiteDispatch& dispatch) const override;
  Vector occupancy_logits(const Matrix& dense_features) const override;
  Matrix voxel_colors(const Matrix& sparse_features) const override;

 private:
  MockHostConfig config_;
  VelocityModel encoder_;  // stage 1
  VelocityModel unet_;     // stage 2: blocks [down..., mid, up...]
  std::vector<std::string> stage1_names_;
  std::vector<std::string> stage2_names_;
  Matrix occupancy_weight_, color_weight_;
};

}  // namespace sculpt
