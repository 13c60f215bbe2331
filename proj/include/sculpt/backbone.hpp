#pragma once

// Desk-scale two-stage rectified-flow backbone.
//
// Stage 1 denoises a dense R^3 grid of patch features; the result is decoded
// to a set of occupied voxels. Stage 2 denoises one feature row per occupied
// voxel. Both stages integrate x_{t-dt} = x_t - v(c, x_t, t) dt from t = 1 to
// t = 0 with a transformer velocity model whose self-attention sites are
// routed through a SiteDispatch (see hooks.hpp).

#include "sculpt/condition.hpp"
#include "sculpt/hooks.hpp"

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sculpt {

using Coord = std::array<int, 3>;

// Patch index of (x, y, z) in a grid of side `resolution`: (x * R + y) * R + z.
int coord_index(const Coord& c, int resolution);
Coord index_coord(int index, int resolution);
std::vector<Coord> dense_coords(int resolution);

struct DenseLatent {
  int resolution = 0;
  Matrix features;  // [R^3, C]
  double timestep = 1.0;

  void validate() const;
};

struct SparseLatent {
  int resolution = 0;
  std::vector<Coord> coords;  // [L] unique, each component in [0, R)
  Matrix features;            // [L, C]
  double timestep = 1.0;

  void validate() const;
};

struct TimeSchedule {
  int num_steps = 0;
  double dt = 0.0;
  std::vector<double> timesteps;  // num_steps + 1 values, 1 down to 0

  static TimeSchedule uniform(int num_steps);
};

// features - velocity * dt; timestep decremented by dt (snapped to 0 when
// within 1e-9). `step` is only used in error messages.
DenseLatent euler_step(const DenseLatent& latent, const Matrix& velocity, double dt, int step = -1);
SparseLatent euler_step(const SparseLatent& latent, const Matrix& velocity, double dt, int step = -1);

// v_uncond + scale * (v_cond - v_uncond). scale == 1 returns v_cond as is.
Matrix cfg_velocity(const Matrix& v_cond, const Matrix& v_uncond, double scale);

struct ModelShape {
  int latent_channels = 32;
  int channels = 32;
  int heads = 4;
  int depth = 4;
  int condition_dim = 32;

  void validate() const;
};

// One stream's input to a velocity-model forward pass.
struct StreamInput {
  BranchRole role = BranchRole::content;
  bool conditional = true;
  const Matrix* latent = nullptr;  // [N, latent_channels]
  std::span<const Coord> coords;   // N grid positions
  const ConditionEmbedding* condition = nullptr;
};

Matrix layer_norm(const Matrix& x, double eps = 1e-6);
Matrix silu(const Matrix& x);
// Sinusoidal features of each coordinate axis, [N, channels].
Matrix position_embedding(std::span<const Coord> coords, int channels);
RowVector timestep_features(double t, int channels);

// Self-attention site, conditioning cross-attention and FFN, pre-norm with
// residual adds. Biases are stored as [1, n] matrices.
struct TransformerBlock {
  SiteWeights self_attn;
  Matrix cond_query, cond_key, cond_value, cond_output;  // [C,C] [D,C] [D,C] [C,C]
  Matrix ffn_in, ffn_in_bias, ffn_out, ffn_out_bias;     // [C,2C] [1,2C] [2C,C] [1,C]

  static TransformerBlock seeded(Rng& rng, int channels, int condition_dim, int heads);
  static TransformerBlock zeros(int channels, int condition_dim, int heads);

  // Advances every stream's hidden state through this block in lock-step.
  void apply(const SiteDescriptor& site, std::vector<Matrix>& hidden,
             std::span<const StreamInput> streams, SiteDispatch& dispatch) const;

  void visit(const std::string& prefix, const std::function<void(const std::string&, Matrix&)>& fn);
};

class VelocityModel {
 public:
  static VelocityModel seeded(int stage, const ModelShape& shape, std::uint64_t seed,
                              std::string site_prefix);
  static VelocityModel zeros(int stage, const ModelShape& shape, std::string site_prefix);

  const ModelShape& shape() const { return shape_; }
  int stage() const { return stage_; }
  std::vector<SiteDescriptor> sites() const;

  // One velocity matrix per stream, each [N_i, latent_channels].
  std::vector<Matrix> forward(std::span<const StreamInput> streams, double t, SiteDispatch& dispatch) const;

  void visit(const std::string& prefix, const std::function<void(const std::string&, Matrix&)>& fn);

  // Shared by hosts with other block layouts.
  std::vector<Matrix> embed_streams(std::span<const StreamInput> streams, double t) const;
  std::vector<Matrix> read_out(const std::vector<Matrix>& hidden) const;
  const std::vector<TransformerBlock>& blocks() const { return blocks_; }

 private:
  VelocityModel(int stage, ModelShape shape, std::string prefix);

  int stage_ = 1;
  ModelShape shape_;
  std::string prefix_;
  Matrix input_weight, input_bias;                 // [Cl, C] [1, C]
  Matrix time_weight1, time_bias1, time_weight2, time_bias2;
  Matrix output_weight, output_bias;               // [C, Cl] [1, Cl]
  std::vector<TransformerBlock> blocks_;
};

struct HostSpec {
  std::string name;
  int grid_resolution = 8;
  int channels = 32;       // latent channels
  int condition_dim = 32;
  SiteLayout layout;
};

// A two-stage flow model that exposes its self-attention sites.
class FlowHost {
 public:
  virtual ~FlowHost() = default;
  virtual HostSpec spec() const = 0;
  // Site descriptors point into the host; they stay valid while the host lives.
  virtual std::vector<SiteDescriptor> attention_sites() const = 0;
  virtual std::vector<Matrix> velocity(int stage, std::span<const StreamInput> streams, double t,
                                       SiteDispatch& dispatch) const = 0;
  // Per-patch occupancy logit of a stage-1 latent, [R^3].
  virtual Vector occupancy_logits(const Matrix& dense_features) const = 0;
  // Per-voxel RGB in [0, 1] of a stage-2 latent, [L, 3].
  virtual Matrix voxel_colors(const Matrix& sparse_features) const = 0;
};

struct ToyBackboneConfig {
  int grid_resolution = 8;
  int channels = 32;
  int heads = 4;
  int depth = 4;
  int condition_dim = 32;
  std::uint64_t weights_seed = 20250917;
};

// Reference backbone: dense transformer for stage 1, the same architecture
// over voxel tokens for stage 2, linear occupancy and color readouts.
class ToyFlowHost final : public FlowHost {
 public:
  static ToyFlowHost seeded(const ToyBackboneConfig& config);
  // Every parameter zero: the velocity is identically zero.
  static ToyFlowHost zeros(const ToyBackboneConfig& config);

  ToyFlowHost(ToyFlowHost&&) = default;
  ToyFlowHost& operator=(ToyFlowHost&&) = default;

  HostSpec spec() const override;
  std::vector<SiteDescriptor> attention_sites() const override;
  std::vector<Matrix> velocity(int stage, std::span<const StreamInput> streams, double t,
                               SiteDispatch& dispatch) const override;
  Vector occupancy_logits(const Matrix& dense_features) const override;
  Matrix voxel_colors(const Matrix& sparse_features) const override;

  const ToyBackboneConfig& config() const { return config_; }
  const VelocityModel& model(int stage) const { return stage == 1 ? structure_ : latent_; }
  const Matrix& occupancy_weight() const { return occupancy_weight_; }
  double occupancy_bias() const { return occupancy_bias_(0, 0); }
  const Matrix& color_weight() const { return color_weight_; }
  const Matrix& color_bias() const { return color_bias_; }

  // Named parameter walk in a fixed order (used by the weight archive).
  void visit(const std::function<void(const std::string&, Matrix&)>& fn);

 private:
  ToyFlowHost(ToyBackboneConfig config, VelocityModel structure, VelocityModel latent);

  ToyBackboneConfig config_;
  VelocityModel structure_;
  VelocityModel latent_;
  Matrix occupancy_weight_;  // [C, 1]
  Matrix occupancy_bias_;    // [1, 1]
  Matrix color_weight_;      // [C, 3]
  Matrix color_bias_;        // [1, 3]
};

// Occupied voxels: sigmoid(logit) > threshold. Never empty: if nothing
// passes, the single highest-scoring voxel (lowest index on ties) is kept.
std::vector<Coord> decode_sparse_structure(const FlowHost& host, const DenseLatent& latent,
                                           double threshold = 0.5);

// Gathers the rows of a dense [R^3, C] tensor at the given voxels.
Matrix gather_rows(const Matrix& dense, std::span<const Coord> coords, int resolution);

struct BranchState {
  BranchRole role = BranchRole::content;
  Matrix features;
  std::vector<Coord> coords;
  const ConditionEmbedding* condition = nullptr;
};

struct DenoiseSettings {
  int stage = 1;
  const TimeSchedule* schedule = nullptr;
  double cfg_scale = 1.0;
  const ConditionEmbedding* null_condition = nullptr;
  // Add a content-preserve stream, copied from the content branch at the
  // start of every step.
  bool content_preserve = false;
};

// Lock-step Euler integration of all branches from t = 1 to t = 0. Each
// branch gets its own classifier-free-guidance pair (conditional +
// unconditional stream). Errors are rethrown with stage/step/branch context.
void denoise_branches(const FlowHost& host, std::vector<BranchState>& branches,
                      const DenoiseSettings& settings, SiteDispatch& dispatch);

struct SamplerOptions {
  double cfg_scale = 1.0;
  // Defaults to all-zero tokens shaped like the condition.
  const ConditionEmbedding* null_condition = nullptr;
  // When set, receives the protocol used for the run (for its counters).
  HookProtocol* hooks_out = nullptr;
};

// Single-branch samplers. The processor is installed on every
// self-attention site of the host before sampling.
DenseLatent sample_stage1(const FlowHost& host, const ConditionEmbedding& condition,
                          const DenseLatent& noise, const TimeSchedule& schedule,
                          AttentionProcessor& processor, const SamplerOptions& options = {});

SparseLatent sample_stage2(const FlowHost& host, const ConditionEmbedding& condition,
                           std::span<const Coord> voxels, const SparseLatent& noise,
                           const TimeSchedule& schedule, AttentionProcessor& processor,
                           const SamplerOptions& options = {});

}  // namespace sculpt
