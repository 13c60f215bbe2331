#include "sculpt/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace sculpt {

int coord_index(const Coord& c, int resolution) {
  return (c[0] * resolution + c[1]) * resolution + c[2];
}

Coord index_coord(int index, int resolution) {
  return {index / (resolution * resolution), (index / resolution) % resolution, index % resolution};
}

std::vector<Coord> dense_coords(int resolution) {
  std::vector<Coord> out;
  out.reserve(static_cast<std::size_t>(resolution) * resolution * resolution);
  for (int i = 0; i < resolution * resolution * resolution; ++i) out.push_back(index_coord(i, resolution));
  return out;
}

void DenseLatent::validate() const {
  require(resolution >= 1, "dense latent: resolution must be positive");
  require(features.rows() == static_cast<Eigen::Index>(resolution) * resolution * resolution,
          "dense latent: row count must equal R^3");
  require(all_finite(features), "dense latent: features must be finite");
  require(timestep >= -1e-9 && timestep <= 1.0 + 1e-9, "dense latent: timestep outside [0, 1]");
}

void SparseLatent::validate() const {
  require(!coords.empty(), "sparse latent: needs at least one voxel");
  require(features.rows() == static_cast<Eigen::Index>(coords.size()),
          "sparse latent: one feature row per voxel");
  std::set<Coord> seen;
  for (const auto& c : coords) {
    for (int a : c) require(a >= 0 && a < resolution, "sparse latent: coordinate outside grid");
    require(seen.insert(c).second, "sparse latent: duplicate voxel coordinate");
  }
  require(all_finite(features), "sparse latent: features must be finite");
}

TimeSchedule TimeSchedule::uniform(int num_steps) {
  require(num_steps >= 1, "schedule needs at least one step");
  TimeSchedule s;
  s.num_steps = num_steps;
  s.dt = 1.0 / num_steps;
  s.timesteps.reserve(static_cast<std::size_t>(num_steps) + 1);
  for (int i = 0; i <= num_steps; ++i)
    s.timesteps.push_back(static_cast<double>(num_steps - i) / num_steps);
  return s;
}

namespace {

std::string step_label(int step) { return step >= 0 ? " at step " + std::to_string(step) : ""; }

void check_step(const Matrix& features, const Matrix& velocity, double timestep, double dt, int step) {
  if (velocity.rows() != features.rows() || velocity.cols() != features.cols())
    throw ContractViolation("euler_step: velocity " + shape_string(velocity) + " vs latent " +
                            shape_string(features) + step_label(step));
  require(dt > 0.0, "euler_step: dt must be positive");
  require(timestep - dt >= -1e-9, "euler_step: step would move past t = 0");
  if (!all_finite(velocity)) throw NumericError("non-finite velocity" + step_label(step));
}

double next_time(double timestep, double dt) {
  const double t = timestep - dt;
  return std::abs(t) < 1e-9 ? 0.0 : t;
}

}  // namespace

DenseLatent euler_step(const DenseLatent& latent, const Matrix& velocity, double dt, int step) {
  check_step(latent.features, velocity, latent.timestep, dt, step);
  return DenseLatent{latent.resolution, latent.features - velocity * dt, next_time(latent.timestep, dt)};
}

SparseLatent euler_step(const SparseLatent& latent, const Matrix& velocity, double dt, int step) {
  check_step(latent.features, velocity, latent.timestep, dt, step);
  return SparseLatent{latent.resolution, latent.coords, latent.features - velocity * dt,
                      next_time(latent.timestep, dt)};
}

Matrix cfg_velocity(const Matrix& v_cond, const Matrix& v_uncond, double scale) {
  if (v_cond.rows() != v_uncond.rows() || v_cond.cols() != v_uncond.cols())
    throw ContractViolation("cfg_velocity: conditional " + shape_string(v_cond) +
                            " vs unconditional " + shape_string(v_uncond));
  require(scale >= 0.0, "cfg_velocity: scale must be non-negative");
  if (scale == 1.0) return v_cond;
  return v_uncond + scale * (v_cond - v_uncond);
}

void ModelShape::validate() const {
  require(channels >= 1 && heads >= 1 && channels % heads == 0, "model channels must be divisible by heads");
  require(depth >= 0 && latent_channels >= 1 && condition_dim >= 1, "invalid model shape");
}

Matrix layer_norm(const Matrix& x, double eps) {
  Matrix out(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / n;
    const double var = (x.row(r).array() - mean).square().sum() / n;
    out.row(r) = (x.row(r).array() - mean) / std::sqrt(var + eps);
  }
  return out;
}

Matrix silu(const Matrix& x) {
  return (x.array() / (1.0 + (-x.array()).exp())).matrix();
}

Matrix position_embedding(std::span<const Coord> coords, int channels) {
  Matrix out(static_cast<Eigen::Index>(coords.size()), channels);
  const int per_axis = std::max(1, channels / 3);
  for (std::size_t n = 0; n < coords.size(); ++n) {
    for (int j = 0; j < channels; ++j) {
      const int axis = j % 3;
      const int k = j / 3;
      const double freq = std::pow(10.0, -2.0 * static_cast<double>(k / 2) / per_axis);
      const double x = coords[n][static_cast<std::size_t>(axis)] * freq;
      out(static_cast<Eigen::Index>(n), j) = 0.5 * ((k % 2 == 0) ? std::sin(x) : std::cos(x));
    }
  }
  return out;
}

RowVector timestep_features(double t, int channels) {
  RowVector out(channels);
  const int half = channels / 2;
  for (int i = 0; i < channels; ++i) {
    const int k = i % std::max(1, half);
    const double freq = std::exp(-std::log(10000.0) * k / std::max(1, half));
    out[i] = (i < half) ? std::sin(1000.0 * t * freq) : std::cos(1000.0 * t * freq);
  }
  return out;
}

TransformerBlock TransformerBlock::seeded(Rng& rng, int c, int d, int heads) {
  const double sc = 1.0 / std::sqrt(static_cast<double>(c));
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  TransformerBlock b;
  b.self_attn.query = normal_matrix(rng, c, c, sc);
  b.self_attn.key = normal_matrix(rng, c, c, sc);
  b.self_attn.value = normal_matrix(rng, c, c, sc);
  b.self_attn.output = normal_matrix(rng, c, c, sc);
  b.self_attn.heads = heads;
  b.cond_query = normal_matrix(rng, c, c, sc);
  b.cond_key = normal_matrix(rng, d, c, sd);
  b.cond_value = normal_matrix(rng, d, c, sd);
  b.cond_output = normal_matrix(rng, c, c, sc);
  b.ffn_in = normal_matrix(rng, c, 2 * c, sc);
  b.ffn_in_bias = normal_matrix(rng, 1, 2 * c, 0.1);
  b.ffn_out = normal_matrix(rng, 2 * c, c, 1.0 / std::sqrt(2.0 * c));
  b.ffn_out_bias = normal_matrix(rng, 1, c, 0.1);
  return b;
}

TransformerBlock TransformerBlock::zeros(int c, int d, int heads) {
  TransformerBlock b;
  b.self_attn = SiteWeights{Matrix::Zero(c, c), Matrix::Zero(c, c), Matrix::Zero(c, c), Matrix::Zero(c, c), heads};
  b.cond_query = Matrix::Zero(c, c);
  b.cond_key = Matrix::Zero(d, c);
  b.cond_value = Matrix::Zero(d, c);
  b.cond_output = Matrix::Zero(c, c);
  b.ffn_in = Matrix::Zero(c, 2 * c);
  b.ffn_in_bias = Matrix::Zero(1, 2 * c);
  b.ffn_out = Matrix::Zero(2 * c, c);
  b.ffn_out_bias = Matrix::Zero(1, c);
  return b;
}

void TransformerBlock::apply(const SiteDescriptor& site, std::vector<Matrix>& hidden,
                             std::span<const StreamInput> streams, SiteDispatch& dispatch) const {
  std::vector<Matrix> normed;
  normed.reserve(hidden.size());
  for (const auto& h : hidden) normed.push_back(layer_norm(h));

  std::vector<StreamView> views;
  views.reserve(streams.size());
  for (std::size_t i = 0; i < streams.size(); ++i)
    views.push_back(StreamView{streams[i].role, streams[i].conditional, &normed[i]});

  const auto attended = dispatch.attend(site, views);
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    hidden[i] += attended[i] * self_attn.output;

    const Matrix& cond = streams[i].condition->tokens;
    const Matrix q = layer_norm(hidden[i]) * cond_query;
    hidden[i] += multi_head_attention(q, cond * cond_key, cond * cond_value, self_attn.heads) * cond_output;

    const Matrix pre = (layer_norm(hidden[i]) * ffn_in).rowwise() + ffn_in_bias.row(0);
    hidden[i] += (silu(pre) * ffn_out).rowwise() + ffn_out_bias.row(0);
  }
}

void TransformerBlock::visit(const std::string& p,
                             const std::function<void(const std::string&, Matrix&)>& fn) {
  fn(p + "self_attn.query", self_attn.query);
  fn(p + "self_attn.key", self_attn.key);
  fn(p + "self_attn.value", self_attn.value);
  fn(p + "self_attn.output", self_attn.output);
  fn(p + "cond_attn.query", cond_query);
  fn(p + "cond_attn.key", cond_key);
  fn(p + "cond_attn.value", cond_value);
  fn(p + "cond_attn.output", cond_output);
  fn(p + "ffn.in.weight", ffn_in);
  fn(p + "ffn.in.bias", ffn_in_bias);
  fn(p + "ffn.out.weight", ffn_out);
  fn(p + "ffn.out.bias", ffn_out_bias);
}

VelocityModel::VelocityModel(int stage, ModelShape shape, std::string prefix)
    : stage_(stage), shape_(shape), prefix_(std::move(prefix)) {
  shape_.validate();
}

VelocityModel VelocityModel::seeded(int stage, const ModelShape& shape, std::uint64_t seed,
                                    std::string site_prefix) {
  VelocityModel m(stage, shape, std::move(site_prefix));
  Rng rng(seed);
  const int c = shape.channels;
  const int cl = shape.latent_channels;
  m.input_weight = normal_matrix(rng, cl, c, 1.0 / std::sqrt(static_cast<double>(cl)));
  m.input_bias = normal_matrix(rng, 1, c, 0.1);
  m.time_weight1 = normal_matrix(rng, c, c, 1.0 / std::sqrt(static_cast<double>(c)));
  m.time_bias1 = normal_matrix(rng, 1, c, 0.1);
  m.time_weight2 = normal_matrix(rng, c, c, 1.0 / std::sqrt(static_cast<double>(c)));
  m.time_bias2 = normal_matrix(rng, 1, c, 0.1);
  for (int i = 0; i < shape.depth; ++i)
    m.blocks_.push_back(TransformerBlock::seeded(rng, c, shape.condition_dim, shape.heads));
  m.output_weight = normal_matrix(rng, c, cl, 1.0 / std::sqrt(static_cast<double>(c)));
  m.output_bias = normal_matrix(rng, 1, cl, 0.1);
  return m;
}

VelocityModel VelocityModel::zeros(int stage, const ModelShape& shape, std::string site_prefix) {
  VelocityModel m(stage, shape, std::move(site_prefix));
  const int c = shape.channels;
  const int cl = shape.latent_channels;
  m.input_weight = Matrix::Zero(cl, c);
  m.input_bias = Matrix::Zero(1, c);
  m.time_weight1 = Matrix::Zero(c, c);
  m.time_bias1 = Matrix::Zero(1, c);
  m.time_weight2 = Matrix::Zero(c, c);
  m.time_bias2 = Matrix::Zero(1, c);
  for (int i = 0; i < shape.depth; ++i)
    m.blocks_.push_back(TransformerBlock::zeros(c, shape.condition_dim, shape.heads));
  m.output_weight = Matrix::Zero(c, cl);
  m.output_bias = Matrix::Zero(1, cl);
  return m;
}

std::vector<SiteDescriptor> VelocityModel::sites() const {
  std::vector<SiteDescriptor> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    out.push_back(SiteDescriptor{prefix_ + "blocks." + std::to_string(i) + ".self_attn", stage_,
                                 static_cast<int>(i), &blocks_[i].self_attn});
  return out;
}

std::vector<Matrix> VelocityModel::embed_streams(std::span<const StreamInput> streams, double t) const {
  const Matrix temb =
      (silu((timestep_features(t, shape_.channels) * time_weight1) + time_bias1) * time_weight2) + time_bias2;
  std::vector<Matrix> hidden;
  hidden.reserve(streams.size());
  for (const auto& s : streams) {
    require(s.latent != nullptr && s.condition != nullptr, "stream needs latent and condition");
    require(s.latent->cols() == shape_.latent_channels, "stream latent has wrong channel count");
    require(static_cast<Eigen::Index>(s.coords.size()) == s.latent->rows(),
            "stream needs one coordinate per latent row");
    require(s.condition->dim() == shape_.condition_dim, "condition dim does not match the model");
    Matrix h = (*s.latent * input_weight).rowwise() + (input_bias.row(0) + temb.row(0));
    h += position_embedding(s.coords, shape_.channels);
    hidden.push_back(std::move(h));
  }
  return hidden;
}

std::vector<Matrix> VelocityModel::read_out(const std::vector<Matrix>& hidden) const {
  std::vector<Matrix> out;
  out.reserve(hidden.size());
  for (const auto& h : hidden) out.push_back((layer_norm(h) * output_weight).rowwise() + output_bias.row(0));
  return out;
}

std::vector<Matrix> VelocityModel::forward(std::span<const StreamInput> streams, double t,
                                           SiteDispatch& dispatch) const {
  auto hidden = embed_streams(streams, t);
  const auto site_list = sites();
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].apply(site_list[i], hidden, streams, dispatch);
  return read_out(hidden);
}

void VelocityModel::visit(const std::string& p, const std::function<void(const std::string&, Matrix&)>& fn) {
  fn(p + "input.weight", input_weight);
  fn(p + "input.bias", input_bias);
  fn(p + "time.weight1", time_weight1);
  fn(p + "time.bias1", time_bias1);
  fn(p + "time.weight2", time_weight2);
  fn(p + "time.bias2", time_bias2);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].visit(p + "blocks." + std::to_string(i) + ".", fn);
  fn(p + "output.weight", output_weight);
  fn(p + "output.bias", output_bias);
}

namespace {

ModelShape toy_shape(const ToyBackboneConfig& c) {
  return ModelShape{c.channels, c.channels, c.heads, c.depth, c.condition_dim};
}

}  // namespace

ToyFlowHost::ToyFlowHost(ToyBackboneConfig config, VelocityModel structure, VelocityModel latent)
    : config_(config), structure_(std::move(structure)), latent_(std::move(latent)) {}

ToyFlowHost ToyFlowHost::seeded(const ToyBackboneConfig& config) {
  require(config.grid_resolution >= 1, "grid resolution must be positive");
  const auto shape = toy_shape(config);
  ToyFlowHost host(config,
                   VelocityModel::seeded(1, shape, derive_seed(config.weights_seed, "stage1"), "stage1."),
                   VelocityModel::seeded(2, shape, derive_seed(config.weights_seed, "stage2"), "stage2."));
  Rng rng(derive_seed(config.weights_seed, "readouts"));
  const double sc = 1.0 / std::sqrt(static_cast<double>(config.channels));
  host.occupancy_weight_ = normal_matrix(rng, config.channels, 1, sc);
  host.occupancy_bias_ = Matrix::Zero(1, 1);
  host.color_weight_ = normal_matrix(rng, config.channels, 3, sc);
  host.color_bias_ = normal_matrix(rng, 1, 3, 0.1);
  return host;
}

ToyFlowHost ToyFlowHost::zeros(const ToyBackboneConfig& config) {
  const auto shape = toy_shape(config);
  ToyFlowHost host(config, VelocityModel::zeros(1, shape, "stage1."), VelocityModel::zeros(2, shape, "stage2."));
  host.occupancy_weight_ = Matrix::Zero(config.channels, 1);
  host.occupancy_bias_ = Matrix::Zero(1, 1);
  host.color_weight_ = Matrix::Zero(config.channels, 3);
  host.color_bias_ = Matrix::Zero(1, 3);
  return host;
}

HostSpec ToyFlowHost::spec() const {
  return HostSpec{"toy", config_.grid_resolution, config_.channels, config_.condition_dim,
                  SiteLayout{config_.depth, config_.depth}};
}

std::vector<SiteDescriptor> ToyFlowHost::attention_sites() const {
  auto out = structure_.sites();
  auto second = latent_.sites();
  out.insert(out.end(), second.begin(), second.end());
  return out;
}

std::vector<Matrix> ToyFlowHost::velocity(int stage, std::span<const StreamInput> streams, double t,
                                          SiteDispatch& dispatch) const {
  require(stage == 1 || stage == 2, "stage must be 1 or 2");
  return model(stage).forward(streams, t, dispatch);
}

Vector ToyFlowHost::occupancy_logits(const Matrix& dense_features) const {
  return ((dense_features * occupancy_weight_).array() + occupancy_bias_(0, 0)).matrix().col(0);
}

Matrix ToyFlowHost::voxel_colors(const Matrix& sparse_features) const {
  const Matrix logits = (sparse_features * color_weight_).rowwise() + color_bias_.row(0);
  return logits.unaryExpr([](double x) { return sigmoid(x); });
}

void ToyFlowHost::visit(const std::function<void(const std::string&, Matrix&)>& fn) {
  structure_.visit("stage1.", fn);
  latent_.visit("stage2.", fn);
  fn("decoder.occupancy.weight", occupancy_weight_);
  fn("decoder.occupancy.bias", occupancy_bias_);
  fn("decoder.color.weight", color_weight_);
  fn("decoder.color.bias", color_bias_);
}

std::vector<Coord> decode_sparse_structure(const FlowHost& host, const DenseLatent& latent, double threshold) {
  latent.validate();
  require(std::abs(latent.timestep) <= 1e-9, "decode_sparse_structure expects a fully denoised latent");
  const Vector logits = host.occupancy_logits(latent.features);
  std::vector<Coord> out;
  Eigen::Index best = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
    if (sigmoid(logits[i]) > threshold) out.push_back(index_coord(static_cast<int>(i), latent.resolution));
  }
  if (out.empty()) out.push_back(index_coord(static_cast<int>(best), latent.resolution));
  return out;
}

Matrix gather_rows(const Matrix& dense, std::span<const Coord> coords, int resolution) {
  Matrix out(static_cast<Eigen::Index>(coords.size()), dense.cols());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const int idx = coord_index(coords[i], resolution);
    require(idx >= 0 && idx < dense.rows(), "gather_rows: coordinate outside the grid");
    out.row(static_cast<Eigen::Index>(i)) = dense.row(idx);
  }
  return out;
}

namespace {

template <typename E>
[[noreturn]] void rethrow_with(const E& e, const std::string& context) {
  throw E(context + ": " + e.what());
}

}  // namespace

void denoise_branches(const FlowHost& host, std::vector<BranchState>& branches,
                      const DenoiseSettings& settings, SiteDispatch& dispatch) {
  require(settings.schedule != nullptr && settings.null_condition != nullptr,
          "denoise_branches needs a schedule and a null condition");
  require(!branches.empty(), "denoise_branches needs at least one branch");
  const auto& schedule = *settings.schedule;

  int content = -1;
  for (std::size_t b = 0; b < branches.size(); ++b) {
    require(branches[b].condition != nullptr, "branch without condition");
    require(static_cast<Eigen::Index>(branches[b].coords.size()) == branches[b].features.rows(),
            "branch rows and voxel coordinates must align");
    if (branches[b].role == BranchRole::content) content = static_cast<int>(b);
  }
  const bool preserve = settings.content_preserve && content >= 0;

  for (int step = 0; step < schedule.num_steps; ++step) {
    const double t = schedule.timesteps[static_cast<std::size_t>(step)];
    const std::string where = "stage " + std::to_string(settings.stage) + " step " + std::to_string(step);
    try {
      dispatch.begin_step(StepInfo{settings.stage, step, t, preserve});

      Matrix preserved;
      if (preserve) preserved = branches[static_cast<std::size_t>(content)].features;

      std::vector<StreamInput> streams;
      for (const auto& b : branches) {
        streams.push_back(StreamInput{b.role, true, &b.features, b.coords, b.condition});
        streams.push_back(StreamInput{b.role, false, &b.features, b.coords, settings.null_condition});
      }
      if (preserve) {
        const auto& c = branches[static_cast<std::size_t>(content)];
        streams.push_back(StreamInput{BranchRole::content_preserve, true, &preserved, c.coords, c.condition});
      }

      const auto velocities = host.velocity(settings.stage, streams, t, dispatch);
      require(velocities.size() == streams.size(), "host returned the wrong number of velocities");

      for (std::size_t b = 0; b < branches.size(); ++b) {
        const Matrix v = cfg_velocity(velocities[2 * b], velocities[2 * b + 1], settings.cfg_scale);
        if (!all_finite(v))
          throw NumericError(std::string("non-finite velocity in the ") + to_string(branches[b].role) +
                             " branch");
        check_step(branches[b].features, v, t, schedule.dt, step);
        branches[b].features -= v * schedule.dt;
        if (!all_finite(branches[b].features))
          throw NumericError(std::string("non-finite latent in the ") + to_string(branches[b].role) +
                             " branch");
      }
    } catch (const NumericError& e) {
      rethrow_with(e, where);
    } catch (const ContractViolation& e) {
      rethrow_with(e, where);
    } catch (const PipelineError& e) {
      rethrow_with(e, where);
    } catch (const ConfigError& e) {
      rethrow_with(e, where);
    }
  }
}

namespace {

HookProtocol bind_all(const FlowHost& host, AttentionProcessor& processor) {
  const auto sites = host.attention_sites();
  return install_hooks(sites, host.spec().layout, processor);
}

}  // namespace

DenseLatent sample_stage1(const FlowHost& host, const ConditionEmbedding& condition, const DenseLatent& noise,
                          const TimeSchedule& schedule, AttentionProcessor& processor,
                          const SamplerOptions& options) {
  noise.validate();
  condition.validate();
  require(std::abs(noise.timestep - 1.0) <= 1e-12, "stage-1 noise must sit at t = 1");
  require(noise.resolution == host.spec().grid_resolution, "noise grid does not match the host");

  const ConditionEmbedding fallback = null_condition(condition.tokens.rows(), condition.dim());
  HookProtocol hooks = bind_all(host, processor);
  std::vector<BranchState> branches{
      BranchState{BranchRole::content, noise.features, dense_coords(noise.resolution), &condition}};
  denoise_branches(host, branches,
                   DenoiseSettings{1, &schedule, options.cfg_scale,
                                   options.null_condition ? options.null_condition : &fallback, false},
                   hooks);
  if (options.hooks_out != nullptr) *options.hooks_out = std::move(hooks);
  return DenseLatent{noise.resolution, std::move(branches[0].features), 0.0};
}

SparseLatent sample_stage2(const FlowHost& host, const ConditionEmbedding& condition,
                           std::span<const Coord> voxels, const SparseLatent& noise,
                           const TimeSchedule& schedule, AttentionProcessor& processor,
                           const SamplerOptions& options) {
  noise.validate();
  condition.validate();
  require(std::abs(noise.timestep - 1.0) <= 1e-12, "stage-2 noise must sit at t = 1");
  if (voxels.size() != noise.coords.size() || !std::equal(voxels.begin(), voxels.end(), noise.coords.begin()))
    throw ContractViolation("stage-2 noise rows are not aligned with the voxel list");

  const ConditionEmbedding fallback = null_condition(condition.tokens.rows(), condition.dim());
  HookProtocol hooks = bind_all(host, processor);
  std::vector<BranchState> branches{BranchState{BranchRole::content, noise.features, noise.coords, &condition}};
  denoise_branches(host, branches,
                   DenoiseSettings{2, &schedule, options.cfg_scale,
                                   options.null_condition ? options.null_condition : &fallback, false},
                   hooks);
  if (options.hooks_out != nullptr) *options.hooks_out = std::move(hooks);
  return SparseLatent{noise.resolution, noise.coords, std::move(branches[0].features), 0.0};
}

}  // namespace sculpt
