#include "sculpt/backbone.hpp"
#include "sculpt/weights_archive.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

using namespace sculpt;

namespace {

ToyBackboneConfig small_config() {
  ToyBackboneConfig c;
  c.grid_resolution = 3;
  c.channels = 8;
  c.heads = 2;
  c.depth = 2;
  c.condition_dim = 6;
  c.weights_seed = 99;
  return c;
}

ConditionEmbedding condition(std::uint64_t seed, int tokens = 4, int dim = 6) {
  Rng rng(seed);
  return {normal_matrix(rng, tokens, dim), ConditionOrigin::content};
}

DenseLatent dense_noise(int r, int c, std::uint64_t seed) {
  Rng rng(seed);
  return {r, normal_matrix(rng, r * r * r, c), 1.0};
}

// Returns fixed occupancy logits; never asked for velocities.
class LogitHost final : public FlowHost {
 public:
  explicit LogitHost(Vector logits) : logits_(std::move(logits)) {}
  HostSpec spec() const override { return {"logits", 2, 1, 1, {}}; }
  std::vector<SiteDescriptor> attention_sites() const override { return {}; }
  std::vector<Matrix> velocity(int, std::span<const StreamInput>, double, SiteDispatch&) const override {
    return {};
  }
  Vector occupancy_logits(const Matrix&) const override { return logits_; }
  Matrix voxel_colors(const Matrix& f) const override { return Matrix::Zero(f.rows(), 3); }

 private:
  Vector logits_;
};

class ThrowAtStep final : public AttentionProcessor {
 public:
  explicit ThrowAtStep(int step) : step_(step) {}
  std::vector<Matrix> process(const SiteCall& call, std::span<const StreamView> streams) override {
    if (call.step == step_) throw PipelineError("boom");
    return inner_.process(call, streams);
  }

 private:
  int step_;
  SelfAttentionProcessor inner_;
};

class NanAtStep final : public AttentionProcessor {
 public:
  explicit NanAtStep(int step) : step_(step) {}
  std::vector<Matrix> process(const SiteCall& call, std::span<const StreamView> streams) override {
    auto out = inner_.process(call, streams);
    if (call.step == step_) out[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
    return out;
  }

 private:
  int step_;
  SelfAttentionProcessor inner_;
};

}  // namespace

TEST(Coordinates, IndexRoundTrip) {
  for (int i = 0; i < 27; ++i) EXPECT_EQ(coord_index(index_coord(i, 3), 3), i);
  EXPECT_EQ(coord_index({1, 2, 0}, 3), 15);
}

TEST(TimeSchedule, UniformEndpoints) {
  const auto s = TimeSchedule::uniform(4);
  EXPECT_EQ(s.timesteps, (std::vector<double>{1.0, 0.75, 0.5, 0.25, 0.0}));
  EXPECT_THROW(TimeSchedule::uniform(0), ContractViolation);
}

TEST(EulerStep, ZeroVelocityAndSingleFullStep) {
  Rng rng(1);
  DenseLatent x{2, normal_matrix(rng, 8, 4), 1.0};
  const auto same = euler_step(x, Matrix::Zero(8, 4), 0.25);
  EXPECT_TRUE(oracle::bitwise_equal(same.features, x.features));
  EXPECT_DOUBLE_EQ(same.timestep, 0.75);
  const Matrix v = normal_matrix(rng, 8, 4);
  const auto done = euler_step(x, v, 1.0);
  EXPECT_LT(oracle::max_abs_diff(done.features, x.features - v), 1e-15);
  EXPECT_EQ(done.timestep, 0.0);
}

TEST(EulerStep, ConstantVelocityOverHundredSteps) {
  Rng rng(2);
  DenseLatent x{2, normal_matrix(rng, 8, 4), 1.0};
  const Matrix start = x.features;
  const Matrix v = normal_matrix(rng, 8, 4);
  const auto s = TimeSchedule::uniform(100);
  for (int i = 0; i < 100; ++i) x = euler_step(x, v, s.dt, i);
  EXPECT_LT(oracle::max_abs_diff(x.features, start - v), 1e-5);
  EXPECT_EQ(x.timestep, 0.0);
}

TEST(EulerStep, IncrementsTelescope) {
  Rng rng(3);
  SparseLatent x{4, {{0, 0, 0}, {1, 2, 3}, {3, 3, 3}}, normal_matrix(rng, 3, 5), 1.0};
  const Matrix start = x.features;
  Matrix sum = Matrix::Zero(3, 5);
  const auto s = TimeSchedule::uniform(7);
  for (int i = 0; i < 7; ++i) {
    const Matrix v = normal_matrix(rng, 3, 5);
    sum += v * s.dt;
    x = euler_step(x, v, s.dt, i);
  }
  EXPECT_LT(oracle::max_abs_diff(x.features, start - sum), 1e-12);
}

TEST(EulerStep, RejectsBadVelocity) {
  DenseLatent x{1, Matrix::Zero(1, 2), 1.0};
  EXPECT_THROW(euler_step(x, Matrix::Zero(2, 2), 0.5), ContractViolation);
  Matrix bad = Matrix::Zero(1, 2);
  bad(0, 1) = std::numeric_limits<double>::infinity();
  try {
    euler_step(x, bad, 0.5, 6);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 6"), std::string::npos);
  }
}

TEST(CfgVelocity, Cases) {
  Rng rng(4);
  const Matrix c = normal_matrix(rng, 3, 4), u = normal_matrix(rng, 3, 4);
  EXPECT_TRUE(oracle::bitwise_equal(cfg_velocity(c, u, 1.0), c));
  EXPECT_TRUE(oracle::bitwise_equal(cfg_velocity(c, u, 0.0), u));
  EXPECT_TRUE(oracle::bitwise_equal(cfg_velocity(c, c, 6.5), c));
  EXPECT_LT(oracle::max_abs_diff(cfg_velocity(c, u, 3.5), u + 3.5 * (c - u)), 1e-15);
  EXPECT_THROW(cfg_velocity(c, Matrix::Zero(2, 4), 2.0), ContractViolation);
}

TEST(DecodeSparseStructure, ThresholdAndFallback) {
  Vector logits(8);
  logits << -1, 2, 0, 0.1, -5, 3, -0.1, 0;
  const DenseLatent latent{2, Matrix::Zero(8, 1), 0.0};
  const auto voxels = decode_sparse_structure(LogitHost(logits), latent);
  EXPECT_EQ(voxels, (std::vector<Coord>{index_coord(1, 2), index_coord(3, 2), index_coord(5, 2)}));

  Vector low = Vector::Constant(8, -4.0);
  low[6] = -1.0;
  EXPECT_EQ(decode_sparse_structure(LogitHost(low), latent), (std::vector<Coord>{index_coord(6, 2)}));
  const Vector ninf = Vector::Constant(8, -std::numeric_limits<double>::infinity());
  EXPECT_EQ(decode_sparse_structure(LogitHost(ninf), latent), (std::vector<Coord>{index_coord(0, 2)}));
}

TEST(DecodeSparseStructure, MatchesBruteForceOnToyHost) {
  const auto host = ToyFlowHost::seeded(small_config());
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto latent = dense_noise(3, 8, seed);
    latent.timestep = 0.0;
    std::vector<Coord> expected;
    for (int i = 0; i < 27; ++i) {
      double logit = host.occupancy_bias();
      for (int c = 0; c < 8; ++c) logit += latent.features(i, c) * host.occupancy_weight()(c, 0);
      if (1.0 / (1.0 + std::exp(-logit)) > 0.5) expected.push_back(index_coord(i, 3));
    }
    if (expected.empty()) continue;
    EXPECT_EQ(decode_sparse_structure(host, latent), expected);
  }
}

TEST(DecodeSparseStructure, RequiresDenoisedLatent) {
  const auto host = ToyFlowHost::seeded(small_config());
  EXPECT_THROW(decode_sparse_structure(host, dense_noise(3, 8, 0)), ContractViolation);
}

TEST(GatherRows, PicksVoxelRows) {
  Rng rng(5);
  const Matrix dense = normal_matrix(rng, 27, 4);
  const std::vector<Coord> coords{{2, 1, 0}, {0, 0, 2}};
  const Matrix g = gather_rows(dense, coords, 3);
  EXPECT_TRUE(oracle::bitwise_equal(g.row(0), dense.row(21)));
  EXPECT_TRUE(oracle::bitwise_equal(g.row(1), dense.row(2)));
}

TEST(ToyFlowHost, SiteLayout) {
  const auto host = ToyFlowHost::seeded(small_config());
  const auto sites = host.attention_sites();
  ASSERT_EQ(sites.size(), 4u);
  EXPECT_EQ(sites[0].name, "stage1.blocks.0.self_attn");
  EXPECT_EQ(sites[3].name, "stage2.blocks.1.self_attn");
  EXPECT_EQ(sites[3].stage, 2);
  EXPECT_EQ(host.spec().layout.stage1_sites, 2);
}

TEST(Sampling, ZeroModelLeavesNoiseUntouched) {
  const auto host = ToyFlowHost::zeros(small_config());
  const auto noise = dense_noise(3, 8, 6);
  SelfAttentionProcessor proc;
  const auto out = sample_stage1(host, condition(1), noise, TimeSchedule::uniform(5), proc, {3.0});
  EXPECT_TRUE(oracle::bitwise_equal(out.features, noise.features));
  EXPECT_EQ(out.timestep, 0.0);
}

TEST(Sampling, DeterministicAndSeedSensitive) {
  const auto host = ToyFlowHost::seeded(small_config());
  SelfAttentionProcessor proc;
  const auto s = TimeSchedule::uniform(4);
  const auto a = sample_stage1(host, condition(1), dense_noise(3, 8, 7), s, proc, {2.0});
  const auto b = sample_stage1(host, condition(1), dense_noise(3, 8, 7), s, proc, {2.0});
  const auto c = sample_stage1(host, condition(1), dense_noise(3, 8, 8), s, proc, {2.0});
  EXPECT_TRUE(oracle::bitwise_equal(a.features, b.features));
  EXPECT_FALSE(oracle::bitwise_equal(a.features, c.features));
  EXPECT_TRUE(all_finite(a.features));
}

TEST(Sampling, CountersAndStepLog) {
  const auto host = ToyFlowHost::seeded(small_config());
  SelfAttentionProcessor proc;
  HookProtocol hooks;
  sample_stage1(host, condition(1), dense_noise(3, 8, 7), TimeSchedule::uniform(3), proc, {2.0, nullptr, &hooks});
  // two sites, three steps, a cond/uncond pair each
  EXPECT_EQ(hooks.stage_totals(1).self_attention, 12);
  EXPECT_EQ(hooks.stage_totals(2).self_attention, 0);
  EXPECT_EQ(hooks.totals().cross_attention, 0);
  ASSERT_EQ(hooks.step_log().size(), 3u);
  EXPECT_DOUBLE_EQ(hooks.step_log()[1].t, 2.0 / 3.0);
}

TEST(Sampling, StageTwoChecksNoiseAlignment) {
  const auto host = ToyFlowHost::seeded(small_config());
  SelfAttentionProcessor proc;
  Rng rng(9);
  const std::vector<Coord> voxels{{0, 0, 0}, {1, 1, 1}};
  SparseLatent noise{3, {{0, 0, 0}, {2, 2, 2}}, normal_matrix(rng, 2, 8), 1.0};
  EXPECT_THROW(sample_stage2(host, condition(1), voxels, noise, TimeSchedule::uniform(2), proc),
               ContractViolation);
  noise.coords = voxels;
  const auto out = sample_stage2(host, condition(1), voxels, noise, TimeSchedule::uniform(2), proc);
  EXPECT_EQ(out.coords, voxels);
  EXPECT_EQ(out.features.rows(), 2);
}

TEST(Sampling, ProcessorErrorsCarryStageAndStep) {
  const auto host = ToyFlowHost::seeded(small_config());
  ThrowAtStep proc(2);
  try {
    sample_stage1(host, condition(1), dense_noise(3, 8, 7), TimeSchedule::uniform(4), proc);
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_NE(std::string(e.what()).find("stage 1 step 2"), std::string::npos) << e.what();
  }
}

TEST(Sampling, NanAbortsNamingStepAndBranch) {
  const auto host = ToyFlowHost::seeded(small_config());
  NanAtStep proc(1);
  try {
    sample_stage1(host, condition(1), dense_noise(3, 8, 7), TimeSchedule::uniform(4), proc, {2.0});
    FAIL();
  } catch (const NumericError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("stage 1 step 1"), std::string::npos) << what;
    EXPECT_NE(what.find("content"), std::string::npos) << what;
  }
}

TEST(Sampling, UnconditionalStreamSeesNullCondition) {
  // With scale 0 only the unconditional stream matters, so the condition is irrelevant.
  const auto host = ToyFlowHost::seeded(small_config());
  SelfAttentionProcessor proc;
  const auto s = TimeSchedule::uniform(2);
  const auto a = sample_stage1(host, condition(1), dense_noise(3, 8, 7), s, proc, {0.0});
  const auto b = sample_stage1(host, condition(2), dense_noise(3, 8, 7), s, proc, {0.0});
  EXPECT_TRUE(oracle::bitwise_equal(a.features, b.features));
}

TEST(LayerNorm, ZeroMeanUnitVariance) {
  Rng rng(10);
  const Matrix y = layer_norm(normal_matrix(rng, 5, 16, 3.0));
  for (Eigen::Index r = 0; r < 5; ++r) {
    EXPECT_NEAR(y.row(r).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.row(r).array().square().mean(), 1.0, 1e-4);
  }
}

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("sculpt_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(WeightsArchive, RoundTripIsBitwise) {
  auto host = ToyFlowHost::seeded(small_config());
  const auto dir = scratch("weights_roundtrip");
  save_weights(host, dir);
  auto loaded = load_weights(dir);
  EXPECT_EQ(loaded.config().weights_seed, 99u);
  std::vector<Matrix> a, b;
  host.visit([&](const std::string&, Matrix& m) { a.push_back(m); });
  loaded.visit([&](const std::string&, Matrix& m) { b.push_back(m); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_TRUE(oracle::bitwise_equal(a[i], b[i]));
  std::filesystem::remove_all(dir);
}

TEST(WeightsArchive, MissingOrMisshapedTensorIsConfigError) {
  auto host = ToyFlowHost::seeded(small_config());
  const auto dir = scratch("weights_bad");
  save_weights(host, dir);
  nlohmann::json manifest;
  std::ifstream(dir / "weights.json") >> manifest;

  auto drop = manifest;
  drop["tensors"].erase(3);
  std::ofstream(dir / "weights.json") << drop.dump();
  EXPECT_THROW(load_weights(dir), ConfigError);

  auto reshape = manifest;
  reshape["tensors"][0]["shape"] = {1, 1};
  std::ofstream(dir / "weights.json") << reshape.dump();
  EXPECT_THROW(load_weights(dir), ConfigError);

  EXPECT_THROW(load_weights(dir / "nowhere"), ConfigError);
  std::filesystem::remove_all(dir);
}
