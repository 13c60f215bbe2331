#include "sculpt/insight.hpp"
#include "sculpt/pipeline.hpp"
#include "sculpt/synthetic.hpp"
#include "sculpt/weights_archive.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace sculpt;
namespace fs = std::filesystem;

namespace {

RunConfig small_config() {
  RunConfig c;
  c.toy.grid_resolution = 4;
  c.toy.channels = 16;
  c.toy.heads = 2;
  c.toy.depth = 2;
  c.guidance.steps_stage1 = 4;
  c.guidance.steps_stage2 = 4;
  c.seed = 11;
  return c;
}

struct Fixture {
  RunConfig config = small_config();
  ToyFlowHost host = ToyFlowHost::seeded(config.toy);
  DemoInputs inputs = demo_inputs(5);
  std::vector<Image> styles{inputs.style};

  RunOutcome run(const RunConfig& c, const RunHooks& hooks = {}) {
    return run_style_guided(host, inputs.content, styles, c, hooks);
  }
  RunConfig with(GuidanceMode mode, std::optional<int> k1 = {}, std::optional<int> k2 = {}) const {
    RunConfig c = config;
    c.guidance.mode = mode;
    c.guidance.k_stage1 = k1;
    c.guidance.k_stage2 = k2;
    return c;
  }
};

double max_diff(const RunOutcome& a, const RunOutcome& b) {
  const auto& x = a.passes.back().stage2_content;
  const auto& y = b.passes.back().stage2_content;
  if (x.coords != y.coords) return 1e300;
  return oracle::max_abs_diff(x.features, y.features);
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("sculpt_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Pipeline, ModeOffIsThePlainBackbone) {
  Fixture fx;
  const auto off = fx.run(fx.with(GuidanceMode::off));
  const auto plain = run_plain_backbone(fx.host, fx.inputs.content, fx.config);
  ASSERT_EQ(off.passes.size(), 1u);
  EXPECT_EQ(off.passes[0].stage2_content.coords, plain.coords);
  EXPECT_TRUE(oracle::bitwise_equal(off.passes[0].stage2_content.features, plain.features));
  EXPECT_EQ(off.passes[0].stage1.totals.cross_attention, 0);
  EXPECT_EQ(off.passes[0].stage2.totals.cross_attention, 0);
  for (const auto& [site, c] : off.passes[0].stage1.per_site) EXPECT_EQ(c.cross_attention, 0) << site;
}

TEST(Pipeline, KZeroMatchesModeOff) {
  Fixture fx;
  const auto off = fx.run(fx.with(GuidanceMode::off));
  const auto zero = fx.run(fx.with(GuidanceMode::dual, 0, 0));
  EXPECT_LE(max_diff(off, zero), 1e-6);
  EXPECT_EQ(zero.passes[0].stage1.totals.cross_attention, 0);
}

TEST(Pipeline, KFullMatchesAllCrossAttention) {
  Fixture fx;
  const auto full = fx.run(fx.with(GuidanceMode::dual, 16, 16));
  FullCrossProcessor cross;
  const auto ref = fx.run(fx.with(GuidanceMode::dual, 16, 16), RunHooks{&cross});
  EXPECT_LE(max_diff(full, ref), 1e-6);
  EXPECT_EQ(full.passes[0].stage1.totals.cross_attention, ref.passes[0].stage1.totals.cross_attention);
}

TEST(Pipeline, StyleEqualToContentDegeneratesToModeOff) {
  Fixture fx;
  fx.styles = {fx.inputs.content};
  const auto off = fx.run(fx.with(GuidanceMode::off));
  const auto same = fx.run(fx.with(GuidanceMode::dual));
  EXPECT_LE(max_diff(off, same), 1e-5);
}

TEST(Pipeline, SharedNoiseAndHandoff) {
  Fixture fx;
  const auto out = fx.run(fx.with(GuidanceMode::dual));
  const auto& p = out.passes[0];
  const auto& n1 = p.stage1.initial_noise;
  ASSERT_EQ(n1.size(), 3u);
  EXPECT_TRUE(oracle::bitwise_equal(n1.at(BranchRole::content), n1.at(BranchRole::style)));
  EXPECT_TRUE(oracle::bitwise_equal(n1.at(BranchRole::content), n1.at(BranchRole::edge)));

  const HostSpec spec = fx.host.spec();
  const Matrix dense2 = stage_noise(fx.config, spec, 2);
  EXPECT_TRUE(oracle::bitwise_equal(p.stage2.initial_noise.at(BranchRole::content),
                                    gather_rows(dense2, p.content_voxels, spec.grid_resolution)));
  EXPECT_TRUE(oracle::bitwise_equal(p.stage2.initial_noise.at(BranchRole::style),
                                    gather_rows(dense2, p.style_voxels, spec.grid_resolution)));
  // Shared positions carry the same noise rows in both branches.
  for (std::size_t i = 0; i < p.content_voxels.size(); ++i)
    for (std::size_t j = 0; j < p.style_voxels.size(); ++j)
      if (p.content_voxels[i] == p.style_voxels[j])
        ASSERT_TRUE(p.stage2.initial_noise.at(BranchRole::content).row(static_cast<Eigen::Index>(i)) ==
                    p.stage2.initial_noise.at(BranchRole::style).row(static_cast<Eigen::Index>(j)));

  EXPECT_EQ(p.content_voxels, decode_sparse_structure(fx.host, p.stage1_content, 0.5));
  EXPECT_EQ(p.stage2_content.coords, p.content_voxels);
}

TEST(Pipeline, ReusedStageOneNoise) {
  Fixture fx;
  RunConfig c = fx.config;
  c.stage2_noise = Stage2Noise::reuse_stage1;
  EXPECT_TRUE(oracle::bitwise_equal(stage_noise(c, fx.host.spec(), 2), stage_noise(c, fx.host.spec(), 1)));
  EXPECT_FALSE(oracle::bitwise_equal(stage_noise(fx.config, fx.host.spec(), 2), stage_noise(fx.config, fx.host.spec(), 1)));
}

TEST(Pipeline, DeterministicAcrossRuns) {
  Fixture fx;
  const auto a = fx.run(fx.with(GuidanceMode::dual));
  const auto b = fx.run(fx.with(GuidanceMode::dual));
  EXPECT_TRUE(oracle::bitwise_equal(a.asset.colors, b.asset.colors));
  EXPECT_EQ(a.asset.voxels, b.asset.voxels);
  EXPECT_EQ(asset_manifest(fx.config, a, "").dump(), asset_manifest(fx.config, b, "").dump());
}

TEST(Pipeline, CountersAreStepsTimesSites) {
  Fixture fx;
  const auto out = fx.run(fx.with(GuidanceMode::dual, 4, 8));
  const auto& p = out.passes[0];
  // 2 sites x 4 steps, one cross call per site and step
  EXPECT_EQ(p.stage1.totals.cross_attention, 8);
  EXPECT_EQ(p.stage2.totals.cross_attention, 8);
  // stage 1: content, style, edge pairs + content-preserve, minus the cross-fused content stream
  EXPECT_EQ(p.stage1.totals.self_attention, 8 * 6);
  EXPECT_EQ(p.stage1.steps.size(), 4u);
  EXPECT_EQ(p.trace.entries().size(), 16u);
}

TEST(Pipeline, TextureOnlyPlan) {
  Fixture fx;
  const auto out = fx.run(fx.with(GuidanceMode::texture_only));
  ASSERT_EQ(out.passes.size(), 1u);
  EXPECT_EQ(out.passes[0].plan.stage1.k, texture_default_k(16).stage1);
  EXPECT_EQ(out.passes[0].plan.stage2.k, texture_default_k(16).stage2);
}

TEST(Pipeline, GeometryOnlySecondPass) {
  Fixture fx;
  const auto out = fx.run(fx.with(GuidanceMode::geometry_only));
  ASSERT_EQ(out.passes.size(), 2u);
  const auto& p2 = out.passes[1];
  EXPECT_EQ(p2.stage1.totals.cross_attention, 0);
  EXPECT_GT(p2.stage2.totals.cross_attention, 0);
  EXPECT_EQ(p2.style_source, fx.inputs.content.source_id);
  EXPECT_EQ(p2.style_input.pixels, preprocess(fx.inputs.content, fx.config.preprocess).image.pixels);
  EXPECT_EQ(p2.content_source, "pass1-view");
  EXPECT_EQ(out.asset.voxels, p2.stage2_content.coords);
}

TEST(Pipeline, GeometryOnlyCarriesPassOneStructure) {
  Fixture fx;
  RunConfig c = fx.with(GuidanceMode::geometry_only);
  c.structure_source = StructureSource::pass1;
  const auto out = fx.run(c);
  ASSERT_EQ(out.passes.size(), 2u);
  EXPECT_EQ(out.passes[1].stage2_content.coords, out.passes[0].stage2_content.coords);
}

TEST(Pipeline, GuidedModesNeedAStyle) {
  Fixture fx;
  fx.styles.clear();
  EXPECT_THROW(fx.run(fx.with(GuidanceMode::dual)), ConfigError);
  EXPECT_NO_THROW(fx.run(fx.with(GuidanceMode::off)));
}

TEST(Pipeline, MultipleStylesUseMeanEmbedding) {
  Fixture fx;
  const Image second = synthetic_object(77);
  const std::vector<Image> both{fx.inputs.style, second};
  const auto cond = prepare_conditions(fx.inputs.content, both, fx.config);
  const auto a = prepare_conditions(fx.inputs.content, std::span<const Image>(&fx.inputs.style, 1), fx.config);
  const auto b = prepare_conditions(fx.inputs.content, std::span<const Image>(&second, 1), fx.config);
  EXPECT_LT(oracle::max_abs_diff(cond.style.tokens, 0.5 * (a.style.tokens + b.style.tokens)), 1e-12);
  EXPECT_LT(oracle::max_abs_diff(cond.edge.tokens, 0.5 * (a.edge.tokens + b.edge.tokens)), 1e-12);
}

TEST(Pipeline, EdgeConditionIsReplayedRawEdges) {
  Fixture fx;
  const auto cond = prepare_conditions(fx.inputs.content, fx.styles, fx.config);
  const auto p = preprocess(fx.inputs.style, fx.config.preprocess);
  EXPECT_EQ(cond.edge_image.pixels, replay(p.record, extract_edges(fx.inputs.style)).pixels);
  EXPECT_EQ(cond.edge.origin, ConditionOrigin::edge);
}

TEST(Sweep, EndpointsAndNesting) {
  Fixture fx;
  const std::vector<int> ks{0, 4, 8, 16};
  const auto runs = intensity_sweep(fx.host, fx.inputs.content, fx.styles, fx.config, ks);
  ASSERT_EQ(runs.size(), 4u);
  const auto off = fx.run(fx.with(GuidanceMode::off));
  EXPECT_LE(max_diff(runs[0].outcome, off), 1e-6);

  // At the first step every branch still sits on the shared noise, so the
  // masks of one site are nested across K.
  auto first_masks = [](const RunOutcome& o) {
    std::map<std::string, std::vector<int>> out;
    for (const auto& e : o.passes[0].trace.entries())
      if (e.stage == 1 && e.step == 0) out[e.site] = e.channels;
    return out;
  };
  for (std::size_t i = 1; i + 1 < runs.size(); ++i) {
    const auto small = first_masks(runs[i].outcome);
    const auto large = first_masks(runs[i + 1].outcome);
    for (const auto& [site, channels] : small) {
      const std::set<int> big(large.at(site).begin(), large.at(site).end());
      for (int ch : channels) EXPECT_TRUE(big.contains(ch)) << site << " " << ch;
    }
  }
  EXPECT_THROW(intensity_sweep(fx.host, fx.inputs.content, fx.styles, fx.config, std::vector<int>{17}), ConfigError);
}

TEST(Pipeline, MockHostDualRun) {
  Fixture fx;
  RunConfig c = fx.with(GuidanceMode::dual);
  c.backbone = "mock-unet";
  const auto host = make_host(c);
  const auto out = run_style_guided(*host, fx.inputs.content, fx.styles, c);
  const auto& p = out.passes[0];
  EXPECT_EQ(p.stage1.totals.cross_attention, 4 * 2);
  EXPECT_EQ(p.stage2.totals.cross_attention, 4 * 5);
  EXPECT_EQ(p.stage2.per_site.size(), 5u);
  EXPECT_GE(out.asset.voxels.size(), 1u);
}

TEST(Pipeline, NanAbortLeavesNoExport) {
  Fixture fx;
  const auto root = scratch("nan");
  auto host = ToyFlowHost::seeded(fx.config.toy);
  host.visit([](const std::string& name, Matrix& m) {
    if (name == "stage1.output.bias") m(0, 3) = std::nan("");
  });
  save_weights(host, root / "weights");
  write_png(root / "content.png", fx.inputs.content);
  write_png(root / "style.png", fx.inputs.style);

  RunConfig c = fx.with(GuidanceMode::dual);
  c.backbone = "archive";
  c.weights = root / "weights";
  c.content_image = root / "content.png";
  c.style_images = {root / "style.png"};
  try {
    run_style_guided(c, root / "out");
    FAIL();
  } catch (const NumericError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("stage 1 step 0"), std::string::npos) << what;
    EXPECT_NE(what.find("branch"), std::string::npos) << what;
  }
  EXPECT_FALSE(fs::exists(root / "out"));
  EXPECT_FALSE(fs::exists(root / "out.partial"));
  fs::remove_all(root);
}

TEST(Pipeline, FileRunWritesManifestAndTrace) {
  Fixture fx;
  const auto root = scratch("file");
  fs::create_directories(root);
  write_png(root / "content.png", fx.inputs.content);
  write_png(root / "style.png", fx.inputs.style);
  RunConfig c = fx.with(GuidanceMode::dual);
  c.content_image = root / "content.png";
  c.style_images = {root / "style.png"};
  c.trace_masks = true;
  run_style_guided(c, root / "out");
  const auto asset = read_asset(root / "out");
  EXPECT_EQ(asset.manifest.at("mask_trace"), "mask_trace.jsonl");
  EXPECT_EQ(asset.manifest.at("config_hash"), config_hash(c));
  EXPECT_EQ(asset.manifest.at("k").at("stage1"), dual_default_k(16).stage1);
  EXPECT_TRUE(fs::exists(root / "out" / "mask_trace.jsonl"));
  std::ifstream trace(root / "out" / "mask_trace.jsonl");
  int lines = 0;
  for (std::string line; std::getline(trace, line);) ++lines;
  EXPECT_EQ(lines, 16);
  fs::remove_all(root);
}

TEST(RunConfig, JsonRoundTripAndStrictKeys) {
  RunConfig c = small_config();
  c.guidance.mode = GuidanceMode::geometry_only;
  c.guidance.k_refine = 5;
  c.guidance.policy = SelectionPolicy::high_variance;
  const RunConfig back = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  EXPECT_EQ(config_hash(back), config_hash(c));
  auto j = to_json(c);
  j["guidance"]["mode"] = "sideways";
  EXPECT_THROW(run_config_from_json(j), ConfigError);
  j = to_json(c);
  j["colour"] = 1;
  EXPECT_THROW(run_config_from_json(j), ConfigError);
  c.seed = 12;
  EXPECT_NE(config_hash(c), config_hash(back));
}

TEST(RunConfig, ValidationErrors) {
  RunConfig c = small_config();
  c.backbone = "trellis";
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.guidance.k_stage1 = 99;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.embedder.condition_dim = 8;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.content_image = "/nonexistent/content.png";
  EXPECT_THROW(c.validate_paths(), ConfigError);
}

TEST(Insight, ReportShapeAndBaselineStructure) {
  Fixture fx;
  InsightOptions opts;
  opts.seeds = {1, 2};
  const auto report = validate_insight(fx.host, fx.inputs.content, fx.inputs.style, fx.config, opts);
  ASSERT_EQ(report.rows.size(), 3u);
  EXPECT_EQ(report.k_stage1, 4);
  for (const auto& row : report.rows) {
    ASSERT_EQ(row.samples.size(), 2u);
    EXPECT_GT(row.content_distance, 0.0);
    EXPECT_NEAR(row.content_distance, 0.5 * (row.stage1_distance + row.stage2_distance), 1e-12);
  }
  EXPECT_TRUE(report.low_below_high().has_value());
  const auto j = report.to_json();
  EXPECT_EQ(j.at("policies").size(), 3u);
  EXPECT_NE(report.to_text().find("low_variance"), std::string::npos);
}

TEST(Insight, RmsDistance) {
  EXPECT_DOUBLE_EQ(rms_distance(Matrix::Zero(2, 2), Matrix::Constant(2, 2, 3.0)), 3.0);
  EXPECT_THROW(rms_distance(Matrix::Zero(2, 2), Matrix::Zero(3, 2)), ContractViolation);
}
