#include "sculpt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sculpt {

namespace fs = std::filesystem;
using nlohmann::json;

PreparedConditions prepare_conditions(const Image& content, std::span<const Image> styles,
                                      const RunConfig& config) {
  EmbedderConfig ec = config.embedder;
  ec.resolution = config.preprocess.resolution;
  const ReferenceEmbedder embedder(ec);

  auto c = preprocess(content, config.preprocess);
  PreparedConditions out;
  out.content = embedder.embed(c.image, ConditionOrigin::content);
  out.content_image = std::move(c.image);
  out.content_record = std::move(c.record);

  // Without a style image (mode off) the content stands in; those branches never run.
  const std::span<const Image> sources = styles.empty() ? std::span<const Image>(&content, 1) : styles;
  std::vector<ConditionEmbedding> style_emb, edge_emb;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    auto s = preprocess(sources[i], config.preprocess);
    Image edges = replay(s.record, extract_edges(sources[i], config.edge_extractor));
    style_emb.push_back(embedder.embed(s.image, ConditionOrigin::style));
    edge_emb.push_back(embedder.embed(edges, ConditionOrigin::edge));
    if (i == 0) {
      out.style_image = std::move(s.image);
      out.edge_image = std::move(edges);
      out.style_record = std::move(s.record);
    }
  }
  out.style = mean_embedding(style_emb);
  out.style.origin = ConditionOrigin::style;
  out.edge = mean_embedding(edge_emb);
  out.edge.origin = ConditionOrigin::edge;
  return out;
}

Matrix stage_noise(const RunConfig& config, const HostSpec& spec, int stage) {
  require(stage == 1 || stage == 2, "stage must be 1 or 2");
  const auto rows = static_cast<Eigen::Index>(spec.grid_resolution) * spec.grid_resolution * spec.grid_resolution;
  const bool reuse = stage == 2 && config.stage2_noise == Stage2Noise::reuse_stage1;
  Rng rng(derive_seed(config.seed, (stage == 1 || reuse) ? "stage1-noise" : "stage2-noise"));
  return normal_matrix(rng, rows, spec.channels);
}

namespace {

StageRecord stage_record(const HookProtocol& protocol, const std::vector<SiteDescriptor>& sites, int stage,
                         const std::vector<BranchState>& initial) {
  StageRecord r;
  r.totals = protocol.stage_totals(stage);
  for (const auto& s : sites)
    if (s.stage == stage) r.per_site[s.name] = protocol.counters().at(s.name);
  for (const auto& step : protocol.step_log())
    if (step.stage == stage) r.steps.push_back(step);
  for (const auto& b : initial) r.initial_noise[b.role] = b.features;
  return r;
}

void check_plan(const PassPlan& plan, int channels) {
  for (const auto& g : {plan.stage1, plan.stage2})
    if (g.k < 0 || g.k > channels)
      throw ConfigError("K=" + std::to_string(g.k) + " outside [0, " + std::to_string(channels) + "]");
}

}  // namespace

PassResult run_pass(const FlowHost& host, const PreparedConditions& cond, const PassPlan& plan,
                    const RunConfig& config, const RunHooks& hooks, const std::vector<Coord>* content_voxels) {
  const HostSpec spec = host.spec();
  const int r = spec.grid_resolution;
  check_plan(plan, spec.channels);
  const auto& g = config.guidance;
  const TimeSchedule schedule1 = TimeSchedule::uniform(g.steps_stage1);
  const TimeSchedule schedule2 = TimeSchedule::uniform(g.steps_stage2);
  const ConditionEmbedding null = null_condition(cond.content.tokens.rows(), cond.content.dim());

  PassResult result;
  result.plan = plan;
  result.content_input = cond.content_image;
  result.style_input = cond.style_image;
  result.content_source = cond.content_image.source_id;
  result.style_source = cond.style_image.source_id;

  SdAttnSettings settings;
  settings.stages = {plan.stage1, plan.stage2};
  settings.policy = g.policy;
  settings.seed = config.seed;
  settings.freeze_masks = g.freeze_masks;
  SdAttentionProcessor sd(settings, &result.trace);
  AttentionProcessor& processor = hooks.processor ? *hooks.processor : sd;

  const auto sites = host.attention_sites();
  HookProtocol protocol = install_hooks(sites, spec.layout, processor);

  const bool need_style = plan.stage1.sd_attn || plan.stage2.sd_attn;
  const Matrix noise1 = stage_noise(config, spec, 1);
  const auto grid = dense_coords(r);
  std::vector<BranchState> stage1{{BranchRole::content, noise1, grid, &cond.content}};
  if (need_style) stage1.push_back({BranchRole::style, noise1, grid, &cond.style});
  if (plan.stage1.sd_attn) stage1.push_back({BranchRole::edge, noise1, grid, &cond.edge});
  const auto initial1 = stage1;

  denoise_branches(host, stage1,
                   DenoiseSettings{1, &schedule1, g.cfg_stage1, &null, plan.stage1.sd_attn}, protocol);

  result.stage1_content = DenseLatent{r, stage1[0].features, 0.0};
  result.content_voxels = decode_sparse_structure(host, result.stage1_content, config.occupancy_threshold);
  if (need_style)
    result.style_voxels =
        decode_sparse_structure(host, DenseLatent{r, stage1[1].features, 0.0}, config.occupancy_threshold);

  const std::vector<Coord>& cv = content_voxels ? *content_voxels : result.content_voxels;
  const Matrix noise2 = stage_noise(config, spec, 2);
  std::vector<BranchState> stage2{{BranchRole::content, gather_rows(noise2, cv, r), cv, &cond.content}};
  if (plan.stage2.sd_attn) {
    const Matrix style_noise = gather_rows(noise2, result.style_voxels, r);
    stage2.push_back({BranchRole::style, style_noise, result.style_voxels, &cond.style});
    stage2.push_back({BranchRole::edge, style_noise, result.style_voxels, &cond.edge});
  }
  const auto initial2 = stage2;

  denoise_branches(host, stage2,
                   DenoiseSettings{2, &schedule2, g.cfg_stage2, &null, plan.stage2.sd_attn}, protocol);
  result.stage2_content = SparseLatent{r, cv, stage2[0].features, 0.0};

  result.stage1 = stage_record(protocol, sites, 1, initial1);
  result.stage2 = stage_record(protocol, sites, 2, initial2);
  return result;
}

RunOutcome run_style_guided(const FlowHost& host, const Image& content, std::span<const Image> styles,
                            const RunConfig& config, const RunHooks& hooks) {
  config.validate();
  const HostSpec spec = host.spec();
  const StagePlan plan = resolve_stage_plan(config.guidance, spec.channels);
  if (styles.empty() && config.guidance.mode != GuidanceMode::off)
    throw ConfigError("style guidance needs at least one style image");

  RunOutcome outcome;
  const PreparedConditions cond = prepare_conditions(content, styles, config);
  outcome.passes.push_back(run_pass(host, cond, plan.passes[0], config, hooks));
  outcome.asset = make_asset(host, outcome.passes.back().stage2_content);

  if (plan.pass_count() == 2) {
    Image view;
    try {
      const int cell = std::max((8 + spec.grid_resolution - 1) / spec.grid_resolution,
                                config.preprocess.resolution / spec.grid_resolution);
      view = render_view(outcome.asset, cell);
      view.source_id = "pass1-view";
    } catch (const Error& e) {
      throw PipelineError(std::string("geometry-only pass 2: rendering the pass-1 asset failed: ") + e.what());
    }
    const PreparedConditions refine = prepare_conditions(view, std::span<const Image>(&content, 1), config);
    const std::vector<Coord> carried = outcome.passes[0].stage2_content.coords;
    outcome.passes.push_back(run_pass(host, refine, plan.passes[1], config, hooks,
                                      config.structure_source == StructureSource::pass1 ? &carried : nullptr));
    outcome.asset = make_asset(host, outcome.passes.back().stage2_content);
  }
  return outcome;
}

namespace {

json counters_json(const AttentionCounters& c) {
  return {{"self_attention", c.self_attention}, {"cross_attention", c.cross_attention}};
}

std::string trace_name(std::size_t pass) {
  return pass == 0 ? "mask_trace.jsonl" : "mask_trace.pass" + std::to_string(pass + 1) + ".jsonl";
}

}  // namespace

json asset_manifest(const RunConfig& config, const RunOutcome& outcome, const std::string& trace_path) {
  json passes = json::array();
  for (const auto& p : outcome.passes)
    passes.push_back({{"stage1", {{"sd_attn", p.plan.stage1.sd_attn}, {"k", p.plan.stage1.k}}},
                      {"stage2", {{"sd_attn", p.plan.stage2.sd_attn}, {"k", p.plan.stage2.k}}},
                      {"content", p.content_source},
                      {"style", p.style_source},
                      {"counters", {{"stage1", counters_json(p.stage1.totals)}, {"stage2", counters_json(p.stage2.totals)}}}});
  const auto& first = outcome.passes.front().plan;
  return {{"format", "sculpt-asset-v1"},
          {"config_hash", config_hash(config)},
          {"seed", config.seed},
          {"backbone", config.backbone},
          {"mode", to_string(config.guidance.mode)},
          {"policy", to_string(config.guidance.policy)},
          {"k", {{"stage1", first.stage1.k}, {"stage2", first.stage2.k}}},
          {"steps", {{"stage1", config.guidance.steps_stage1}, {"stage2", config.guidance.steps_stage2}}},
          {"passes", passes},
          {"mask_trace", trace_path.empty() ? json(nullptr) : json(trace_path)}};
}

RunOutcome run_style_guided(const RunConfig& config, const fs::path& output_dir) {
  config.validate_paths();
  const auto host = make_host(config);
  const Image content = read_png(config.content_image);
  std::vector<Image> styles;
  for (const auto& s : config.style_images) styles.push_back(read_png(s));

  RunOutcome outcome = run_style_guided(*host, content, styles, config);

  ExportOptions options{config.export_projection, config.projection_cell, {}};
  if (config.trace_masks)
    for (std::size_t i = 0; i < outcome.passes.size(); ++i) {
      std::ostringstream os;
      outcome.passes[i].trace.write_jsonl(os);
      options.extra_files[trace_name(i)] = os.str();
    }
  outcome.asset.manifest = asset_manifest(config, outcome, config.trace_masks ? trace_name(0) : "");
  write_asset(outcome.asset, output_dir, options);
  return outcome;
}

SparseLatent run_plain_backbone(const FlowHost& host, const Image& content, const RunConfig& config) {
  config.validate();
  const HostSpec spec = host.spec();
  const int r = spec.grid_resolution;
  EmbedderConfig ec = config.embedder;
  ec.resolution = config.preprocess.resolution;
  const ConditionEmbedding condition =
      ReferenceEmbedder(ec).embed(preprocess(content, config.preprocess).image, ConditionOrigin::content);
  const ConditionEmbedding null = null_condition(condition.tokens.rows(), condition.dim());

  SelfAttentionProcessor plain;
  const auto& g = config.guidance;
  const DenseLatent s0 = sample_stage1(host, condition, DenseLatent{r, stage_noise(config, spec, 1), 1.0},
                                       TimeSchedule::uniform(g.steps_stage1), plain,
                                       SamplerOptions{g.cfg_stage1, &null, nullptr});
  const auto voxels = decode_sparse_structure(host, s0, config.occupancy_threshold);
  const SparseLatent noise{r, voxels, gather_rows(stage_noise(config, spec, 2), voxels, r), 1.0};
  return sample_stage2(host, condition, voxels, noise, TimeSchedule::uniform(g.steps_stage2), plain,
                       SamplerOptions{g.cfg_stage2, &null, nullptr});
}

std::vector<SweepRun> intensity_sweep(const FlowHost& host, const Image& content, std::span<const Image> styles,
                                      const RunConfig& config, std::span<const int> k_values) {
  const int channels = host.spec().channels;
  for (int k : k_values)
    if (k < 0 || k > channels)
      throw ConfigError("sweep K=" + std::to_string(k) + " outside [0, " + std::to_string(channels) + "]");
  std::vector<SweepRun> out;
  for (int k : k_values) {
    RunConfig c = config;
    c.guidance.mode = GuidanceMode::dual;
    c.guidance.k_stage1 = k;
    c.guidance.k_stage2 = k;
    out.push_back({k, run_style_guided(host, content, styles, c)});
  }
  return out;
}

}  // namespace sculpt
