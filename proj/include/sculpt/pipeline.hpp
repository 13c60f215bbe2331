#pragma once

// Style-guided two-stage generation: prepares conditions, denoises the
// content / style / edge branches in lock-step with SD-Attn installed on
// every self-attention site, hands the decoded structure to stage 2 and
// exports the asset.

#include "sculpt/export.hpp"
#include "sculpt/run_config.hpp"

namespace sculpt {

struct PreparedConditions {
  Image content_image;  // preprocessed
  Image style_image;    // preprocessed (first style)
  Image edge_image;     // edges of the raw style, replayed through its record
  TransformRecord content_record;
  TransformRecord style_record;
  ConditionEmbedding content;
  ConditionEmbedding style;  // mean over styles when several are given
  ConditionEmbedding edge;
};

PreparedConditions prepare_conditions(const Image& content, std::span<const Image> styles,
                                      const RunConfig& config);

// Initial dense noise of a stage, [R^3, C]; sparse branches gather rows of it.
Matrix stage_noise(const RunConfig& config, const HostSpec& spec, int stage);

struct StageRecord {
  AttentionCounters totals;
  std::map<std::string, AttentionCounters> per_site;
  std::vector<StepInfo> steps;
  std::map<BranchRole, Matrix> initial_noise;  // per branch that ran
};

struct PassResult {
  PassPlan plan;
  Image content_input;  // preprocessed images the pass was conditioned on
  Image style_input;
  std::string content_source;
  std::string style_source;
  DenseLatent stage1_content;
  std::vector<Coord> content_voxels;  // decoded from stage1_content
  std::vector<Coord> style_voxels;    // empty if the style branch did not run
  SparseLatent stage2_content;
  StageRecord stage1;
  StageRecord stage2;
  MaskTrace trace;
};

struct RunOutcome {
  std::vector<PassResult> passes;
  AssetExport asset;
};

// Replaces the SD-Attn processor (same branch set) when set; used for the
// all-cross-attention reference run.
struct RunHooks {
  AttentionProcessor* processor = nullptr;
};

// One pass with an explicit plan. `content_voxels`, when given, replaces the
// content branch's decoded structure.
PassResult run_pass(const FlowHost& host, const PreparedConditions& conditions, const PassPlan& plan,
                    const RunConfig& config, const RunHooks& hooks = {},
                    const std::vector<Coord>* content_voxels = nullptr);

// Resolves the stage plan from config.guidance and runs every pass. The
// second geometry-only pass is conditioned on a rendered view of the first
// pass's asset, with the original content image as its style.
RunOutcome run_style_guided(const FlowHost& host, const Image& content, std::span<const Image> styles,
                            const RunConfig& config, const RunHooks& hooks = {});

// Loads images and host from the config, runs, and writes the export (plus
// mask_trace.jsonl when tracing) to `output_dir`.
RunOutcome run_style_guided(const RunConfig& config, const std::filesystem::path& output_dir);

// Unmodified backbone: sample_stage1 -> decode -> sample_stage2 with plain
// self-attention and the same noise as the guided pipeline.
SparseLatent run_plain_backbone(const FlowHost& host, const Image& content, const RunConfig& config);

struct SweepRun {
  int k = 0;
  RunOutcome outcome;
};

// Dual guidance with K applied to both stages, one run per value, sharing
// seed and noise.
std::vector<SweepRun> intensity_sweep(const FlowHost& host, const Image& content, std::span<const Image> styles,
                                      const RunConfig& config, std::span<const int> k_values);

nlohmann::json asset_manifest(const RunConfig& config, const RunOutcome& outcome, const std::string& trace_path);

}  // namespace sculpt
