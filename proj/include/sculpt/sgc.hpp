#pragma once

// Style guidance control: maps a guidance mode and K overrides to which
// stages run SD-Attn, with what K, over how many passes.

#include "sculpt/sdfs.hpp"

#include <optional>
#include <string_view>
#include <vector>

namespace sculpt {

enum class GuidanceMode { off, dual, texture_only, geometry_only };

const char* to_string(GuidanceMode mode);
GuidanceMode parse_mode(std::string_view text);  // ConfigError on unknown names

struct GuidanceConfig {
  GuidanceMode mode = GuidanceMode::dual;
  // Unset K values fall back to the channel-scaled defaults below.
  std::optional<int> k_stage1;
  std::optional<int> k_stage2;
  // Stage-2 K of the second geometry-only pass.
  std::optional<int> k_refine;
  double cfg_stage1 = 6.5;
  double cfg_stage2 = 3.5;
  int steps_stage1 = 100;
  int steps_stage2 = 100;
  SelectionPolicy policy = SelectionPolicy::low_variance;
  std::uint64_t seed = 0;
  bool freeze_masks = false;

  // ConfigError on K outside [0, channels], steps < 1 or negative CFG.
  void validate(int channels) const;
};

struct StageK {
  int stage1 = 0;
  int stage2 = 0;
};

// round(80/1024 * C) and round(800/1024 * C): 80/800 at C = 1024, 3/25 at C = 32.
StageK dual_default_k(int channels);
// A quarter of the dual defaults, rounded.
StageK texture_default_k(int channels);

struct PassPlan {
  StageGuidance stage1;
  StageGuidance stage2;
};

struct StagePlan {
  std::vector<PassPlan> passes;
  int pass_count() const { return static_cast<int>(passes.size()); }
};

StagePlan resolve_stage_plan(const GuidanceConfig& config, int channels);

}  // namespace sculpt
