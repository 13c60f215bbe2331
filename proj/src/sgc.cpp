#include "sculpt/sgc.hpp"

#include <cmath>

namespace sculpt {

const char* to_string(GuidanceMode mode) {
  switch (mode) {
    case GuidanceMode::off: return "off";
    case GuidanceMode::dual: return "dual";
    case GuidanceMode::texture_only: return "texture_only";
    case GuidanceMode::geometry_only: return "geometry_only";
  }
  return "?";
}

GuidanceMode parse_mode(std::string_view text) {
  if (text == "off") return GuidanceMode::off;
  if (text == "dual") return GuidanceMode::dual;
  if (text == "texture_only" || text == "texture") return GuidanceMode::texture_only;
  if (text == "geometry_only" || text == "geometry") return GuidanceMode::geometry_only;
  throw ConfigError("unknown guidance mode '" + std::string(text) +
                    "' (expected off, dual, texture_only or geometry_only)");
}

void GuidanceConfig::validate(int channels) const {
  auto check_k = [&](const std::optional<int>& k, const char* name) {
    if (k && (*k < 0 || *k > channels))
      throw ConfigError(std::string(name) + "=" + std::to_string(*k) + " outside [0, " +
                        std::to_string(channels) + "]");
  };
  check_k(k_stage1, "k_stage1");
  check_k(k_stage2, "k_stage2");
  check_k(k_refine, "k_refine");
  if (steps_stage1 < 1 || steps_stage2 < 1) throw ConfigError("step counts must be at least 1");
  if (!(cfg_stage1 >= 0.0) || !(cfg_stage2 >= 0.0)) throw ConfigError("CFG scales must be non-negative");
}

StageK dual_default_k(int channels) {
  require(channels >= 1, "channel count must be positive");
  return {static_cast<int>(std::lround(80.0 / 1024.0 * channels)),
          static_cast<int>(std::lround(800.0 / 1024.0 * channels))};
}

StageK texture_default_k(int channels) {
  const auto d = dual_default_k(channels);
  return {static_cast<int>(std::lround(d.stage1 / 4.0)), static_cast<int>(std::lround(d.stage2 / 4.0))};
}

StagePlan resolve_stage_plan(const GuidanceConfig& config, int channels) {
  config.validate(channels);
  const StageK dual = dual_default_k(channels);
  const StageK texture = texture_default_k(channels);
  StagePlan plan;
  switch (config.mode) {
    case GuidanceMode::off:
      plan.passes.push_back({{false, 0}, {false, 0}});
      break;
    case GuidanceMode::dual:
      plan.passes.push_back({{true, config.k_stage1.value_or(dual.stage1)},
                             {true, config.k_stage2.value_or(dual.stage2)}});
      break;
    case GuidanceMode::texture_only:
      plan.passes.push_back({{true, config.k_stage1.value_or(texture.stage1)},
                             {true, config.k_stage2.value_or(texture.stage2)}});
      break;
    case GuidanceMode::geometry_only:
      plan.passes.push_back({{true, config.k_stage1.value_or(dual.stage1)},
                             {true, config.k_stage2.value_or(dual.stage2)}});
      plan.passes.push_back({{false, 0}, {true, config.k_refine.value_or(texture.stage2)}});
      break;
    default:
      throw ContractViolation("unknown guidance mode value " + std::to_string(static_cast<int>(config.mode)));
  }
  return plan;
}

}  // namespace sculpt
