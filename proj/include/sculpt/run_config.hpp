#pragma once

// Run configuration: one JSON document, overridable from the command line.

#include "sculpt/backbone.hpp"
#include "sculpt/conditioning.hpp"
#include "sculpt/mock_host.hpp"
#include "sculpt/sgc.hpp"

#include <filesystem>
#include <memory>

#include <json.hpp>

namespace sculpt {

enum class Stage2Noise { fresh, reuse_stage1 };
// Where the second geometry-only pass takes its content voxels from:
// decoded from its own stage-1 run, or copied from the first pass's asset.
enum class StructureSource { rerun, pass1 };

struct RunConfig {
  std::string backbone = "toy";  // "toy", "mock-unet" or "archive"
  ToyBackboneConfig toy;
  MockHostConfig mock;
  std::filesystem::path weights;  // archive directory when backbone == "archive"

  GuidanceConfig guidance;
  PreprocessOptions preprocess;
  EmbedderConfig embedder;
  std::string edge_extractor = "sobel";

  std::filesystem::path content_image;
  std::vector<std::filesystem::path> style_images;
  std::filesystem::path output_dir;

  std::uint64_t seed = 0;
  Stage2Noise stage2_noise = Stage2Noise::fresh;
  StructureSource structure_source = StructureSource::rerun;
  double occupancy_threshold = 0.5;
  bool trace_masks = false;
  bool export_projection = true;
  int projection_cell = 16;

  // Model-level checks (no file system access).
  void validate() const;
  // validate() plus: input images exist.
  void validate_paths() const;
};

nlohmann::json to_json(const RunConfig& config);
// Missing keys keep their defaults; unknown keys and bad values are ConfigErrors.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

// FNV-1a of the canonical JSON form, as 16 hex digits.
std::string config_hash(const RunConfig& config);

std::unique_ptr<FlowHost> make_host(const RunConfig& config);

}  // namespace sculpt
