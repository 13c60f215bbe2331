#pragma once

// Asset export: voxels.bin (int32 LE, [L, 3]), colors.bin (float32 LE,
// [L, 3]), manifest.json and an optional top-down projection.png.

#include "sculpt/backbone.hpp"
#include "sculpt/image.hpp"

#include <filesystem>
#include <map>

#include <json.hpp>

namespace sculpt {

struct AssetExport {
  int resolution = 0;
  std::vector<Coord> voxels;
  Matrix colors;  // [L, 3] in [0, 1]
  nlohmann::json manifest;

  void validate() const;
};

// Voxels of a denoised stage-2 latent with the host's color readout.
AssetExport make_asset(const FlowHost& host, const SparseLatent& latent);

// Orthographic view along -z: cell (x, y) shows the voxel with the largest z
// in that column. Empty cells are transparent. RGBA, resolution * cell px.
Image render_projection(const AssetExport& asset, int cell);
// The same view composited over white, RGB.
Image render_view(const AssetExport& asset, int cell);

struct ExportOptions {
  bool projection = true;
  int cell = 16;
  std::map<std::string, std::string> extra_files;  // file name -> contents
};

// Writes into a sibling temp directory and renames it into place, so a
// failed export leaves nothing behind. An existing `dir` is replaced.
void write_asset(const AssetExport& asset, const std::filesystem::path& dir, const ExportOptions& options = {});
AssetExport read_asset(const std::filesystem::path& dir);

}  // namespace sculpt
