#include "sculpt/export.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace sculpt {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "asset files are written in host byte order");

void AssetExport::validate() const {
  require(!voxels.empty(), "asset has no voxels");
  require(colors.rows() == static_cast<Eigen::Index>(voxels.size()) && colors.cols() == 3,
          "asset needs one RGB color per voxel");
  require((colors.array() >= 0.0).all() && (colors.array() <= 1.0).all(), "asset colors must lie in [0, 1]");
}

AssetExport make_asset(const FlowHost& host, const SparseLatent& latent) {
  latent.validate();
  require(std::abs(latent.timestep) <= 1e-9, "export expects a fully denoised latent");
  AssetExport asset{latent.resolution, latent.coords, host.voxel_colors(latent.features), {}};
  asset.validate();
  return asset;
}

Image render_projection(const AssetExport& asset, int cell) {
  asset.validate();
  require(cell >= 1, "projection cell size must be positive");
  const int r = asset.resolution;
  std::vector<int> front(static_cast<std::size_t>(r * r), -1);
  for (std::size_t i = 0; i < asset.voxels.size(); ++i) {
    const auto& v = asset.voxels[i];
    int& slot = front[static_cast<std::size_t>(v[1] * r + v[0])];
    if (slot < 0 || asset.voxels[static_cast<std::size_t>(slot)][2] < v[2]) slot = static_cast<int>(i);
  }
  Image out(r * cell, r * cell, 4, 0.0);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      const int v = front[static_cast<std::size_t>((y / cell) * r + x / cell)];
      if (v < 0) continue;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = asset.colors(v, c);
      out.at(y, x, 3) = 1.0;
    }
  return out;
}

Image render_view(const AssetExport& asset, int cell) {
  const Image rgba = render_projection(asset, cell);
  Image out(rgba.width, rgba.height, 3);
  for (int y = 0; y < rgba.height; ++y)
    for (int x = 0; x < rgba.width; ++x) {
      const double a = rgba.at(y, x, 3);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = rgba.at(y, x, c) * a + (1.0 - a);
    }
  out.source_id = "asset-view";
  return out;
}

namespace {

template <typename T>
void write_array(const fs::path& path, const std::vector<T>& data) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!os) throw PipelineError("write failed: " + path.string());
}

template <typename T>
std::vector<T> read_array(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() % sizeof(T) != 0) throw ConfigError("truncated array file " + path.string());
  std::vector<T> out(bytes.size() / sizeof(T));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

}  // namespace

void write_asset(const AssetExport& asset, const fs::path& dir, const ExportOptions& options) {
  asset.validate();
  const fs::path target = fs::absolute(dir).lexically_normal();
  const fs::path staging = target.parent_path() / (target.filename().string() + ".partial");
  try {
    fs::remove_all(staging);
    fs::create_directories(staging);

    std::vector<std::int32_t> voxels;
    std::vector<float> colors;
    for (std::size_t i = 0; i < asset.voxels.size(); ++i) {
      for (int a = 0; a < 3; ++a) {
        voxels.push_back(asset.voxels[i][static_cast<std::size_t>(a)]);
        colors.push_back(static_cast<float>(asset.colors(static_cast<Eigen::Index>(i), a)));
      }
    }
    write_array(staging / "voxels.bin", voxels);
    write_array(staging / "colors.bin", colors);

    nlohmann::json manifest = asset.manifest;
    manifest["resolution"] = asset.resolution;
    manifest["voxel_count"] = asset.voxels.size();
    manifest["files"] = {{"voxels", "voxels.bin"}, {"colors", "colors.bin"}};
    if (options.projection) {
      write_png(staging / "projection.png", render_projection(asset, options.cell));
      manifest["files"]["projection"] = "projection.png";
    }
    for (const auto& [name, contents] : options.extra_files) {
      std::ofstream os(staging / name, std::ios::binary | std::ios::trunc);
      os << contents;
      if (!os) throw PipelineError("write failed: " + (staging / name).string());
    }
    std::ofstream(staging / "manifest.json") << manifest.dump(2) << '\n';

    fs::remove_all(target);
    fs::rename(staging, target);
  } catch (const fs::filesystem_error& e) {
    std::error_code ignored;
    fs::remove_all(staging, ignored);
    throw PipelineError("export to " + target.string() + " failed: " + e.what());
  } catch (...) {
    std::error_code ignored;
    fs::remove_all(staging, ignored);
    throw;
  }
}

AssetExport read_asset(const fs::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw ConfigError("no manifest.json in " + dir.string());
  AssetExport asset;
  try {
    asset.manifest = nlohmann::json::parse(mf);
    asset.resolution = asset.manifest.at("resolution");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad asset manifest in " + dir.string() + ": " + e.what());
  }
  const auto voxels = read_array<std::int32_t>(dir / "voxels.bin");
  const auto colors = read_array<float>(dir / "colors.bin");
  if (voxels.size() != colors.size() || voxels.size() % 3 != 0)
    throw ConfigError("voxel and color files disagree in " + dir.string());
  asset.colors.resize(static_cast<Eigen::Index>(voxels.size() / 3), 3);
  for (std::size_t i = 0; i < voxels.size() / 3; ++i) {
    asset.voxels.push_back({voxels[3 * i], voxels[3 * i + 1], voxels[3 * i + 2]});
    for (int a = 0; a < 3; ++a) asset.colors(static_cast<Eigen::Index>(i), a) = colors[3 * i + static_cast<std::size_t>(a)];
  }
  asset.validate();
  return asset;
}

}  // namespace sculpt
