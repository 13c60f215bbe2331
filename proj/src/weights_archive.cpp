#include "sculpt/weights_archive.hpp"

#include <bit>
#include <fstream>

#include <json.hpp>

namespace sculpt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "weight archive assumes a little-endian host");

constexpr const char* kFormat = "sculpt-weights-v1";

json config_json(const ToyBackboneConfig& c) {
  return {{"grid_resolution", c.grid_resolution}, {"channels", c.channels},
          {"heads", c.heads},                     {"depth", c.depth},
          {"condition_dim", c.condition_dim},     {"seed", c.weights_seed}};
}

}  // namespace

void save_weights(ToyFlowHost& host, const fs::path& dir) {
  fs::create_directories(dir);
  const fs::path bin_path = dir / "weights.bin";
  std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
  if (!bin) throw PipelineError("cannot write " + bin_path.string());

  json tensors = json::array();
  std::uint64_t offset = 0;
  host.visit([&](const std::string& name, Matrix& m) {
    const auto count = static_cast<std::uint64_t>(m.size());
    tensors.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", offset}, {"count", count}});
    bin.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(count * sizeof(double)));
    offset += count;
  });
  if (!bin) throw PipelineError("write failed: " + bin_path.string());

  json manifest{{"format", kFormat}, {"config", config_json(host.config())},
                {"seed", host.config().weights_seed}, {"tensors", tensors}};
  std::ofstream(dir / "weights.json") << manifest.dump(2) << '\n';
}

ToyFlowHost load_weights(const fs::path& dir) {
  std::ifstream mf(dir / "weights.json");
  if (!mf) throw ConfigError("missing weight manifest: " + (dir / "weights.json").string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw ConfigError("bad weight manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != kFormat) throw ConfigError("unsupported weight archive format");

  const auto& c = manifest.at("config");
  ToyBackboneConfig config;
  config.grid_resolution = c.at("grid_resolution");
  config.channels = c.at("channels");
  config.heads = c.at("heads");
  config.depth = c.at("depth");
  config.condition_dim = c.at("condition_dim");
  config.weights_seed = c.at("seed");

  std::map<std::string, json> index;
  for (const auto& t : manifest.at("tensors")) index[t.at("name")] = t;

  std::ifstream bin(dir / "weights.bin", std::ios::binary);
  if (!bin) throw ConfigError("missing weight data: " + (dir / "weights.bin").string());

  ToyFlowHost host = ToyFlowHost::zeros(config);
  host.visit([&](const std::string& name, Matrix& m) {
    auto it = index.find(name);
    if (it == index.end()) throw ConfigError("weight archive lacks tensor " + name);
    const auto& t = it->second;
    if (t.at("shape")[0].get<Eigen::Index>() != m.rows() || t.at("shape")[1].get<Eigen::Index>() != m.cols())
      throw ConfigError("tensor " + name + " has shape " + t.at("shape").dump() + ", expected " + shape_string(m));
    bin.seekg(static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>() * sizeof(double)));
    bin.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!bin) throw ConfigError("weight data truncated at tensor " + name);
  });
  return host;
}

}  // namespace sculpt
