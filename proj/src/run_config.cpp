#include "sculpt/run_config.hpp"

#include "sculpt/weights_archive.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace sculpt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* to_string(Stage2Noise n) { return n == Stage2Noise::fresh ? "fresh" : "reuse_stage1"; }
const char* to_string(StructureSource s) { return s == StructureSource::rerun ? "rerun" : "pass1"; }

json optional_k(const std::optional<int>& k) { return k ? json(*k) : json(nullptr); }

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!allowed.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

void read_k(const json& j, const char* key, std::optional<int>& out) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
    return;
  }
  int k = 0;
  read(j, key, k);
  out = k;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return (path.is_absolute() || base.empty()) ? path : base / path;
}

}  // namespace

void RunConfig::validate() const {
  if (backbone != "toy" && backbone != "mock-unet" && backbone != "archive")
    throw ConfigError("unknown backbone '" + backbone + "' (expected toy, mock-unet or archive)");
  if (backbone == "archive" && weights.empty()) throw ConfigError("backbone 'archive' needs a weights path");
  const int channels = backbone == "mock-unet" ? mock.channels : toy.channels;
  guidance.validate(channels);
  if (preprocess.resolution % embedder.patch != 0)
    throw ConfigError("model resolution must be divisible by the patch size");
  if (embedder.resolution != preprocess.resolution)
    throw ConfigError("embedder and preprocessing resolutions differ");
  const int condition_dim = backbone == "mock-unet" ? mock.condition_dim : toy.condition_dim;
  if (embedder.condition_dim != condition_dim)
    throw ConfigError("embedder condition_dim does not match the backbone");
  if (occupancy_threshold < 0.0 || occupancy_threshold > 1.0)
    throw ConfigError("occupancy threshold must lie in [0, 1]");
  if (projection_cell < 1) throw ConfigError("projection cell must be positive");
  EdgeRegistry::instance().get(edge_extractor);
}

void RunConfig::validate_paths() const {
  validate();
  if (content_image.empty()) throw ConfigError("no content image configured");
  if (!fs::exists(content_image)) throw ConfigError("content image not found: " + content_image.string());
  if (style_images.empty() && guidance.mode != GuidanceMode::off) throw ConfigError("no style image configured");
  for (const auto& s : style_images)
    if (!fs::exists(s)) throw ConfigError("style image not found: " + s.string());
}

json to_json(const RunConfig& c) {
  const auto& g = c.guidance;
  json styles = json::array();
  for (const auto& s : c.style_images) styles.push_back(s.string());
  return {
      {"backbone", c.backbone},
      {"toy",
       {{"grid_resolution", c.toy.grid_resolution},
        {"channels", c.toy.channels},
        {"heads", c.toy.heads},
        {"depth", c.toy.depth},
        {"condition_dim", c.toy.condition_dim},
        {"weights_seed", c.toy.weights_seed}}},
      {"mock",
       {{"grid_resolution", c.mock.grid_resolution},
        {"channels", c.mock.channels},
        {"heads", c.mock.heads},
        {"condition_dim", c.mock.condition_dim},
        {"levels", c.mock.levels},
        {"weights_seed", c.mock.weights_seed}}},
      {"weights", c.weights.string()},
      {"guidance",
       {{"mode", to_string(g.mode)},
        {"k_stage1", optional_k(g.k_stage1)},
        {"k_stage2", optional_k(g.k_stage2)},
        {"k_refine", optional_k(g.k_refine)},
        {"cfg_stage1", g.cfg_stage1},
        {"cfg_stage2", g.cfg_stage2},
        {"steps_stage1", g.steps_stage1},
        {"steps_stage2", g.steps_stage2},
        {"policy", to_string(g.policy)},
        {"freeze_masks", g.freeze_masks}}},
      {"preprocess",
       {{"resolution", c.preprocess.resolution},
        {"background_threshold", c.preprocess.background_threshold},
        {"crop_margin", c.preprocess.crop_margin}}},
      {"embedder",
       {{"patch", c.embedder.patch},
        {"condition_dim", c.embedder.condition_dim},
        {"seed", c.embedder.seed},
        {"bias", c.embedder.bias}}},
      {"edge_extractor", c.edge_extractor},
      {"content_image", c.content_image.string()},
      {"style_images", styles},
      {"output_dir", c.output_dir.string()},
      {"seed", c.seed},
      {"stage2_noise", to_string(c.stage2_noise)},
      {"structure_source", to_string(c.structure_source)},
      {"occupancy_threshold", c.occupancy_threshold},
      {"trace_masks", c.trace_masks},
      {"export", {{"projection", c.export_projection}, {"cell", c.projection_cell}}},
  };
}

RunConfig run_config_from_json(const json& j, const fs::path& base) {
  check_keys(j,
             {"backbone", "toy", "mock", "weights", "guidance", "preprocess", "embedder", "edge_extractor",
              "content_image", "style_images", "output_dir", "seed", "stage2_noise", "structure_source",
              "occupancy_threshold", "trace_masks", "export"},
             "run config");
  RunConfig c;
  read(j, "backbone", c.backbone);
  if (j.contains("toy")) {
    const auto& t = j.at("toy");
    check_keys(t, {"grid_resolution", "channels", "heads", "depth", "condition_dim", "weights_seed"}, "toy");
    read(t, "grid_resolution", c.toy.grid_resolution);
    read(t, "channels", c.toy.channels);
    read(t, "heads", c.toy.heads);
    read(t, "depth", c.toy.depth);
    read(t, "condition_dim", c.toy.condition_dim);
    read(t, "weights_seed", c.toy.weights_seed);
  }
  if (j.contains("mock")) {
    const auto& m = j.at("mock");
    check_keys(m, {"grid_resolution", "channels", "heads", "condition_dim", "levels", "weights_seed"}, "mock");
    read(m, "grid_resolution", c.mock.grid_resolution);
    read(m, "channels", c.mock.channels);
    read(m, "heads", c.mock.heads);
    read(m, "condition_dim", c.mock.condition_dim);
    read(m, "levels", c.mock.levels);
    read(m, "weights_seed", c.mock.weights_seed);
  }
  std::string path;
  if (j.contains("weights")) {
    read(j, "weights", path);
    c.weights = path.empty() ? fs::path() : resolve(base, path);
  }
  if (j.contains("guidance")) {
    const auto& g = j.at("guidance");
    check_keys(g,
               {"mode", "k_stage1", "k_stage2", "k_refine", "cfg_stage1", "cfg_stage2", "steps_stage1",
                "steps_stage2", "policy", "freeze_masks"},
               "guidance");
    std::string text;
    if (g.contains("mode")) {
      read(g, "mode", text);
      c.guidance.mode = parse_mode(text);
    }
    read_k(g, "k_stage1", c.guidance.k_stage1);
    read_k(g, "k_stage2", c.guidance.k_stage2);
    read_k(g, "k_refine", c.guidance.k_refine);
    read(g, "cfg_stage1", c.guidance.cfg_stage1);
    read(g, "cfg_stage2", c.guidance.cfg_stage2);
    read(g, "steps_stage1", c.guidance.steps_stage1);
    read(g, "steps_stage2", c.guidance.steps_stage2);
    if (g.contains("policy")) {
      read(g, "policy", text);
      c.guidance.policy = parse_policy(text);
    }
    read(g, "freeze_masks", c.guidance.freeze_masks);
  }
  if (j.contains("preprocess")) {
    const auto& p = j.at("preprocess");
    check_keys(p, {"resolution", "background_threshold", "crop_margin"}, "preprocess");
    read(p, "resolution", c.preprocess.resolution);
    read(p, "background_threshold", c.preprocess.background_threshold);
    read(p, "crop_margin", c.preprocess.crop_margin);
  }
  c.embedder.resolution = c.preprocess.resolution;
  if (j.contains("embedder")) {
    const auto& e = j.at("embedder");
    check_keys(e, {"patch", "condition_dim", "seed", "bias"}, "embedder");
    read(e, "patch", c.embedder.patch);
    read(e, "condition_dim", c.embedder.condition_dim);
    read(e, "seed", c.embedder.seed);
    read(e, "bias", c.embedder.bias);
  }
  read(j, "edge_extractor", c.edge_extractor);
  if (j.contains("content_image")) {
    read(j, "content_image", path);
    c.content_image = resolve(base, path);
  }
  if (j.contains("style_images")) {
    std::vector<std::string> styles;
    read(j, "style_images", styles);
    for (const auto& s : styles) c.style_images.push_back(resolve(base, s));
  }
  if (j.contains("output_dir")) {
    read(j, "output_dir", path);
    c.output_dir = path.empty() ? fs::path() : resolve(base, path);
  }
  read(j, "seed", c.seed);
  std::string text;
  if (j.contains("stage2_noise")) {
    read(j, "stage2_noise", text);
    if (text == "fresh") c.stage2_noise = Stage2Noise::fresh;
    else if (text == "reuse_stage1") c.stage2_noise = Stage2Noise::reuse_stage1;
    else throw ConfigError("stage2_noise must be 'fresh' or 'reuse_stage1'");
  }
  if (j.contains("structure_source")) {
    read(j, "structure_source", text);
    if (text == "rerun") c.structure_source = StructureSource::rerun;
    else if (text == "pass1") c.structure_source = StructureSource::pass1;
    else throw ConfigError("structure_source must be 'rerun' or 'pass1'");
  }
  read(j, "occupancy_threshold", c.occupancy_threshold);
  read(j, "trace_masks", c.trace_masks);
  if (j.contains("export")) {
    const auto& e = j.at("export");
    check_keys(e, {"projection", "cell"}, "export");
    read(e, "projection", c.export_projection);
    read(e, "cell", c.projection_cell);
  }
  c.guidance.seed = c.seed;
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

std::string config_hash(const RunConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(config).dump())));
  return buf;
}

std::unique_ptr<FlowHost> make_host(const RunConfig& config) {
  config.validate();
  if (config.backbone == "mock-unet") return std::make_unique<MockUNetHost>(config.mock);
  if (config.backbone == "archive") return std::make_unique<ToyFlowHost>(load_weights(config.weights));
  return std::make_unique<ToyFlowHost>(ToyFlowHost::seeded(config.toy));
}

}  // namespace sculpt
