// sculpt: style-guided two-stage 3D generation on the reference backbone.
//
//   sculpt init <dir>                       demo images + config.json
//   sculpt run <config.json> [overrides]    generate and export an asset
//   sculpt sweep [config.json] --k 0,8,16   one run per K (both stages)
//   sculpt validate-insight [config.json]   channel-selection policy report
//   sculpt export-view <asset dir>          re-render projection.png
//   sculpt dump-weights <dir>               write the toy weight archive
//
// Exit codes: 0 ok, 2 configuration error, 3 numeric abort, 1 anything else.
// SCULPT_OUTPUT_ROOT sets where runs without an output_dir are written.

#include "sculpt/insight.hpp"
#include "sculpt/pipeline.hpp"
#include "sculpt/synthetic.hpp"
#include "sculpt/weights_archive.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace sculpt;

namespace {

fs::path output_root() {
  const char* env = std::getenv("SCULPT_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("sculpt-out");
}

struct Overrides {
  std::string mode, policy;
  std::optional<int> k1, k2, steps1, steps2;
  std::optional<std::uint64_t> seed;
  bool trace = false;
  std::string out;

  void add_to(CLI::App* cmd, bool with_policy = true) {
    cmd->add_option("--mode", mode, "off, dual, texture_only or geometry_only");
    cmd->add_option("--k1", k1, "stage-1 K");
    cmd->add_option("--k2", k2, "stage-2 K");
    cmd->add_option("--seed", seed, "noise and mask seed");
    if (with_policy) cmd->add_option("--policy", policy, "channel selection: low, high or random");
    cmd->add_option("--steps1", steps1, "stage-1 steps (100 by default; 20 is enough for CI)");
    cmd->add_option("--steps2", steps2, "stage-2 steps");
    cmd->add_flag("--trace-masks", trace, "write per-step mask traces next to the export");
    cmd->add_option("--out", out, "output directory");
  }

  void apply(RunConfig& c) const {
    if (!mode.empty()) c.guidance.mode = parse_mode(mode);
    if (!policy.empty()) c.guidance.policy = parse_policy(policy);
    if (k1) c.guidance.k_stage1 = *k1;
    if (k2) c.guidance.k_stage2 = *k2;
    if (steps1) c.guidance.steps_stage1 = *steps1;
    if (steps2) c.guidance.steps_stage2 = *steps2;
    if (seed) c.seed = c.guidance.seed = *seed;
    if (trace) c.trace_masks = true;
    if (!out.empty()) c.output_dir = out;
    c.validate();
  }
};

fs::path run_dir(const RunConfig& c, const std::string& prefix) {
  return c.output_dir.empty() ? output_root() / (prefix + "-" + config_hash(c)) : c.output_dir;
}

struct Inputs {
  Image content;
  std::vector<Image> styles;
};

// Images named by the config, or the synthetic demo pair when there is no config.
Inputs load_inputs(const RunConfig& c, bool from_config) {
  if (!from_config) {
    auto demo = demo_inputs(c.seed);
    return {std::move(demo.content), {std::move(demo.style)}};
  }
  c.validate_paths();
  Inputs in{read_png(c.content_image), {}};
  for (const auto& s : c.style_images) in.styles.push_back(read_png(s));
  return in;
}

void print_counters(const RunOutcome& outcome) {
  for (std::size_t i = 0; i < outcome.passes.size(); ++i) {
    const auto& p = outcome.passes[i];
    std::cout << "pass " << i + 1 << ": stage1 K=" << p.plan.stage1.k << (p.plan.stage1.sd_attn ? "" : " (off)")
              << " cross=" << p.stage1.totals.cross_attention << ", stage2 K=" << p.plan.stage2.k
              << (p.plan.stage2.sd_attn ? "" : " (off)") << " cross=" << p.stage2.totals.cross_attention
              << ", voxels=" << p.stage2_content.coords.size() << "\n";
  }
}

int cmd_init(const std::string& dir) {
  fs::create_directories(dir);
  const auto demo = demo_inputs(1);
  write_png(fs::path(dir) / "content.png", demo.content);
  write_png(fs::path(dir) / "style.png", demo.style);
  RunConfig c;
  c.content_image = "content.png";
  c.style_images = {"style.png"};
  c.output_dir = "asset";
  c.guidance.steps_stage1 = c.guidance.steps_stage2 = 20;
  std::ofstream(fs::path(dir) / "config.json") << to_json(c).dump(2) << "\n";
  std::cout << "wrote " << dir << "/{content.png,style.png,config.json}\n";
  return 0;
}

int cmd_run(const std::string& config_path, const Overrides& o) {
  RunConfig c = load_run_config(config_path);
  o.apply(c);
  const fs::path dir = run_dir(c, "run");
  const RunOutcome outcome = run_style_guided(c, dir);
  print_counters(outcome);
  std::cout << "asset: " << dir.string() << " (" << outcome.asset.voxels.size() << " voxels)\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const Overrides& o, const std::vector<int>& ks) {
  RunConfig c = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  o.apply(c);
  const auto host = make_host(c);
  const Inputs in = load_inputs(c, !config_path.empty());
  const fs::path root = run_dir(c, "sweep");
  for (auto& run : intensity_sweep(*host, in.content, in.styles, c, ks)) {
    RunConfig rc = c;
    rc.guidance.mode = GuidanceMode::dual;
    rc.guidance.k_stage1 = rc.guidance.k_stage2 = run.k;
    ExportOptions options{c.export_projection, c.projection_cell, {}};
    std::ostringstream trace;
    run.outcome.passes[0].trace.write_jsonl(trace);
    options.extra_files["mask_trace.jsonl"] = trace.str();
    run.outcome.asset.manifest = asset_manifest(rc, run.outcome, "mask_trace.jsonl");
    const fs::path dir = root / ("k" + std::to_string(run.k));
    write_asset(run.outcome.asset, dir, options);
    std::cout << "K=" << run.k << ": " << run.outcome.asset.voxels.size() << " voxels -> " << dir.string() << "\n";
  }
  return 0;
}

int cmd_insight(const std::string& config_path, const Overrides& o, const std::vector<std::string>& policies,
                const std::vector<std::uint64_t>& seeds, const std::string& report_path) {
  RunConfig c = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  if (config_path.empty()) c.guidance.steps_stage1 = c.guidance.steps_stage2 = 20;
  o.apply(c);
  const auto host = make_host(c);
  const Inputs in = load_inputs(c, !config_path.empty());
  if (in.styles.empty()) throw ConfigError("validate-insight needs a style image");

  InsightOptions options;
  if (!policies.empty()) {
    options.policies.clear();
    for (const auto& p : policies) options.policies.push_back(parse_policy(p));
  }
  if (!seeds.empty()) options.seeds = seeds;
  options.k_stage1 = o.k1;
  options.k_stage2 = o.k2;

  const InsightReport report = validate_insight(*host, in.content, in.styles.front(), c, options);
  std::cout << report.to_text();
  const fs::path path = report_path.empty() ? output_root() / "insight_report.json" : fs::path(report_path);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream(path) << report.to_json().dump(2) << "\n";
  std::cout << "report: " << path.string() << "\n";
  return 0;
}

int cmd_export_view(const std::string& dir, const std::string& out, int cell) {
  const AssetExport asset = read_asset(dir);
  const fs::path path = out.empty() ? fs::path(dir) / "projection.png" : fs::path(out);
  write_png(path, render_projection(asset, cell));
  std::cout << "wrote " << path.string() << "\n";
  return 0;
}

int cmd_dump_weights(const std::string& dir, std::uint64_t seed) {
  ToyBackboneConfig config;
  config.weights_seed = seed;
  auto host = ToyFlowHost::seeded(config);
  save_weights(host, dir);
  std::cout << "wrote " << dir << "/weights.{json,bin}\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Style-guided two-stage 3D generation"};
  app.require_subcommand(1);

  std::string dir, config_path, out, report;
  Overrides overrides;

  auto* init = app.add_subcommand("init", "write demo inputs and a config");
  init->add_option("dir", dir, "target directory")->required();

  auto* run = app.add_subcommand("run", "run style-guided generation");
  run->add_option("config", config_path, "config JSON")->required();
  overrides.add_to(run);

  std::vector<int> ks{0, 8, 16, 32};
  auto* sweep = app.add_subcommand("sweep", "style-intensity sweep over K");
  sweep->add_option("config", config_path, "config JSON (demo inputs when omitted)");
  sweep->add_option("--k", ks, "K values, comma separated")->delimiter(',');
  overrides.add_to(sweep);

  std::vector<std::string> policies;
  std::vector<std::uint64_t> seeds;
  auto* insight = app.add_subcommand("validate-insight", "compare channel-selection policies");
  insight->add_option("config", config_path, "config JSON (demo inputs, 20/20 steps when omitted)");
  insight->add_option("--policy", policies, "policies to compare (default: random,high,low)")->delimiter(',');
  insight->add_option("--seeds", seeds, "seeds, comma separated")->delimiter(',');
  insight->add_option("--report", report, "report JSON path");
  overrides.add_to(insight, false);

  int cell = 16;
  auto* view = app.add_subcommand("export-view", "render projection.png of an exported asset");
  view->add_option("dir", dir, "asset directory")->required();
  view->add_option("--out", out, "PNG path");
  view->add_option("--cell", cell, "pixels per voxel cell");

  std::uint64_t weights_seed = ToyBackboneConfig{}.weights_seed;
  auto* dump = app.add_subcommand("dump-weights", "write the reference backbone's weight archive");
  dump->add_option("dir", dir, "target directory")->required();
  dump->add_option("--weights-seed", weights_seed, "weights seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*init) return cmd_init(dir);
    if (*run) return cmd_run(config_path, overrides);
    if (*sweep) return cmd_sweep(config_path, overrides, ks);
    if (*insight) return cmd_insight(config_path, overrides, policies, seeds, report);
    if (*view) return cmd_export_view(dir, out, cell);
    if (*dump) return cmd_dump_weights(dir, weights_seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
