#include "sculpt/insight.hpp"

#include <cmath>
#include <cstdio>

namespace sculpt {

double rms_distance(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "rms_distance: shapes differ");
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

const InsightRow* InsightReport::row(SelectionPolicy policy) const {
  for (const auto& r : rows)
    if (r.policy == policy) return &r;
  return nullptr;
}

std::optional<bool> InsightReport::low_below_high() const {
  const auto* low = row(SelectionPolicy::low_variance);
  const auto* high = row(SelectionPolicy::high_variance);
  if (!low || !high) return std::nullopt;
  return low->content_distance < high->content_distance;
}

nlohmann::json InsightReport::to_json() const {
  nlohmann::json policies = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : r.samples)
      samples.push_back({{"seed", s.seed},
                         {"stage1_distance", s.stage1_distance},
                         {"stage2_distance", s.stage2_distance},
                         {"content_distance", s.content_distance}});
    policies.push_back({{"policy", to_string(r.policy)},
                        {"stage1_distance", r.stage1_distance},
                        {"stage2_distance", r.stage2_distance},
                        {"content_distance", r.content_distance},
                        {"samples", samples}});
  }
  nlohmann::json j{{"k", {{"stage1", k_stage1}, {"stage2", k_stage2}}},
                   {"steps", {{"stage1", steps_stage1}, {"stage2", steps_stage2}}},
                   {"policies", policies}};
  const auto gate = low_below_high();
  j["low_below_high"] = gate ? nlohmann::json(*gate) : nlohmann::json(nullptr);
  return j;
}

std::string InsightReport::to_text() const {
  std::string out = "policy          stage1_rms   stage2_rms   content_distance\n";
  char line[128];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-14s  %10.6f   %10.6f   %10.6f\n", to_string(r.policy), r.stage1_distance,
                  r.stage2_distance, r.content_distance);
    out += line;
  }
  if (const auto gate = low_below_high())
    out += std::string("low_variance < high_variance: ") + (*gate ? "yes" : "no") + "\n";
  return out;
}

InsightReport validate_insight(const FlowHost& host, const Image& content, const Image& style,
                               const RunConfig& config, const InsightOptions& options) {
  require(!options.seeds.empty() && !options.policies.empty(), "insight validation needs seeds and policies");
  const int channels = host.spec().channels;
  InsightReport report;
  report.k_stage1 = options.k_stage1.value_or(channels / 4);
  report.k_stage2 = options.k_stage2.value_or(channels / 4);
  report.steps_stage1 = config.guidance.steps_stage1;
  report.steps_stage2 = config.guidance.steps_stage2;
  for (auto p : options.policies) report.rows.push_back(InsightRow{p, {}, 0, 0, 0});

  const PreparedConditions cond = prepare_conditions(content, std::span<const Image>(&style, 1), config);
  const PassPlan off{{false, 0}, {false, 0}};
  const PassPlan stage1_only{{true, report.k_stage1}, {false, 0}};
  const PassPlan stage2_only{{false, 0}, {true, report.k_stage2}};

  for (auto seed : options.seeds) {
    RunConfig c = config;
    c.seed = seed;
    c.guidance.seed = seed;
    const PassResult base = run_pass(host, cond, off, c);
    for (auto& row : report.rows) {
      c.guidance.policy = row.policy;
      const PassResult first = run_pass(host, cond, stage1_only, c);
      const PassResult second = run_pass(host, cond, stage2_only, c);
      if (second.content_voxels != base.content_voxels)
        throw PipelineError("stage-2 insight run decoded a different voxel set than the baseline");
      InsightSample s;
      s.seed = seed;
      s.stage1_distance = rms_distance(first.stage1_content.features, base.stage1_content.features);
      s.stage2_distance = rms_distance(second.stage2_content.features, base.stage2_content.features);
      s.content_distance = 0.5 * (s.stage1_distance + s.stage2_distance);
      row.samples.push_back(s);
    }
  }
  for (auto& row : report.rows) {
    for (const auto& s : row.samples) {
      row.stage1_distance += s.stage1_distance;
      row.stage2_distance += s.stage2_distance;
      row.content_distance += s.content_distance;
    }
    const double n = static_cast<double>(row.samples.size());
    row.stage1_distance /= n;
    row.stage2_distance /= n;
    row.content_distance /= n;
  }
  return report;
}

}  // namespace sculpt
