#pragma once

// Channel-selection comparison: for each policy, how far SD-Attn pulls the
// content latent away from the unguided run. Each stage is measured with
// guidance in the other stage switched off, so stage 2 runs on the
// baseline's voxel set.

#include "sculpt/pipeline.hpp"

namespace sculpt {

struct InsightOptions {
  std::vector<std::uint64_t> seeds{101, 202, 303};
  std::vector<SelectionPolicy> policies{SelectionPolicy::random, SelectionPolicy::high_variance,
                                        SelectionPolicy::low_variance};
  std::optional<int> k_stage1;  // default C / 4
  std::optional<int> k_stage2;  // default C / 4
};

struct InsightSample {
  std::uint64_t seed = 0;
  double stage1_distance = 0.0;  // RMS over the dense stage-1 latent
  double stage2_distance = 0.0;  // RMS over the stage-2 voxel latents
  double content_distance = 0.0;  // mean of the two
};

struct InsightRow {
  SelectionPolicy policy = SelectionPolicy::low_variance;
  std::vector<InsightSample> samples;
  double stage1_distance = 0.0;  // means over seeds
  double stage2_distance = 0.0;
  double content_distance = 0.0;
};

struct InsightReport {
  int k_stage1 = 0;
  int k_stage2 = 0;
  int steps_stage1 = 0;
  int steps_stage2 = 0;
  std::vector<InsightRow> rows;

  const InsightRow* row(SelectionPolicy policy) const;
  // Defined when both low and high were run: low < high on mean content distance.
  std::optional<bool> low_below_high() const;
  nlohmann::json to_json() const;
  std::string to_text() const;
};

double rms_distance(const Matrix& a, const Matrix& b);

InsightReport validate_insight(const FlowHost& host, const Image& content, const Image& style,
                               const RunConfig& config, const InsightOptions& options = {});

}  // namespace sculpt
