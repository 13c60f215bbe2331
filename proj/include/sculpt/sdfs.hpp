#pragma once

// Style-disentangled feature selection and the style-disentangled attention
// (SD-Attn) site processor built on it.
//
// Per site and step: the edge branch's self-attention output is reduced to a
// per-channel population variance over its patches; the K channels with the
// smallest variance form a binary style mask; masked channels of the content
// output come from cross-attention against the style branch, the rest from
// plain self-attention of the content-preserve copy.

#include "sculpt/hooks.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sculpt {

enum class SelectionPolicy { low_variance, high_variance, random };

const char* to_string(SelectionPolicy policy);
// Accepts "low", "high", "random" and the long forms "low_variance" / "high_variance".
SelectionPolicy parse_policy(std::string_view text);

struct ChannelMask {
  std::vector<std::uint8_t> bits;
  int k = 0;
  SelectionPolicy policy = SelectionPolicy::low_variance;

  std::size_t size() const { return bits.size(); }
  bool selected(std::size_t channel) const { return bits[channel] != 0; }
  std::vector<int> selected_channels() const;
};

// Population variance (divide by N) of every column.
Vector channel_variance(const Matrix& features);

// Ties in variance are broken by lower channel index for both sorted
// policies. `seed` only matters for SelectionPolicy::random.
ChannelMask build_style_mask(const Vector& variances, int k, SelectionPolicy policy,
                             std::uint64_t seed = 0);

// An independent value copy of the content features.
Matrix content_preserve_copy(const Matrix& content);

struct BranchFeatures {
  Matrix content;           // f_c  [N_c, C]
  Matrix style;             // f_s  [N_s, C]
  Matrix edge;              // f_e  [N_e, C]
  Matrix content_preserve;  // f_cp [N_c, C]

  void validate() const;
};

// Channel-wise selection: out(:, c) = masked(:, c) where the mask is set,
// complement(:, c) elsewhere. Values are copied, never blended.
Matrix splice_channels(const Matrix& masked, const Matrix& complement, const ChannelMask& mask);

Matrix sd_attention(const BranchFeatures& branches, const ChannelMask& mask, const SiteWeights& weights);

Vector edge_filter_variances(const Matrix& edge, const SiteWeights& weights);

struct MaskTraceEntry {
  int stage = 1;
  int step = 0;
  std::string site;
  int k = 0;
  SelectionPolicy policy = SelectionPolicy::low_variance;
  std::vector<int> channels;
};

class MaskTrace {
 public:
  void record(MaskTraceEntry entry) { entries_.push_back(std::move(entry)); }
  const std::vector<MaskTraceEntry>& entries() const { return entries_; }
  // One JSON object per line: {"stage","step","site","k","policy","channels"}.
  void write_jsonl(std::ostream& os) const;

 private:
  std::vector<MaskTraceEntry> entries_;
};

struct StageGuidance {
  bool sd_attn = false;
  int k = 0;
};

struct SdAttnSettings {
  std::array<StageGuidance, 2> stages{};
  SelectionPolicy policy = SelectionPolicy::low_variance;
  std::uint64_t seed = 0;
  // Compute each site's mask at the first step of the stage and reuse it.
  bool freeze_masks = false;
};

// Run-scoped SD-Attn state: settings, frozen masks, optional trace. One
// instance per run; not shared between concurrent runs.
class SdAttentionProcessor final : public AttentionProcessor {
 public:
  explicit SdAttentionProcessor(SdAttnSettings settings, MaskTrace* trace = nullptr);

  std::vector<Matrix> process(const SiteCall& call, std::span<const StreamView> streams) override;

  const SdAttnSettings& settings() const { return settings_; }

 private:
  ChannelMask mask_for(const SiteCall& call, const Matrix& edge_attention);

  SdAttnSettings settings_;
  MaskTrace* trace_;
  std::map<std::string, ChannelMask> frozen_;
};

}  // namespace sculpt
