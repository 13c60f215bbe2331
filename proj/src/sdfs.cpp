#include "sculpt/sdfs.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

#include <json.hpp>

namespace sculpt {

const char* to_string(SelectionPolicy policy) {
  switch (policy) {
    case SelectionPolicy::low_variance: return "low_variance";
    case SelectionPolicy::high_variance: return "high_variance";
    case SelectionPolicy::random: return "random";
  }
  return "?";
}

SelectionPolicy parse_policy(std::string_view text) {
  if (text == "low" || text == "low_variance") return SelectionPolicy::low_variance;
  if (text == "high" || text == "high_variance") return SelectionPolicy::high_variance;
  if (text == "random") return SelectionPolicy::random;
  throw ConfigError("unknown channel-selection policy '" + std::string(text) +
                    "' (expected low, high or random)");
}

std::vector<int> ChannelMask::selected_channels() const {
  std::vector<int> out;
  for (std::size_t c = 0; c < bits.size(); ++c)
    if (bits[c]) out.push_back(static_cast<int>(c));
  return out;
}

Vector channel_variance(const Matrix& features) {
  require(features.rows() >= 1, "channel_variance needs at least one patch");
  require(all_finite(features), "channel_variance: features must be finite");
  const double n = static_cast<double>(features.rows());
  const RowVector mean = features.colwise().sum() / n;
  const Matrix centered = features.rowwise() - mean;
  return (centered.array().square().colwise().sum() / n).transpose();
}

ChannelMask build_style_mask(const Vector& variances, int k, SelectionPolicy policy,
                             std::uint64_t seed) {
  const int channels = static_cast<int>(variances.size());
  if (k < 0 || k > channels)
    throw ContractViolation("mask size K=" + std::to_string(k) + " outside [0, " +
                            std::to_string(channels) + "]");
  require(variances.allFinite(), "build_style_mask: variances must be finite");

  ChannelMask mask{std::vector<std::uint8_t>(static_cast<std::size_t>(channels), 0), k, policy};
  std::vector<int> order(static_cast<std::size_t>(channels));
  std::iota(order.begin(), order.end(), 0);

  switch (policy) {
    case SelectionPolicy::low_variance:
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return variances[a] < variances[b]; });
      break;
    case SelectionPolicy::high_variance:
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return variances[a] > variances[b]; });
      break;
    case SelectionPolicy::random: {
      Rng rng(seed);
      // Partial Fisher-Yates: the first k slots end up uniformly drawn.
      for (int i = 0; i < k; ++i) {
        const auto j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(channels - i)));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
      }
      break;
    }
  }
  for (int i = 0; i < k; ++i) mask.bits[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
  return mask;
}

Matrix content_preserve_copy(const Matrix& content) {
  require(all_finite(content), "content_preserve_copy: features must be finite");
  return Matrix(content);
}

void BranchFeatures::validate() const {
  const auto c = content.cols();
  require(style.cols() == c && edge.cols() == c && content_preserve.cols() == c,
          "branch features must share the channel count");
  require(content_preserve.rows() == content.rows(),
          "content-preserve copy must have as many rows as the content branch");
  require(content.rows() >= 1 && style.rows() >= 1 && edge.rows() >= 1, "branches must be non-empty");
  require(all_finite(content) && all_finite(style) && all_finite(edge) && all_finite(content_preserve),
          "branch features must be finite");
}

Matrix splice_channels(const Matrix& masked, const Matrix& complement, const ChannelMask& mask) {
  require(masked.rows() == complement.rows() && masked.cols() == complement.cols(),
          "splice_channels: sources differ in shape");
  require(static_cast<Eigen::Index>(mask.size()) == masked.cols(), "mask length must equal channel count");
  Matrix out(masked.rows(), masked.cols());
  for (Eigen::Index c = 0; c < masked.cols(); ++c)
    out.col(c) = mask.selected(static_cast<std::size_t>(c)) ? masked.col(c) : complement.col(c);
  return out;
}

Matrix sd_attention(const BranchFeatures& branches, const ChannelMask& mask, const SiteWeights& weights) {
  branches.validate();
  require(static_cast<Eigen::Index>(mask.size()) == branches.content.cols(),
          "mask length must equal channel count");
  const auto c = qkv_project(branches.content, weights);
  const auto s = qkv_project(branches.style, weights);
  const auto cp = qkv_project(branches.content_preserve, weights);
  return splice_channels(cross_3d_attention(c.q, s.k, s.v, c.heads), self_attention(cp), mask);
}

Vector edge_filter_variances(const Matrix& edge, const SiteWeights& weights) {
  return channel_variance(self_attention(qkv_project(edge, weights)));
}

void MaskTrace::write_jsonl(std::ostream& os) const {
  for (const auto& e : entries_) {
    nlohmann::json j{{"stage", e.stage},   {"step", e.step},
                     {"site", e.site},     {"k", e.k},
                     {"policy", to_string(e.policy)}, {"channels", e.channels}};
    os << j.dump() << '\n';
  }
}

SdAttentionProcessor::SdAttentionProcessor(SdAttnSettings settings, MaskTrace* trace)
    : settings_(settings), trace_(trace) {}

ChannelMask SdAttentionProcessor::mask_for(const SiteCall& call, const Matrix& edge_attention) {
  if (settings_.freeze_masks) {
    if (auto it = frozen_.find(call.site.name); it != frozen_.end()) return it->second;
  }
  const auto& guidance = settings_.stages[static_cast<std::size_t>(call.site.stage - 1)];
  const auto seed =
      derive_seed(settings_.seed, call.site.name + "#" + std::to_string(call.step));
  auto mask = build_style_mask(channel_variance(edge_attention), guidance.k, settings_.policy, seed);
  if (settings_.freeze_masks) frozen_.emplace(call.site.name, mask);
  return mask;
}

std::vector<Matrix> SdAttentionProcessor::process(const SiteCall& call,
                                                  std::span<const StreamView> streams) {
  const auto& guidance = settings_.stages[static_cast<std::size_t>(call.site.stage - 1)];
  const int content = find_stream(streams, BranchRole::content);

  std::vector<Matrix> out(streams.size());
  for (std::size_t i = 0; i < streams.size(); ++i) {
    if (guidance.sd_attn && static_cast<int>(i) == content) continue;
    out[i] = plain_self_attention(call.site, *streams[i].tokens, call.counters);
  }
  if (!guidance.sd_attn || content < 0) return out;

  const int style = find_stream(streams, BranchRole::style);
  const int edge = find_stream(streams, BranchRole::edge);
  const int preserve = find_stream(streams, BranchRole::content_preserve);
  if (style < 0 || edge < 0 || preserve < 0)
    throw PipelineError("SD-Attn at " + call.site.name +
                        " needs conditional style, edge and content-preserve streams");

  const ChannelMask mask = mask_for(call, out[static_cast<std::size_t>(edge)]);
  if (trace_ != nullptr)
    trace_->record({call.site.stage, call.step, call.site.name, mask.k, mask.policy,
                    mask.selected_channels()});

  const Matrix& preserved = out[static_cast<std::size_t>(preserve)];
  if (mask.k == 0) {
    out[static_cast<std::size_t>(content)] = preserved;
    return out;
  }
  const auto& weights = *call.site.weights;
  const auto c = qkv_project(*streams[static_cast<std::size_t>(content)].tokens, weights);
  const auto s = qkv_project(*streams[static_cast<std::size_t>(style)].tokens, weights);
  ++call.counters.cross_attention;
  out[static_cast<std::size_t>(content)] =
      splice_channels(cross_3d_attention(c.q, s.k, s.v, c.heads), preserved, mask);
  return out;
}

}  // namespace sculpt
