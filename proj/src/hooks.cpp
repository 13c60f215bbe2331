#include "sculpt/hooks.hpp"

#include <set>

namespace sculpt {

const char* to_string(BranchRole role) {
  switch (role) {
    case BranchRole::content: return "content";
    case BranchRole::style: return "style";
    case BranchRole::edge: return "edge";
    case BranchRole::content_preserve: return "content_preserve";
  }
  return "?";
}

namespace {

std::string stream_label(const StreamView& s) {
  return std::string(s.conditional ? "" : "unconditional ") + to_string(s.role);
}

}  // namespace

Matrix plain_self_attention(const SiteDescriptor& site, const Matrix& tokens,
                            AttentionCounters& counters) {
  require(site.weights != nullptr, "site has no weights: " + site.name);
  ++counters.self_attention;
  return self_attention(qkv_project(tokens, *site.weights));
}

int find_stream(std::span<const StreamView> streams, BranchRole role, bool conditional) {
  for (std::size_t i = 0; i < streams.size(); ++i)
    if (streams[i].role == role && streams[i].conditional == conditional) return static_cast<int>(i);
  return -1;
}

std::vector<Matrix> SelfAttentionProcessor::process(const SiteCall& call,
                                                    std::span<const StreamView> streams) {
  std::vector<Matrix> out;
  out.reserve(streams.size());
  for (const auto& s : streams) out.push_back(plain_self_attention(call.site, *s.tokens, call.counters));
  return out;
}

std::vector<Matrix> FullCrossProcessor::process(const SiteCall& call,
                                                std::span<const StreamView> streams) {
  const int content = find_stream(streams, BranchRole::content);
  const int style = find_stream(streams, BranchRole::style);
  if (content >= 0 && style < 0)
    throw PipelineError("full cross-attention at " + call.site.name + " needs a style stream");

  std::vector<Matrix> out;
  out.reserve(streams.size());
  for (std::size_t i = 0; i < streams.size(); ++i) {
    if (static_cast<int>(i) == content) {
      const auto c = qkv_project(*streams[i].tokens, *call.site.weights);
      const auto s = qkv_project(*streams[style].tokens, *call.site.weights);
      ++call.counters.cross_attention;
      out.push_back(cross_3d_attention(c.q, s.k, s.v, c.heads));
    } else {
      out.push_back(plain_self_attention(call.site, *streams[i].tokens, call.counters));
    }
  }
  return out;
}

void HookProtocol::bind(const SiteDescriptor& site, AttentionProcessor& processor) {
  if (bindings_.contains(site.name))
    throw ConfigError("attention site bound twice: " + site.name);
  bindings_[site.name] = Binding{&processor, site.stage};
  counters_[site.name] = AttentionCounters{};
}

bool HookProtocol::is_bound(const std::string& site_name) const { return bindings_.contains(site_name); }

void HookProtocol::verify(std::span<const SiteDescriptor> sites) const {
  std::set<std::string> expected;
  for (const auto& s : sites) {
    if (!bindings_.contains(s.name)) throw ConfigError("attention site left unbound: " + s.name);
    expected.insert(s.name);
  }
  for (const auto& [name, binding] : bindings_)
    if (!expected.contains(name)) throw ConfigError("binding for unknown attention site: " + name);
}

void HookProtocol::begin_step(const StepInfo& info) {
  current_step_ = info.step;
  steps_.push_back(info);
}

std::vector<Matrix> HookProtocol::attend(const SiteDescriptor& site, std::span<const StreamView> streams) {
  const auto it = bindings_.find(site.name);
  if (it == bindings_.end()) throw PipelineError("forward pass reached unbound site " + site.name);
  for (const auto& s : streams)
    if (!all_finite(*s.tokens))
      throw NumericError("non-finite input to " + site.name + " in the " + stream_label(s) + " stream");
  SiteCall call{site, current_step_, counters_[site.name]};
  auto out = it->second.processor->process(call, streams);
  if (out.size() != streams.size())
    throw PipelineError("processor at " + site.name + " returned " + std::to_string(out.size()) +
                        " outputs for " + std::to_string(streams.size()) + " streams");
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].rows() != streams[i].tokens->rows() || out[i].cols() != streams[i].tokens->cols())
      throw PipelineError("processor at " + site.name + " changed the shape of the " +
                          to_string(streams[i].role) + " stream");
    if (!all_finite(out[i]))
      throw NumericError("non-finite attention output at " + site.name + " in the " +
                         stream_label(streams[i]) + " stream");
  }
  return out;
}

AttentionCounters HookProtocol::stage_totals(int stage) const {
  AttentionCounters total;
  for (const auto& [name, c] : counters_)
    if (bindings_.at(name).stage == stage) total += c;
  return total;
}

AttentionCounters HookProtocol::totals() const {
  AttentionCounters total;
  for (const auto& [name, c] : counters_) total += c;
  return total;
}

HookProtocol install_hooks(std::span<const SiteDescriptor> host_sites, const SiteLayout& declared,
                           AttentionProcessor& processor) {
  int per_stage[2] = {0, 0};
  for (const auto& s : host_sites) {
    if (s.stage != 1 && s.stage != 2)
      throw ConfigError("site " + s.name + " reports unknown stage " + std::to_string(s.stage));
    if (s.weights == nullptr) throw ConfigError("site " + s.name + " exposes no QKV weights");
    ++per_stage[s.stage - 1];
  }
  if (per_stage[0] != declared.stage1_sites || per_stage[1] != declared.stage2_sites)
    throw ConfigError("host enumerates " + std::to_string(per_stage[0]) + "+" +
                      std::to_string(per_stage[1]) + " self-attention sites, backbone declares " +
                      std::to_string(declared.stage1_sites) + "+" +
                      std::to_string(declared.stage2_sites));

  HookProtocol protocol;
  for (const auto& s : host_sites) protocol.bind(s, processor);
  protocol.verify(host_sites);
  return protocol;
}

}  // namespace sculpt
