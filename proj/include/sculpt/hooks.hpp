#pragma once

// Attention-site hook protocol. A host model enumerates its self-attention
// sites; a processor is bound to every site exactly once; during a forward
// pass the host hands each site's normalized stream inputs to the dispatch,
// which routes them to the bound processor and keeps per-site counters.
//
// Cross-attention (conditioning) and FFN layers of the host are never
// routed through here; only the self-attention computation is replaceable.

#include "sculpt/attention.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace sculpt {

enum class BranchRole { content, style, edge, content_preserve };

const char* to_string(BranchRole role);

struct SiteDescriptor {
  std::string name;  // unique across the host, e.g. "stage1.blocks.0.self_attn"
  int stage = 1;     // 1 = dense structure stage, 2 = sparse latent stage
  int index = 0;     // position within its stage
  const SiteWeights* weights = nullptr;
};

// One token stream entering a site. `conditional` is false for the
// unconditional half of a classifier-free-guidance pair.
struct StreamView {
  BranchRole role = BranchRole::content;
  bool conditional = true;
  const Matrix* tokens = nullptr;
};

struct AttentionCounters {
  std::int64_t self_attention = 0;
  std::int64_t cross_attention = 0;

  AttentionCounters& operator+=(const AttentionCounters& o) {
    self_attention += o.self_attention;
    cross_attention += o.cross_attention;
    return *this;
  }
};

struct SiteCall {
  const SiteDescriptor& site;
  int step = 0;
  AttentionCounters& counters;
};

struct StepInfo {
  int stage = 1;
  int step = 0;
  double t = 1.0;
  bool content_preserve_copied = false;
};

// Returns one attention output (pre output-projection, [N_i, C]) per stream.
class AttentionProcessor {
 public:
  virtual ~AttentionProcessor() = default;
  virtual std::vector<Matrix> process(const SiteCall& call, std::span<const StreamView> streams) = 0;
};

// What a host forward pass talks to.
class SiteDispatch {
 public:
  virtual ~SiteDispatch() = default;
  virtual void begin_step(const StepInfo& info) = 0;
  virtual std::vector<Matrix> attend(const SiteDescriptor& site, std::span<const StreamView> streams) = 0;
};

// Plain multi-head self-attention on every stream.
class SelfAttentionProcessor final : public AttentionProcessor {
 public:
  std::vector<Matrix> process(const SiteCall& call, std::span<const StreamView> streams) override;
};

// The conditional content stream attends entirely to the conditional style
// stream's keys/values; every other stream uses self-attention. Reference
// route for the "every channel selected" end of the guidance range.
class FullCrossProcessor final : public AttentionProcessor {
 public:
  std::vector<Matrix> process(const SiteCall& call, std::span<const StreamView> streams) override;
};

// Helper shared by processors: plain self-attention of one stream at a site.
Matrix plain_self_attention(const SiteDescriptor& site, const Matrix& tokens,
                            AttentionCounters& counters);

// Index of the first stream with this role/conditional flag, or -1.
int find_stream(std::span<const StreamView> streams, BranchRole role, bool conditional = true);

struct SiteLayout {
  int stage1_sites = 0;
  int stage2_sites = 0;
};

class HookProtocol final : public SiteDispatch {
 public:
  HookProtocol() = default;

  // Hard error if the site name is already bound.
  void bind(const SiteDescriptor& site, AttentionProcessor& processor);
  bool is_bound(const std::string& site_name) const;
  // Hard error unless every listed site is bound and nothing else is.
  void verify(std::span<const SiteDescriptor> sites) const;

  void begin_step(const StepInfo& info) override;
  std::vector<Matrix> attend(const SiteDescriptor& site, std::span<const StreamView> streams) override;

  const std::map<std::string, AttentionCounters>& counters() const { return counters_; }
  AttentionCounters stage_totals(int stage) const;
  AttentionCounters totals() const;
  std::size_t bound_sites() const { return bindings_.size(); }
  // Every begin_step call, in order.
  const std::vector<StepInfo>& step_log() const { return steps_; }

 private:
  struct Binding {
    AttentionProcessor* processor = nullptr;
    int stage = 1;
  };
  std::map<std::string, Binding> bindings_;
  std::map<std::string, AttentionCounters> counters_;
  std::vector<StepInfo> steps_;
  int current_step_ = 0;
};

// Binds `processor` to every site of the host. The enumeration must match
// the declared layout (per-stage site counts) and site names must be unique;
// either mismatch is a ConfigError.
HookProtocol install_hooks(std::span<const SiteDescriptor> host_sites, const SiteLayout& declared,
                           AttentionProcessor& processor);

}  // namespace sculpt
