#pragma once

#include <vector>

#include "trireid/autodiff.hpp"
#include "trireid/config.hpp"
#include "trireid/nn.hpp"
#include "trireid/rng.hpp"
#include "trireid/sampler.hpp"
#include "trireid/types.hpp"

namespace trireid {

/// One encoded tracklet, tagged for memory grouping.
struct SequenceFeature {
  Tensor v;  // [D]
  int id = 0;
  Platform platform = Platform::Ground;
};

struct MemKey {
  int id = 0;
  Platform platform = Platform::Ground;
  bool operator<(const MemKey& o) const {
    if (id != o.id) return id < o.id;
    return static_cast<int>(platform) < static_cast<int>(o.platform);
  }
  bool operator==(const MemKey& o) const {
    return id == o.id && platform == o.platform;
  }
};

/// Per-identity, per-platform centroids of sequence features. `base` is
/// the arithmetic mean over members; `prompts` and `updated` stay at zero
/// and base until a decoder refines them.
struct ViewMemory {
  std::vector<MemKey> keys;  // sorted
  std::vector<int> counts;
  Tensor base;     // [M, D]
  Tensor prompts;  // [M, D]
  Tensor updated;  // [M, D]

  int find(const MemKey& k) const;  // -1 when absent
  int size() const { return static_cast<int>(keys.size()); }
};

ViewMemory build_memory(const std::vector<SequenceFeature>& feats);

/// Two-layer transformer decoder emitting additive prompts. Each platform
/// branch queries with its own base memories while attending over the
/// union of both platforms', so cross-platform structure can leak into
/// the refreshed entries. Zero weights produce exactly zero prompts.
class PromptDecoder {
 public:
  PromptDecoder(ParamStore& ps, const Config& cfg, Rng& rng);

  /// Additive prompts [M, D], rows aligned with mem.keys.
  Var prompt_rows(const ViewMemory& mem) const;

  /// Differentiable M' = base + prompt.
  Var refreshed(const ViewMemory& mem) const;

  /// Evaluates prompts and writes prompts/updated into the snapshot.
  void refresh(ViewMemory& mem) const;

 private:
  struct Layer {
    CrossAttention self_attn;
    CrossAttention cross_attn;
    LayerNorm ff_norm;
    Linear ff1, ff2;
  };
  Var layer_forward(const Layer& l, Var x, int lq, const Var& kv,
                    int lkv) const;

  std::vector<Layer> layers_;
  Linear out_;
};

/// Contrastive pull of sequence features toward their own platform-aware
/// memory: for every (identity, platform) cell in the batch, the cell's
/// members compete against the whole batch for the refreshed entry.
/// Features and memories are compared by cosine at temperature tau.
Var loss_v2m(const Var& feats, const std::vector<int>& ids,
             const std::vector<Platform>& platforms, const Var& updated,
             const std::vector<MemKey>& keys, double tau);

/// Splits standardized frames into non-overlapping p x p patches, one row
/// per patch in (row, column) grid order, values in (channel, y, x) order.
Tensor patchify(const Tensor& frames, int p);

/// Patch-attention stream: embedded patches plus a learned positional
/// table run through self-attention, then token and frame means produce
/// one sequence feature per tracklet.
class Stream2 {
 public:
  Stream2(ParamStore& ps, const Config& cfg, Rng& rng);

  Var forward(const ClipBatch& batch) const;  // [P*K, D]

  /// Frames [n*T, 3, H, W] in [0, 1] to one feature per T-frame group.
  Var forward_frames(const Tensor& frames, int T) const;

  int feature_dim() const { return cfg_.embed_dim; }

 private:
  Config cfg_;
  int tokens_per_frame_ = 0;
  Linear embed_;
  Var pos_;
  std::vector<AttentionBlock> blocks_;
};

}  // namespace trireid
