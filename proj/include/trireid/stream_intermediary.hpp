#pragma once

#include <array>
#include <functional>
#include <utility>
#include <vector>

#include "trireid/autodiff.hpp"
#include "trireid/config.hpp"
#include "trireid/nn.hpp"
#include "trireid/sampler.hpp"
#include "trireid/types.hpp"

namespace trireid {

/// 3x3 correlation with mirrored borders plus a constant offset.
struct EdgeOperator {
  std::array<double, 9> kernel{0, 1, 0, 1, -4, 1, 0, 1, 0};
  double offset = 0.0;
};

EdgeOperator edge_operator_from(const Config& cfg);

/// Edge-response map [1, H, W] of one [C, H, W] frame. Visible frames
/// reduce to Rec.601 luma first; infrared frames read channel 0, which
/// replication made identical to the others.
Tensor anaglyph(const Tensor& frame, Modality m, const EdgeOperator& op);

/// Maps for a whole [N, C, H, W] batch; frame n belongs to tracklet n / T.
Tensor anaglyph_batch(const Tensor& pixels,
                      const std::vector<Modality>& modalities, int T,
                      const EdgeOperator& op);

/// Bidirectional token attention between two views. Plain residual, no
/// normalization: zeroed projections pass tokens through untouched, and a
/// constant key projection makes the attention exactly uniform.
class CrossAttend3d {
 public:
  CrossAttend3d() = default;
  CrossAttend3d(ParamStore& ps, const std::string& name, int dim, Rng& rng);

  /// x is [G*lx, D] and y is [G*ly, D]; returns (x', y') where each side
  /// queried the other.
  std::pair<Var, Var> forward(const Var& x, int lx, const Var& y,
                              int ly) const;

  /// One side attending over itself, for tracklets without a partner.
  Var forward_self(const Var& x, int lx) const;

 private:
  Var attned(const Var& q, int lq, const Var& kv, int lkv) const;
  Linear wq_, wk_, wv_, wo_;
  int dim_ = 0;
};

/// Cyclic reconstruction loss between paired visible/infrared feature rows:
/// the row-wise distances ||vis - map(ir)|| and ||ir - map(vis)|| summed
/// and divided by the row count.
Var loss_cr(const Var& vis, const Var& ir,
            const std::function<Var(const Var&)>& mapper);

/// Edge-map stream: a shallow conv encoder over anaglyphs, token attention
/// between paired visible/infrared tracklets of the same identity, and a
/// bidirectional recurrence over frames.
class Stream3 {
 public:
  Stream3(ParamStore& ps, const Config& cfg, Rng& rng);

  struct Output {
    Var features;  // [P*K, D]
    /// Pre-attention frame features (or raw anaglyph rows when configured)
    /// for visible/infrared pairs, aligned row for row; null when the
    /// batch has no same-identity cross-modal pair.
    Var cr_vis;
    Var cr_ir;
  };

  Output forward(const ClipBatch& batch) const;

  /// The reconstruction mapper shared by both loss directions.
  Var map_feature(const Var& x) const;

  int feature_dim() const { return cfg_.embed_dim; }

 private:
  Config cfg_;
  EdgeOperator op_;
  Conv2dLayer c1_, c2_;
  InstanceNorm2d n1_, n2_;
  CrossAttend3d attn_;
  BiGru gru_;
  Linear proj_;
  Mlp recon_;
};

}  // namespace trireid
