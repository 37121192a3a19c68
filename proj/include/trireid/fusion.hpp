#pragma once

#include <string>
#include <vector>

#include "trireid/autodiff.hpp"
#include "trireid/config.hpp"
#include "trireid/nn.hpp"
#include "trireid/rng.hpp"
#include "trireid/types.hpp"

namespace trireid {

/// Scalars applied to each stream's normalized block before the fusion
/// projection. Training always runs at the defaults; inference may swap
/// in weights picked on a validation protocol. Disabled streams keep 0.
struct StreamWeights {
  double w1 = 1.0;
  double w2 = 1.0;
  double w3 = 1.0;

  bool operator==(const StreamWeights&) const = default;
};

/// One candidate of the inference-weight search: the weights and the
/// validation mAP measured with them.
struct WeightedResult {
  StreamWeights weights;
  double map = 0.0;
};

/// Loss terms of one training step as plain numbers, with the weights
/// used and their weighted sum. Terms of disabled streams stay 0.
struct LossReport {
  double l_id = 0.0;
  double l_tri = 0.0;
  double l_sa = 0.0;
  double l_cr = 0.0;
  double l_v2m = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double lambda3 = 0.0;
  double lambda4 = 0.0;
  double total = 0.0;
};

/// The objective terms as graph nodes. id and tri are always present; sa
/// and v2m are null when their stream is disabled, and cr is also null
/// when the batch holds no cross-modal identity pair.
struct LossTerms {
  Var id;
  Var tri;
  Var sa;
  Var cr;
  Var v2m;
};

/// Normalize, scale, concatenate, project. The projection width is fixed
/// by the number of enabled streams, so one instance serves exactly one
/// stream mask.
class Fusion {
 public:
  Fusion(ParamStore& ps, const std::string& name, int streams, int in_dim,
         int out_dim, Rng& rng);

  /// feats holds one [N, in_dim] matrix per enabled stream, in stream
  /// order; weights lists one scalar per entry. Throws on an empty list,
  /// a count mismatch, or ragged shapes.
  Var fuse(const std::vector<Var>& feats,
           const std::vector<double>& weights) const;
  Var fuse(const std::vector<Var>& feats) const;  // all weights 1

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }

 private:
  Linear proj_;
  int streams_ = 0;
  int in_dim_ = 0;
  int out_dim_ = 0;
};

/// Mean cross-entropy over rows against smoothed one-hot targets.
inline Var loss_id(const Var& logits, const std::vector<int>& ids,
                   double smoothing) {
  return cross_entropy_mean(logits, ids, smoothing);
}

/// Batch-hard triplet loss on Euclidean distances: per anchor, farthest
/// same-identity sample minus nearest other-identity sample plus margin,
/// hinged at 0 and averaged over anchors that have both.
inline Var loss_tri(const Var& features, const std::vector<int>& ids,
                    double margin) {
  return triplet_batch_hard(features, ids, margin);
}

/// total = id + lambda1*tri + lambda2*sa + lambda3*cr + lambda4*v2m, with
/// null terms entering as exact zero constants. Fills *report when given.
Var total_loss(const LossTerms& terms, const Config& cfg,
               LossReport* report = nullptr);

/// Candidate inference weights: each enabled stream ranges over
/// {0, 0.5, 1} while disabled streams stay pinned at 0.
std::vector<StreamWeights> weight_grid(const StreamMask& mask);

/// Highest validation mAP wins. Ties prefer a point whose enabled-stream
/// weights are all equal, then the lexicographically largest (w1, w2, w3),
/// so the choice depends only on the values, never on grid order.
StreamWeights select_weights(const std::vector<WeightedResult>& grid,
                             const StreamMask& mask);

}  // namespace trireid
