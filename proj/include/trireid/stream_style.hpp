#pragma once

#include <vector>

#include "trireid/autodiff.hpp"
#include "trireid/config.hpp"
#include "trireid/nn.hpp"
#include "trireid/rng.hpp"
#include "trireid/sampler.hpp"
#include "trireid/types.hpp"

namespace trireid {

/// Per-frame channel gains. Visible frames scale r, g, b independently;
/// infrared frames scale every replicated channel by the single ir gain.
struct StyleCoeffs {
  double r = 1.0, g = 1.0, b = 1.0;
  double ir = 1.0;
};

/// Draws all four gains from U(0.5, 1.5) so the rng stream advances the
/// same amount regardless of modality.
StyleCoeffs sample_style_coeffs(Rng& rng);

/// Scales the channels of one [3, H, W] frame. Unit gains reproduce the
/// input bit for bit.
Tensor style_augment(const Tensor& frame, Modality m, const StyleCoeffs& c);

/// Applies fresh per-frame gains to a whole [N, 3, H, W] batch, where frame
/// n belongs to tracklet n / T. Pass `drawn` to capture the sampled gains.
Tensor style_augment_batch(const Tensor& pixels,
                           const std::vector<Modality>& modalities, int T,
                           Rng& rng,
                           std::vector<StyleCoeffs>* drawn = nullptr);

struct AttackResult {
  Var features;              // same shape as the target
  int skipped_channels = 0;  // lanes left untouched for lack of spread
};

/// Re-styles each target sample with its donor's per-channel spatial mean
/// and spread:  sigma(d) / sigma(t) * (t - mu(t)) + mu(d).
/// Lanes whose target spread is <= sigma_floor pass through unchanged, and
/// passing the same node as both arguments is an exact fixed point.
AttackResult style_attack(const Var& target, const Var& donor,
                          double sigma_floor = 1e-6);

/// Defense loss: plain cross-entropy on the attacked logits (no smoothing,
/// so confident correct predictions drive it to zero) plus the mean squared
/// distance between clean and attacked features.
Var loss_sa(const Var& logits, const Var& attacked_logits,
            const Var& features, const Var& attacked_features,
            const std::vector<int>& ids);

/// Convolutional stream hardened against style shift: training runs a
/// second head pass over feature maps re-styled with statistics donated by
/// other frames in the batch, and loss_sa ties the two passes together.
class Stream1 {
 public:
  Stream1(ParamStore& ps, const Config& cfg, int num_classes, Rng& rng);

  struct Output {
    Var features;           // [P*K, D] tracklet features
    Var logits;             // [P*K, num_classes]
    Var attacked_features;  // null outside training
    Var attacked_logits;    // null outside training
    int skipped_channels = 0;
  };

  /// When `train` is set, frames are style-augmented before encoding and a
  /// donor derangement over all P*K*T frames drives the attack pass.
  Output forward(const ClipBatch& batch, bool train, Rng& rng) const;

  int feature_dim() const { return cfg_.embed_dim; }

 private:
  struct Block {
    Conv2dLayer c1, c2;
    InstanceNorm2d n1, n2;
    Conv2dLayer skip;
    bool reshapes = false;
  };

  Var trunk(const Var& frames) const;
  Var block_forward(const Block& blk, const Var& x) const;
  Output heads(const Var& fmap, const Var& attacked, int T, int skipped) const;

  Config cfg_;
  Conv2dLayer stem_;
  InstanceNorm2d stem_norm_;
  std::vector<Block> blocks_;
  Linear proj_;
  Linear classifier_;
};

}  // namespace trireid
