#pragma once

#include <memory>
#include <vector>

#include "trireid/config.hpp"
#include "trireid/fusion.hpp"
#include "trireid/manifest.hpp"
#include "trireid/nn.hpp"
#include "trireid/sampler.hpp"
#include "trireid/stream_intermediary.hpp"
#include "trireid/stream_memory.hpp"
#include "trireid/stream_style.hpp"

namespace trireid {

/// Sorted unique train-split identities; a label is a position in it.
std::vector<int> train_identity_vocab(const Manifest& m);

/// All trainable state for one stream mask: the enabled streams, the view
/// memory with its prompt decoder, the fusion projection, and the main
/// identity head. Parameter registration order is fixed per mask and is
/// part of the checkpoint layout.
class Model {
 public:
  Model(const Config& cfg, std::vector<int> identity_vocab, Rng& init_rng);

  struct Forward {
    Var fused;   // [P*K, fusion_dim]
    Var logits;  // [P*K, num_classes]
    LossTerms terms;
  };

  /// Training pass: augmented stream forwards, fusion at unit weights,
  /// and every loss term the mask and batch admit. Requires a built view
  /// memory when the memory stream is enabled.
  Forward forward_train(const ClipBatch& batch, Rng& rng);

  /// Deterministic inference feature for one clip [T,3,H,W] -> [D_f].
  Tensor encode_clip(const Tensor& pixels, int T, Modality mo) const;

  /// Recomputes per-(identity, platform) memory means over the train
  /// split. No-op when the memory stream is disabled.
  void rebuild_memory(const Manifest& m, FrameCache& cache);

  bool has_memory() const { return memory_ready_; }
  const ViewMemory& memory() const { return memory_; }
  void set_memory(ViewMemory mem);

  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }
  const Config& config() const { return cfg_; }
  const std::vector<int>& identity_vocab() const { return vocab_; }
  int num_classes() const { return static_cast<int>(vocab_.size()); }
  int feature_dim() const { return cfg_.fusion_dim; }

  StreamWeights inference_weights() const { return weights_; }
  void set_inference_weights(const StreamWeights& w) { weights_ = w; }

 private:
  std::vector<int> labels_of(const std::vector<int>& ids) const;
  std::vector<double> enabled_weights() const;

  Config cfg_;
  std::vector<int> vocab_;
  ParamStore ps_;
  std::unique_ptr<Stream1> st1_;
  std::unique_ptr<Stream2> st2_;
  std::unique_ptr<PromptDecoder> decoder_;
  std::unique_ptr<Stream3> st3_;
  std::unique_ptr<Fusion> fusion_;
  Linear classifier_;
  Linear aux2_, aux3_;
  ViewMemory memory_;
  bool memory_ready_ = false;
  StreamWeights weights_;
};

}  // namespace trireid
