#pragma once

#include <string>
#include <utility>
#include <vector>

#include "trireid/autodiff.hpp"
#include "trireid/rng.hpp"

namespace trireid {

/// Named trainable tensors in registration order. Registration order is
/// part of the on-disk checkpoint contract, so constructors must create
/// layers in a fixed sequence.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init);
  const std::vector<std::pair<std::string, Var>>& entries() const {
    return entries_;
  }
  Var find(const std::string& name) const;
  int64_t total_size() const;
  void zero_grads();

 private:
  std::vector<std::pair<std::string, Var>> entries_;
};

Tensor glorot_uniform(Rng& rng, std::vector<int> shape, int fan_in,
                      int fan_out);

struct Linear {
  Var W;  // [out, in]
  Var b;  // [out]
  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng);
  Var forward(const Var& x) const;  // [R, in] -> [R, out]
};

struct Conv2dLayer {
  Var W;  // [out, in, k, k]
  Var b;  // [out]
  int stride = 1;
  int pad = 0;
  Conv2dLayer() = default;
  Conv2dLayer(ParamStore& ps, const std::string& name, int in, int out, int k,
              int stride, int pad, Rng& rng);
  Var forward(const Var& x) const;
};

/// Per-sample per-channel normalization over spatial positions, with a
/// learned channel affine.
struct InstanceNorm2d {
  Var gamma;  // [C]
  Var beta;   // [C]
  double eps = 1e-5;
  InstanceNorm2d() = default;
  InstanceNorm2d(ParamStore& ps, const std::string& name, int channels);
  Var forward(const Var& x) const;
};

struct LayerNorm {
  Var gamma;
  Var beta;
  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& name, int dim);
  Var forward(const Var& x) const;
};

/// Scaled dot-product attention with softmax over the last axis: q3 is
/// [G, Lq, D], k3 and v3 are [G, Lk, D], result is [G, Lq, D].
Var attend(const Var& q3, const Var& k3, const Var& v3, int G, int lq,
           int lk, int dim);

/// Pre-norm single-head self-attention + feed-forward over G sequences of
/// length L packed as rows [G*L, D].
struct AttentionBlock {
  LayerNorm ln1, ln2;
  Linear wq, wk, wv, wo;
  Linear ff1, ff2;
  int dim = 0;
  AttentionBlock() = default;
  AttentionBlock(ParamStore& ps, const std::string& name, int dim, Rng& rng);
  Var forward(const Var& x, int L) const;
};

/// Pre-norm single-head cross-attention with residual on the query side.
/// q is [G*Lq, D], kv is [G*Lkv, D].
struct CrossAttention {
  LayerNorm lnq, lnkv;
  Linear wq, wk, wv, wo;
  int dim = 0;
  CrossAttention() = default;
  CrossAttention(ParamStore& ps, const std::string& name, int dim, Rng& rng);
  Var forward(const Var& q, int lq, const Var& kv, int lkv) const;
};

struct Gru {
  Linear wz, uz, wr, ur, wh, uh;
  int hidden = 0;
  Gru() = default;
  Gru(ParamStore& ps, const std::string& name, int in, int hidden, Rng& rng);
  /// x is [B*T, in] with sequence n occupying rows n*T..n*T+T-1.
  /// Returns the final hidden state [B, hidden].
  Var forward_seq(const Var& x, int B, int T, bool reverse) const;
};

struct BiGru {
  Gru fwd, bwd;
  BiGru() = default;
  BiGru(ParamStore& ps, const std::string& name, int in, int hidden, Rng& rng);
  Var forward(const Var& x, int B, int T) const;  // [B, 2*hidden]
};

struct Mlp {
  Linear l1, l2;
  Mlp() = default;
  Mlp(ParamStore& ps, const std::string& name, int in, int hidden, int out,
      Rng& rng);
  Var forward(const Var& x) const;
};

}  // namespace trireid
