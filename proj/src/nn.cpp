#include "trireid/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace trireid {

Var ParamStore::add(const std::string& name, Tensor init) {
  if (find(name)) throw std::logic_error("duplicate parameter '" + name + "'");
  Var v = make_leaf(std::move(init));
  entries_.emplace_back(name, v);
  return v;
}

Var ParamStore::find(const std::string& name) const {
  for (const auto& [n, v] : entries_)
    if (n == name) return v;
  return nullptr;
}

int64_t ParamStore::total_size() const {
  int64_t n = 0;
  for (const auto& [name, v] : entries_) n += v->value.numel();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [name, v] : entries_) {
    v->ensure_grad();
    v->zero_grad();
  }
}

Tensor glorot_uniform(Rng& rng, std::vector<int> shape, int fan_in,
                      int fan_out) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-limit, limit);
  return t;
}

Linear::Linear(ParamStore& ps, const std::string& name, int in, int out,
               Rng& rng) {
  W = ps.add(name + ".W", glorot_uniform(rng, {out, in}, in, out));
  b = ps.add(name + ".b", Tensor::zeros({out}));
}

Var Linear::forward(const Var& x) const {
  return add_rowvec(matmul_nt(x, W), b);
}

Conv2dLayer::Conv2dLayer(ParamStore& ps, const std::string& name, int in,
                         int out, int k, int stride_, int pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
  W = ps.add(name + ".W",
             glorot_uniform(rng, {out, in, k, k}, in * k * k, out * k * k));
  b = ps.add(name + ".b", Tensor::zeros({out}));
}

Var Conv2dLayer::forward(const Var& x) const {
  return conv2d(x, W, b, stride, pad);
}

InstanceNorm2d::InstanceNorm2d(ParamStore& ps, const std::string& name,
                               int channels) {
  gamma = ps.add(name + ".gamma", Tensor::full({channels}, 1.0));
  beta = ps.add(name + ".beta", Tensor::zeros({channels}));
}

Var InstanceNorm2d::forward(const Var& x) const {
  const int n = x->value.dim(0), c = x->value.dim(1);
  Var mean = spatial_mean(x);
  Var centered = sub_nc(x, mean);
  Var var = spatial_mean(mul(centered, centered));
  Var inv = div_el(make_const(Tensor::full({n, c}, 1.0)),
                   sqrt_op(add_scalar(var, eps)));
  return chan_affine(mul_nc(centered, inv), gamma, beta);
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& name, int dim) {
  gamma = ps.add(name + ".gamma", Tensor::full({dim}, 1.0));
  beta = ps.add(name + ".beta", Tensor::zeros({dim}));
}

Var LayerNorm::forward(const Var& x) const {
  return layer_norm_rows(x, gamma, beta);
}

Var attend(const Var& q3, const Var& k3, const Var& v3, int G, int lq, int lk,
           int dim) {
  Var scores = scale(bmm(q3, k3, true), 1.0 / std::sqrt(dim));
  Var attn = reshape(softmax_rows(reshape(scores, {G * lq, lk})), {G, lq, lk});
  return bmm(attn, v3, false);
}

AttentionBlock::AttentionBlock(ParamStore& ps, const std::string& name,
                               int dim_, Rng& rng)
    : ln1(ps, name + ".ln1", dim_),
      ln2(ps, name + ".ln2", dim_),
      wq(ps, name + ".wq", dim_, dim_, rng),
      wk(ps, name + ".wk", dim_, dim_, rng),
      wv(ps, name + ".wv", dim_, dim_, rng),
      wo(ps, name + ".wo", dim_, dim_, rng),
      ff1(ps, name + ".ff1", dim_, 2 * dim_, rng),
      ff2(ps, name + ".ff2", 2 * dim_, dim_, rng),
      dim(dim_) {}

Var AttentionBlock::forward(const Var& x, int L) const {
  const int rows = x->value.dim(0);
  if (L <= 0 || rows % L != 0)
    throw std::invalid_argument("AttentionBlock: rows not divisible by L");
  const int G = rows / L;
  Var xn = ln1.forward(x);
  Var q3 = reshape(wq.forward(xn), {G, L, dim});
  Var k3 = reshape(wk.forward(xn), {G, L, dim});
  Var v3 = reshape(wv.forward(xn), {G, L, dim});
  Var ctx = reshape(attend(q3, k3, v3, G, L, L, dim), {rows, dim});
  Var x2 = add(x, wo.forward(ctx));
  Var h = ff2.forward(leaky_relu(ff1.forward(ln2.forward(x2)), 0.1));
  return add(x2, h);
}

CrossAttention::CrossAttention(ParamStore& ps, const std::string& name,
                               int dim_, Rng& rng)
    : lnq(ps, name + ".lnq", dim_),
      lnkv(ps, name + ".lnkv", dim_),
      wq(ps, name + ".wq", dim_, dim_, rng),
      wk(ps, name + ".wk", dim_, dim_, rng),
      wv(ps, name + ".wv", dim_, dim_, rng),
      wo(ps, name + ".wo", dim_, dim_, rng),
      dim(dim_) {}

Var CrossAttention::forward(const Var& q, int lq, const Var& kv,
                            int lkv) const {
  const int qrows = q->value.dim(0), kvrows = kv->value.dim(0);
  if (lq <= 0 || qrows % lq != 0 || lkv <= 0 || kvrows % lkv != 0)
    throw std::invalid_argument("CrossAttention: rows not divisible");
  const int G = qrows / lq;
  if (kvrows / lkv != G)
    throw std::invalid_argument("CrossAttention: group count mismatch");
  Var qn = lnq.forward(q);
  Var kvn = lnkv.forward(kv);
  Var q3 = reshape(wq.forward(qn), {G, lq, dim});
  Var k3 = reshape(wk.forward(kvn), {G, lkv, dim});
  Var v3 = reshape(wv.forward(kvn), {G, lkv, dim});
  Var ctx = reshape(attend(q3, k3, v3, G, lq, lkv, dim), {qrows, dim});
  return add(q, wo.forward(ctx));
}

Gru::Gru(ParamStore& ps, const std::string& name, int in, int hidden_,
         Rng& rng)
    : wz(ps, name + ".wz", in, hidden_, rng),
      uz(ps, name + ".uz", hidden_, hidden_, rng),
      wr(ps, name + ".wr", in, hidden_, rng),
      ur(ps, name + ".ur", hidden_, hidden_, rng),
      wh(ps, name + ".wh", in, hidden_, rng),
      uh(ps, name + ".uh", hidden_, hidden_, rng),
      hidden(hidden_) {}

Var Gru::forward_seq(const Var& x, int B, int T, bool reverse) const {
  Var h = make_const(Tensor::zeros({B, hidden}));
  for (int step = 0; step < T; ++step) {
    const int t = reverse ? T - 1 - step : step;
    std::vector<int> rows(static_cast<size_t>(B));
    for (int n = 0; n < B; ++n) rows[static_cast<size_t>(n)] = n * T + t;
    Var xt = gather_dim0(x, rows);
    Var z = sigmoid_op(add(wz.forward(xt), uz.forward(h)));
    Var r = sigmoid_op(add(wr.forward(xt), ur.forward(h)));
    Var cand = tanh_op(add(wh.forward(xt), uh.forward(mul(r, h))));
    Var one_minus_z = add_scalar(scale(z, -1.0), 1.0);
    h = add(mul(one_minus_z, h), mul(z, cand));
  }
  return h;
}

BiGru::BiGru(ParamStore& ps, const std::string& name, int in, int hidden,
             Rng& rng)
    : fwd(ps, name + ".fwd", in, hidden, rng),
      bwd(ps, name + ".bwd", in, hidden, rng) {}

Var BiGru::forward(const Var& x, int B, int T) const {
  return concat_cols({fwd.forward_seq(x, B, T, false),
                      bwd.forward_seq(x, B, T, true)});
}

Mlp::Mlp(ParamStore& ps, const std::string& name, int in, int hidden, int out,
         Rng& rng)
    : l1(ps, name + ".l1", in, hidden, rng),
      l2(ps, name + ".l2", hidden, out, rng) {}

Var Mlp::forward(const Var& x) const {
  return l2.forward(leaky_relu(l1.forward(x), 0.1));
}

}  // namespace trireid
