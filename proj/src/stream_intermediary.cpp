#include "trireid/stream_intermediary.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>

namespace trireid {

EdgeOperator edge_operator_from(const Config& cfg) {
  EdgeOperator op;
  std::copy(cfg.edge_kernel.begin(), cfg.edge_kernel.end(),
            op.kernel.begin());
  op.offset = cfg.edge_offset;
  return op;
}

namespace {

// Mirror without repeating the border sample: -1 -> 1, H -> H - 2.
int reflect(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

}  // namespace

Tensor anaglyph(const Tensor& frame, Modality m, const EdgeOperator& op) {
  if (frame.ndim() != 3 || (frame.dim(0) != 1 && frame.dim(0) != 3))
    throw std::invalid_argument("anaglyph: expected [1|3, H, W] frame");
  const int h = frame.dim(1), w = frame.dim(2);
  if (h < 3 || w < 3)
    throw std::invalid_argument("anaglyph: frame smaller than the kernel");

  std::vector<double> lum(static_cast<size_t>(h) * w);
  if (m == Modality::Visible && frame.dim(0) == 3) {
    const int64_t plane = static_cast<int64_t>(h) * w;
    for (int64_t i = 0; i < plane; ++i)
      lum[i] = 0.299 * frame[i] + 0.587 * frame[plane + i] +
               0.114 * frame[2 * plane + i];
  } else {
    for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i)
      lum[i] = frame[i];
  }

  Tensor out({1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = op.offset;
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx)
          acc += op.kernel[ky * 3 + kx] *
                 lum[static_cast<int64_t>(reflect(y + ky - 1, h)) * w +
                     reflect(x + kx - 1, w)];
      out[static_cast<int64_t>(y) * w + x] = acc;
    }
  return out;
}

Tensor anaglyph_batch(const Tensor& pixels,
                      const std::vector<Modality>& modalities, int T,
                      const EdgeOperator& op) {
  if (pixels.ndim() != 4)
    throw std::invalid_argument("anaglyph_batch: expected [N, C, H, W]");
  const int n = pixels.dim(0), c = pixels.dim(1);
  const int h = pixels.dim(2), w = pixels.dim(3);
  if (T <= 0 || n % T != 0 ||
      static_cast<size_t>(n / T) != modalities.size())
    throw std::invalid_argument(
        "anaglyph_batch: modality list does not tile the batch");
  Tensor out({n, 1, h, w});
  Tensor frame({c, h, w});
  const int64_t in_sz = frame.numel(), out_sz = static_cast<int64_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    std::copy(pixels.data.begin() + i * in_sz,
              pixels.data.begin() + (i + 1) * in_sz, frame.data.begin());
    Tensor a = anaglyph(frame, modalities[i / T], op);
    std::copy(a.data.begin(), a.data.end(), out.data.begin() + i * out_sz);
  }
  return out;
}

CrossAttend3d::CrossAttend3d(ParamStore& ps, const std::string& name,
                             int dim, Rng& rng)
    : wq_(ps, name + ".wq", dim, dim, rng),
      wk_(ps, name + ".wk", dim, dim, rng),
      wv_(ps, name + ".wv", dim, dim, rng),
      wo_(ps, name + ".wo", dim, dim, rng),
      dim_(dim) {}

Var CrossAttend3d::attned(const Var& q, int lq, const Var& kv,
                          int lkv) const {
  const int qrows = q->value.dim(0), kvrows = kv->value.dim(0);
  if (lq <= 0 || qrows % lq != 0 || lkv <= 0 || kvrows % lkv != 0)
    throw std::invalid_argument("CrossAttend3d: rows not divisible");
  const int G = qrows / lq;
  if (kvrows / lkv != G)
    throw std::invalid_argument("CrossAttend3d: group count mismatch");
  Var q3 = reshape(wq_.forward(q), {G, lq, dim_});
  Var k3 = reshape(wk_.forward(kv), {G, lkv, dim_});
  Var v3 = reshape(wv_.forward(kv), {G, lkv, dim_});
  Var ctx = reshape(attend(q3, k3, v3, G, lq, lkv, dim_), {qrows, dim_});
  return add(q, wo_.forward(ctx));
}

std::pair<Var, Var> CrossAttend3d::forward(const Var& x, int lx,
                                           const Var& y, int ly) const {
  return {attned(x, lx, y, ly), attned(y, ly, x, lx)};
}

Var CrossAttend3d::forward_self(const Var& x, int lx) const {
  return attned(x, lx, x, lx);
}

Var loss_cr(const Var& vis, const Var& ir,
            const std::function<Var(const Var&)>& mapper) {
  if (!vis->value.same_shape(ir->value) || vis->value.ndim() != 2)
    throw std::invalid_argument("loss_cr: paired rows must match");
  const int n = vis->value.dim(0);
  Var forward_gap = sum_all(row_l2norm(sub(vis, mapper(ir))));
  Var backward_gap = sum_all(row_l2norm(sub(ir, mapper(vis))));
  return scale(add(forward_gap, backward_gap), 1.0 / n);
}

Stream3::Stream3(ParamStore& ps, const Config& cfg, Rng& rng)
    : cfg_(cfg), op_(edge_operator_from(cfg)) {
  const int c = cfg.st3_channels;
  c1_ = Conv2dLayer(ps, "st3.c1", 1, c, 3, 2, 1, rng);
  n1_ = InstanceNorm2d(ps, "st3.n1", c);
  c2_ = Conv2dLayer(ps, "st3.c2", c, 2 * c, 3, 2, 1, rng);
  n2_ = InstanceNorm2d(ps, "st3.n2", 2 * c);
  attn_ = CrossAttend3d(ps, "st3.attn", 2 * c, rng);
  const int hidden = std::max(1, cfg.embed_dim / 2);
  gru_ = BiGru(ps, "st3.gru", 2 * c, hidden, rng);
  proj_ = Linear(ps, "st3.proj", 2 * hidden, cfg.embed_dim, rng);
  const int cr_dim = cfg.cr_on_pixels ? cfg.image_height * cfg.image_width
                                      : 2 * c;
  recon_ = Mlp(ps, "st3.recon", cr_dim, 2 * c, cr_dim, rng);
}

Var Stream3::map_feature(const Var& x) const { return recon_.forward(x); }

Stream3::Output Stream3::forward(const ClipBatch& batch) const {
  const int T = batch.T;
  const int num_tracklets = static_cast<int>(batch.modalities.size());
  Tensor amaps = anaglyph_batch(batch.pixels, batch.modalities, T, op_);
  Var edge = make_const(amaps);

  Var h1 = leaky_relu(n1_.forward(c1_.forward(edge)), 0.1);
  Var h2 = leaky_relu(n2_.forward(c2_.forward(h1)), 0.1);
  const int hw = h2->value.dim(2) * h2->value.dim(3);
  const int tokens_per_tracklet = T * hw;

  // Same-identity visible/infrared tracklets attend to each other; the
  // rest fall back to attending over themselves.
  std::map<int, std::pair<std::vector<int>, std::vector<int>>> by_id;
  for (int t = 0; t < num_tracklets; ++t) {
    auto& cell = by_id[batch.ids[t]];
    (batch.modalities[t] == Modality::Visible ? cell.first : cell.second)
        .push_back(t);
  }
  std::vector<int> vis_side, ir_side, solo;
  for (const auto& [id, cell] : by_id) {
    const size_t paired = std::min(cell.first.size(), cell.second.size());
    for (size_t i = 0; i < paired; ++i) {
      vis_side.push_back(cell.first[i]);
      ir_side.push_back(cell.second[i]);
    }
    for (size_t i = paired; i < cell.first.size(); ++i)
      solo.push_back(cell.first[i]);
    for (size_t i = paired; i < cell.second.size(); ++i)
      solo.push_back(cell.second[i]);
  }

  auto token_rows = [&](const std::vector<int>& tracklets) {
    std::vector<int> rows;
    rows.reserve(tracklets.size() * tokens_per_tracklet);
    for (int t : tracklets)
      for (int i = 0; i < tokens_per_tracklet; ++i)
        rows.push_back(t * tokens_per_tracklet + i);
    return rows;
  };

  Var tokens = nchw_to_tokens(h2);  // [N*hw, 2c]
  std::vector<Var> segments;
  std::vector<int> segment_tracklets;
  if (!vis_side.empty()) {
    Var vis_pack = gather_dim0(tokens, token_rows(vis_side));
    Var ir_pack = gather_dim0(tokens, token_rows(ir_side));
    auto [vis_out, ir_out] =
        attn_.forward(vis_pack, tokens_per_tracklet, ir_pack,
                      tokens_per_tracklet);
    segments.push_back(mean_groups(vis_out, hw));
    segments.push_back(mean_groups(ir_out, hw));
    segment_tracklets.insert(segment_tracklets.end(), vis_side.begin(),
                             vis_side.end());
    segment_tracklets.insert(segment_tracklets.end(), ir_side.begin(),
                             ir_side.end());
  }
  if (!solo.empty()) {
    Var pack = gather_dim0(tokens, token_rows(solo));
    segments.push_back(
        mean_groups(attn_.forward_self(pack, tokens_per_tracklet), hw));
    segment_tracklets.insert(segment_tracklets.end(), solo.begin(),
                             solo.end());
  }

  Var stacked =
      segments.size() == 1 ? segments[0] : concat_rows(segments);
  std::vector<int> frame_perm(static_cast<size_t>(num_tracklets) * T);
  for (size_t pos = 0; pos < segment_tracklets.size(); ++pos)
    for (int f = 0; f < T; ++f)
      frame_perm[segment_tracklets[pos] * T + f] =
          static_cast<int>(pos) * T + f;
  Var frame_feats = gather_dim0(stacked, frame_perm);  // [N, 2c]

  Output out;
  out.features =
      proj_.forward(gru_.forward(frame_feats, num_tracklets, T));

  if (!vis_side.empty()) {
    auto frame_rows = [&](const std::vector<int>& tracklets) {
      std::vector<int> rows;
      for (int t : tracklets)
        for (int f = 0; f < T; ++f) rows.push_back(t * T + f);
      return rows;
    };
    Var cr_source;
    if (cfg_.cr_on_pixels) {
      Tensor flat({amaps.dim(0), amaps.dim(2) * amaps.dim(3)}, amaps.data);
      cr_source = make_const(std::move(flat));
    } else {
      cr_source = spatial_mean(h2);
    }
    out.cr_vis = gather_dim0(cr_source, frame_rows(vis_side));
    out.cr_ir = gather_dim0(cr_source, frame_rows(ir_side));
  }
  return out;
}

}  // namespace trireid
