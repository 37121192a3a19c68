#include "trireid/stream_style.hpp"

#include <cstring>
#include <stdexcept>
#include <string>

namespace trireid {

StyleCoeffs sample_style_coeffs(Rng& rng) {
  StyleCoeffs c;
  c.r = rng.uniform(0.5, 1.5);
  c.g = rng.uniform(0.5, 1.5);
  c.b = rng.uniform(0.5, 1.5);
  c.ir = rng.uniform(0.5, 1.5);
  return c;
}

Tensor style_augment(const Tensor& frame, Modality m, const StyleCoeffs& c) {
  if (frame.ndim() != 3 || frame.dim(0) != 3)
    throw std::invalid_argument("style_augment: expected [3, H, W] frame");
  const int64_t plane = static_cast<int64_t>(frame.dim(1)) * frame.dim(2);
  const double gains[3] = {m == Modality::Visible ? c.r : c.ir,
                           m == Modality::Visible ? c.g : c.ir,
                           m == Modality::Visible ? c.b : c.ir};
  Tensor out(frame.shape);
  for (int ch = 0; ch < 3; ++ch)
    for (int64_t i = 0; i < plane; ++i)
      out[ch * plane + i] = frame[ch * plane + i] * gains[ch];
  return out;
}

Tensor style_augment_batch(const Tensor& pixels,
                           const std::vector<Modality>& modalities, int T,
                           Rng& rng, std::vector<StyleCoeffs>* drawn) {
  if (pixels.ndim() != 4 || pixels.dim(1) != 3)
    throw std::invalid_argument("style_augment_batch: expected [N, 3, H, W]");
  const int n = pixels.dim(0);
  if (T <= 0 || n % T != 0 ||
      static_cast<size_t>(n / T) != modalities.size())
    throw std::invalid_argument(
        "style_augment_batch: modality list does not tile the batch");
  const int64_t frame_size = pixels.numel() / n;
  Tensor out(pixels.shape);
  Tensor frame({3, pixels.dim(2), pixels.dim(3)});
  for (int i = 0; i < n; ++i) {
    const StyleCoeffs c = sample_style_coeffs(rng);
    if (drawn) drawn->push_back(c);
    std::memcpy(frame.data.data(), pixels.data.data() + i * frame_size,
                frame_size * sizeof(double));
    Tensor scaled = style_augment(frame, modalities[i / T], c);
    std::memcpy(out.data.data() + i * frame_size, scaled.data.data(),
                frame_size * sizeof(double));
  }
  return out;
}

AttackResult style_attack(const Var& target, const Var& donor,
                          double sigma_floor) {
  if (!target->value.same_shape(donor->value) || target->value.ndim() != 4)
    throw std::invalid_argument(
        "style_attack: target and donor must share an [N, C, H, W] shape");
  if (target.get() == donor.get()) return {target, 0};

  Var mu_t = spatial_mean(target);
  Var mu_d = spatial_mean(donor);
  Var centered = sub_nc(target, mu_t);
  Var donor_centered = sub_nc(donor, mu_d);
  Var sigma_t = sqrt_op(spatial_mean(mul(centered, centered)));
  Var sigma_d = sqrt_op(spatial_mean(mul(donor_centered, donor_centered)));

  // Lanes without usable target spread keep their original content. The
  // selection mask is a constant, so no gradient leaks through the skipped
  // ratio (div_el already keeps its forward value finite).
  const int64_t lanes = sigma_t->value.numel();
  Tensor keep(sigma_t->value.shape);
  Tensor drop(sigma_t->value.shape);
  int skipped = 0;
  for (int64_t i = 0; i < lanes; ++i) {
    const bool ok = sigma_t->value[i] > sigma_floor;
    keep[i] = ok ? 1.0 : 0.0;
    drop[i] = ok ? 0.0 : 1.0;
    if (!ok) ++skipped;
  }

  Var transferred = add_nc(
      mul_nc(centered, div_el(sigma_d, clamp_min(sigma_t, sigma_floor))),
      mu_d);
  Var out = add(mul_nc(transferred, make_const(keep)),
                mul_nc(target, make_const(drop)));
  return {out, skipped};
}

Var loss_sa(const Var& logits, const Var& attacked_logits,
            const Var& features, const Var& attacked_features,
            const std::vector<int>& ids) {
  if (!logits->value.same_shape(attacked_logits->value))
    throw std::invalid_argument("loss_sa: logit shapes differ");
  if (!features->value.same_shape(attacked_features->value) ||
      features->value.ndim() != 2)
    throw std::invalid_argument("loss_sa: feature shapes differ");
  const int b = features->value.dim(0);
  if (static_cast<size_t>(b) != ids.size())
    throw std::invalid_argument("loss_sa: id count mismatch");
  Var l_dis = cross_entropy_mean(attacked_logits, ids, 0.0);
  Var diff = sub(features, attacked_features);
  Var l_con = scale(sum_all(mul(diff, diff)), 1.0 / b);
  return add(l_dis, l_con);
}

Stream1::Stream1(ParamStore& ps, const Config& cfg, int num_classes,
                 Rng& rng)
    : cfg_(cfg) {
  const int c = cfg.st1_channels;
  stem_ = Conv2dLayer(ps, "st1.stem", 3, c, 3, 1, 1, rng);
  stem_norm_ = InstanceNorm2d(ps, "st1.stem_norm", c);

  const int widths[4] = {c, 2 * c, 4 * c, 4 * c};
  const int strides[3] = {2, 2, 1};
  for (int i = 0; i < 3; ++i) {
    const std::string base = "st1.block" + std::to_string(i + 1);
    Block blk;
    blk.c1 = Conv2dLayer(ps, base + ".c1", widths[i], widths[i + 1], 3,
                         strides[i], 1, rng);
    blk.n1 = InstanceNorm2d(ps, base + ".n1", widths[i + 1]);
    blk.c2 = Conv2dLayer(ps, base + ".c2", widths[i + 1], widths[i + 1], 3, 1,
                         1, rng);
    blk.n2 = InstanceNorm2d(ps, base + ".n2", widths[i + 1]);
    blk.reshapes = strides[i] != 1 || widths[i] != widths[i + 1];
    if (blk.reshapes)
      blk.skip = Conv2dLayer(ps, base + ".skip", widths[i], widths[i + 1], 1,
                             strides[i], 0, rng);
    blocks_.push_back(std::move(blk));
  }
  proj_ = Linear(ps, "st1.proj", 4 * c, cfg.embed_dim, rng);
  classifier_ = Linear(ps, "st1.classifier", cfg.embed_dim, num_classes, rng);
}

Var Stream1::block_forward(const Block& blk, const Var& x) const {
  Var h = leaky_relu(blk.n1.forward(blk.c1.forward(x)), 0.1);
  h = blk.n2.forward(blk.c2.forward(h));
  Var shortcut = blk.reshapes ? blk.skip.forward(x) : x;
  return leaky_relu(add(shortcut, h), 0.1);
}

Var Stream1::trunk(const Var& frames) const {
  Var h = leaky_relu(stem_norm_.forward(stem_.forward(frames)), 0.1);
  for (const Block& blk : blocks_) h = block_forward(blk, h);
  return h;
}

Stream1::Output Stream1::heads(const Var& fmap, const Var& attacked, int T,
                               int skipped) const {
  Output out;
  out.skipped_channels = skipped;
  Var frame_feats = proj_.forward(spatial_mean(fmap));
  out.features = mean_groups(frame_feats, T);
  out.logits = classifier_.forward(out.features);
  if (attacked) {
    Var att_frame = proj_.forward(spatial_mean(attacked));
    out.attacked_features = mean_groups(att_frame, T);
    out.attacked_logits = classifier_.forward(out.attacked_features);
  }
  return out;
}

Stream1::Output Stream1::forward(const ClipBatch& batch, bool train,
                                 Rng& rng) const {
  Tensor frames = train ? style_augment_batch(batch.pixels, batch.modalities,
                                              batch.T, rng)
                        : batch.pixels;
  Var x =
      make_const(standardize_frames(frames, cfg_.norm_mean, cfg_.norm_std));
  Var fmap = trunk(x);

  Var attacked;
  int skipped = 0;
  if (train) {
    const int n = batch.pixels.dim(0);
    Var donor = gather_dim0(fmap, rng.derangement(n));
    AttackResult att = style_attack(fmap, donor);
    attacked = att.features;
    skipped = att.skipped_channels;
  }
  return heads(fmap, attacked, batch.T, skipped);
}

}  // namespace trireid
