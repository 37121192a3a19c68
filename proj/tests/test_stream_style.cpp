#include "trireid/stream_style.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "grad_check.hpp"
#include "trireid/config.hpp"
#include "trireid/rng.hpp"

using namespace trireid;
using gradcheck::rand_t;

namespace {

struct LaneStats {
  double mean = 0.0, stddev = 0.0;
};

LaneStats lane_stats(const Tensor& t, int n, int c) {
  const int hw = t.dim(2) * t.dim(3);
  const int64_t base = (static_cast<int64_t>(n) * t.dim(1) + c) * hw;
  LaneStats s;
  for (int i = 0; i < hw; ++i) s.mean += t[base + i];
  s.mean /= hw;
  for (int i = 0; i < hw; ++i) {
    const double d = t[base + i] - s.mean;
    s.stddev += d * d;
  }
  s.stddev = std::sqrt(s.stddev / hw);
  return s;
}

ClipBatch tiny_batch(Rng& rng, int P, int K, int T, int h, int w) {
  ClipBatch b;
  b.P = P;
  b.K = K;
  b.T = T;
  b.pixels = Tensor({P * K * T, 3, h, w});
  for (int64_t i = 0; i < b.pixels.numel(); ++i)
    b.pixels[i] = rng.uniform(0.0, 1.0);
  for (int p = 0; p < P; ++p)
    for (int k = 0; k < K; ++k) {
      b.ids.push_back(p);
      b.platforms.push_back(k % 2 == 0 ? Platform::Ground : Platform::Aerial);
      b.modalities.push_back(k % 2 == 0 ? Modality::Visible
                                        : Modality::Infrared);
    }
  return b;
}

}  // namespace

TEST_CASE("style_augment scales visible channels independently") {
  Tensor frame({3, 2, 2});
  for (int64_t i = 0; i < frame.numel(); ++i) frame[i] = 0.1 * (double)(i + 1);
  StyleCoeffs c;
  c.r = 0.5;
  c.g = 1.0;
  c.b = 1.5;
  c.ir = 0.7;
  Tensor out = style_augment(frame, Modality::Visible, c);
  for (int i = 0; i < 4; ++i) {
    CHECK(out[i] == doctest::Approx(frame[i] * 0.5));
    CHECK(out[4 + i] == doctest::Approx(frame[4 + i] * 1.0));
    CHECK(out[8 + i] == doctest::Approx(frame[8 + i] * 1.5));
  }
}

TEST_CASE("style_augment applies one gain to replicated infrared channels") {
  Tensor frame({3, 2, 2});
  for (int i = 0; i < 4; ++i)
    frame[i] = frame[4 + i] = frame[8 + i] = 0.2 * (i + 1);
  StyleCoeffs c;
  c.r = 0.5;
  c.g = 1.5;
  c.b = 0.9;
  c.ir = 1.25;
  Tensor out = style_augment(frame, Modality::Infrared, c);
  for (int i = 0; i < 4; ++i) {
    CHECK(out[i] == doctest::Approx(frame[i] * 1.25));
    CHECK(out[4 + i] == out[i]);
    CHECK(out[8 + i] == out[i]);
  }
}

TEST_CASE("unit gains reproduce the input bit for bit") {
  Rng rng(11);
  Tensor frame = rand_t(rng, {3, 4, 3}, 0.0, 1.0);
  StyleCoeffs identity;
  for (Modality m : {Modality::Visible, Modality::Infrared}) {
    Tensor out = style_augment(frame, m, identity);
    for (int64_t i = 0; i < frame.numel(); ++i) CHECK(out[i] == frame[i]);
  }
}

TEST_CASE("batch augmentation draws gains inside [0.5, 1.5)") {
  Rng rng(3);
  ClipBatch b = tiny_batch(rng, 2, 2, 2, 4, 4);
  std::vector<StyleCoeffs> drawn;
  Tensor out = style_augment_batch(b.pixels, b.modalities, b.T, rng, &drawn);
  REQUIRE(drawn.size() == 8);
  for (const StyleCoeffs& c : drawn)
    for (double g : {c.r, c.g, c.b, c.ir}) {
      CHECK(g >= 0.5);
      CHECK(g < 1.5);
    }
  CHECK(out.same_shape(b.pixels));
  CHECK_THROWS(style_augment_batch(b.pixels, b.modalities, 3, rng));
}

TEST_CASE("style_attack matches donor statistics lane by lane") {
  Rng rng(17);
  const int N = 6, C = 3;
  Var target = make_leaf(rand_t(rng, {N, C, 5, 4}, -1.0, 2.0));
  Var donor = make_leaf(rand_t(rng, {N, C, 5, 4}, -2.0, 1.0));
  AttackResult res = style_attack(target, donor);
  CHECK(res.skipped_channels == 0);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      LaneStats got = lane_stats(res.features->value, n, c);
      LaneStats want = lane_stats(donor->value, n, c);
      CHECK(got.mean == doctest::Approx(want.mean).epsilon(1e-9));
      CHECK(got.stddev == doctest::Approx(want.stddev).epsilon(1e-9));
    }
}

TEST_CASE("style_attack worked example") {
  // target spread sqrt(1.25) around 2.5; donor spread sqrt(0.75) around 0.5.
  Var target = make_const(Tensor({1, 1, 1, 4}, {1.0, 2.0, 3.0, 4.0}));
  Var donor = make_const(Tensor({1, 1, 1, 4}, {0.0, 0.0, 0.0, 2.0}));
  AttackResult res = style_attack(target, donor);
  LaneStats s = lane_stats(res.features->value, 0, 0);
  CHECK(s.mean == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.stddev == doctest::Approx(std::sqrt(0.75)).epsilon(1e-12));
  const double ratio = std::sqrt(0.75 / 1.25);
  for (int i = 0; i < 4; ++i)
    CHECK(res.features->value[i] ==
          doctest::Approx((target->value[i] - 2.5) * ratio + 0.5));
}

TEST_CASE("attacking a sample with itself returns it unchanged") {
  Rng rng(5);
  Var x = make_leaf(rand_t(rng, {2, 3, 4, 4}));
  AttackResult res = style_attack(x, x);
  CHECK(res.features.get() == x.get());
  CHECK(res.skipped_channels == 0);
}

TEST_CASE("flat target lanes pass through and are counted") {
  Rng rng(29);
  Var target = make_leaf(rand_t(rng, {2, 2, 3, 3}));
  for (int i = 0; i < 9; ++i) target->value[i] = 0.25;  // lane (0, 0) flat
  Var donor = make_leaf(rand_t(rng, {2, 2, 3, 3}));
  AttackResult res = style_attack(target, donor);
  CHECK(res.skipped_channels == 1);
  for (int i = 0; i < 9; ++i) CHECK(res.features->value[i] == 0.25);
  LaneStats moved = lane_stats(res.features->value, 1, 1);
  LaneStats want = lane_stats(donor->value, 1, 1);
  CHECK(moved.mean == doctest::Approx(want.mean));
}

TEST_CASE("style_attack gradients") {
  Rng rng(41);
  gradcheck::check_op(
      rng,
      [](const std::vector<Var>& xs) {
        return style_attack(xs[0], xs[1]).features;
      },
      {rand_t(rng, {2, 2, 3, 4}), rand_t(rng, {2, 2, 3, 4})}, 1e-5, 1e-5);
}

TEST_CASE("loss_sa separates into distillation and consistency parts") {
  // One sample, true id 0, attacked logits heavily favoring the truth; the
  // unit-length feature gap contributes exactly 1.
  Var logits = make_const(Tensor({1, 2}, {30.0, 0.0}));
  Var feats = make_leaf(Tensor({1, 3}, {1.0, 0.0, 0.0}));
  Var att_feats = make_leaf(Tensor({1, 3}, {0.0, 0.0, 0.0}));
  Var l = loss_sa(logits, logits, feats, att_feats, {0});
  CHECK(value(l) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("loss_sa distillation term is unsmoothed cross-entropy") {
  const int C = 4;
  Var logits = make_const(Tensor::zeros({2, C}));
  Var feats = make_const(Tensor({2, 3}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0}));
  Var l = loss_sa(logits, logits, feats, feats, {1, 3});
  CHECK(value(l) == doctest::Approx(std::log((double)C)).epsilon(1e-12));
}

TEST_CASE("loss_sa consistency averages squared distances over the batch") {
  Rng rng(13);
  Var logits = make_const(rand_t(rng, {3, 5}));
  Var feats = make_const(rand_t(rng, {3, 4}));
  Var att = make_const(rand_t(rng, {3, 4}));
  const std::vector<int> ids{0, 2, 4};
  double want = value(cross_entropy_mean(logits, ids, 0.0));
  for (int i = 0; i < 3; ++i) {
    double sq = 0.0;
    for (int j = 0; j < 4; ++j) {
      const double d = feats->value[i * 4 + j] - att->value[i * 4 + j];
      sq += d * d;
    }
    want += sq / 3.0;
  }
  CHECK(value(loss_sa(logits, logits, feats, att, ids)) ==
        doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("loss_sa gradients through the attack") {
  Rng rng(23);
  const std::vector<int> ids{1, 0};
  gradcheck::check_grads(
      [&](const std::vector<Var>& xs) {
        AttackResult att = style_attack(xs[0], xs[1]);
        Var feats = spatial_mean(xs[0]);
        Var att_feats = spatial_mean(att.features);
        Var logits = matmul_nt(feats, xs[2]);
        Var att_logits = matmul_nt(att_feats, xs[2]);
        return loss_sa(logits, att_logits, feats, att_feats, ids);
      },
      {rand_t(rng, {2, 3, 4, 4}), rand_t(rng, {2, 3, 4, 4}),
       rand_t(rng, {2, 3})},
      1e-5, 1e-5);
}

TEST_CASE("stream one produces tracklet features and logits") {
  Config cfg = default_config();
  cfg.image_height = 16;
  cfg.image_width = 8;
  cfg.st1_channels = 4;
  cfg.embed_dim = 8;
  Rng init(99);
  ParamStore ps;
  Stream1 st1(ps, cfg, 5, init);

  Rng data(7);
  ClipBatch b = tiny_batch(data, 2, 2, 2, 16, 8);

  Rng fwd(31);
  Stream1::Output train_out = st1.forward(b, true, fwd);
  CHECK(train_out.features->value.dim(0) == 4);
  CHECK(train_out.features->value.dim(1) == 8);
  CHECK(train_out.logits->value.dim(1) == 5);
  REQUIRE(train_out.attacked_features);
  REQUIRE(train_out.attacked_logits);
  CHECK(train_out.attacked_features->value.same_shape(
      train_out.features->value));

  Rng fwd2(31);
  Stream1::Output replay = st1.forward(b, true, fwd2);
  for (int64_t i = 0; i < replay.features->value.numel(); ++i)
    CHECK(replay.features->value[i] == train_out.features->value[i]);

  Rng unused(0);
  Stream1::Output eval_out = st1.forward(b, false, unused);
  CHECK(!eval_out.attacked_features);
  CHECK(!eval_out.attacked_logits);
}

TEST_CASE("stream one weights move the training loss") {
  Config cfg = default_config();
  cfg.image_height = 8;
  cfg.image_width = 8;
  cfg.st1_channels = 2;
  cfg.embed_dim = 4;
  Rng init(3);
  ParamStore ps;
  Stream1 st1(ps, cfg, 3, init);

  Rng data(19);
  ClipBatch b = tiny_batch(data, 2, 2, 2, 8, 8);
  const std::vector<int> ids = b.ids;

  auto run = [&]() {
    Rng fwd(55);
    Stream1::Output out = st1.forward(b, true, fwd);
    return loss_sa(out.logits, out.attacked_logits, out.features,
                   out.attacked_features, ids);
  };

  Var loss = run();
  backward(loss);
  const double base = value(loss);

  // Central finite differences on a few named parameters, replaying the
  // same augmentation and donor assignment each time.
  const double h = 1e-6;
  for (const char* name :
       {"st1.stem.W", "st1.block2.c1.W", "st1.block1.n1.gamma", "st1.proj.W",
        "st1.classifier.b"}) {
    INFO("parameter " << std::string(name));
    Var p = ps.find(name);
    REQUIRE(p);
    const int64_t k = p->value.numel() / 2;
    const double saved = p->value[k];
    p->value[k] = saved + h;
    const double up = value(run());
    p->value[k] = saved - h;
    const double down = value(run());
    p->value[k] = saved;
    const double fd = (up - down) / (2 * h);
    const double an = p->grad[k];
    CHECK(std::abs(fd - an) <=
          1e-4 * std::max({1.0, std::abs(fd), std::abs(an)}));
  }
  CHECK(base > 0.0);
}
