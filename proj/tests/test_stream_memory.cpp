#include "trireid/stream_memory.hpp"

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "grad_check.hpp"
#include "trireid/config.hpp"
#include "trireid/errors.hpp"
#include "trireid/rng.hpp"

using namespace trireid;
using gradcheck::rand_t;

namespace {

SequenceFeature seq(std::vector<double> v, int id, Platform p) {
  SequenceFeature f;
  const int n = static_cast<int>(v.size());
  f.v = Tensor({n}, std::move(v));
  f.id = id;
  f.platform = p;
  return f;
}

// Independent re-computation of the memory-anchored contrastive loss with
// plain loops, no shared code with the graph version.
double oracle_v2m(const Tensor& feats, const std::vector<int>& ids,
                  const std::vector<Platform>& plats, const Tensor& mem,
                  const std::vector<MemKey>& keys, double tau) {
  const int b = feats.dim(0), d = feats.dim(1), m = mem.dim(0);
  auto unit = [d](const Tensor& t, int row) {
    std::vector<double> u(d);
    double n = 0.0;
    for (int j = 0; j < d; ++j) n += t[row * d + j] * t[row * d + j];
    n = std::sqrt(n);
    for (int j = 0; j < d; ++j) u[j] = t[row * d + j] / n;
    return u;
  };
  std::map<std::pair<int, int>, std::vector<int>> cells;
  for (int i = 0; i < b; ++i)
    cells[{ids[i], static_cast<int>(plats[i])}].push_back(i);

  double total = 0.0;
  for (const auto& [cell, members] : cells) {
    int row = -1;
    for (int i = 0; i < m; ++i)
      if (keys[i].id == cell.first &&
          static_cast<int>(keys[i].platform) == cell.second)
        row = i;
    REQUIRE(row >= 0);
    std::vector<double> mrow = unit(mem, row);
    double denom = 0.0;
    std::vector<double> sim(b);
    for (int j = 0; j < b; ++j) {
      std::vector<double> vj = unit(feats, j);
      double dot = 0.0;
      for (int k = 0; k < d; ++k) dot += vj[k] * mrow[k];
      sim[j] = dot / tau;
      denom += std::exp(sim[j]);
    }
    double cell_loss = 0.0;
    for (int p : members) cell_loss += -std::log(std::exp(sim[p]) / denom);
    total += cell_loss / members.size();
  }
  return total / cells.size();
}

void zero_params_with_prefix(ParamStore& ps, const std::string& prefix) {
  for (const auto& [name, v] : ps.entries())
    if (name.rfind(prefix, 0) == 0)
      for (auto& x : v->value.data) x = 0.0;
}

}  // namespace

TEST_CASE("build_memory averages members per identity and platform") {
  std::vector<SequenceFeature> feats;
  feats.push_back(seq({1.0, 2.0}, 3, Platform::Ground));
  feats.push_back(seq({3.0, 4.0}, 3, Platform::Ground));
  feats.push_back(seq({5.0, 6.0}, 3, Platform::Aerial));
  feats.push_back(seq({-1.0, 0.0}, 1, Platform::Ground));
  ViewMemory mem = build_memory(feats);

  REQUIRE(mem.size() == 3);
  CHECK(mem.keys[0] == MemKey{1, Platform::Ground});
  CHECK(mem.keys[1] == MemKey{3, Platform::Aerial});
  CHECK(mem.keys[2] == MemKey{3, Platform::Ground});
  CHECK(mem.counts == std::vector<int>{1, 1, 2});

  CHECK(mem.base[0] == -1.0);
  CHECK(mem.base[1] == 0.0);
  CHECK(mem.base[2] == 5.0);
  CHECK(mem.base[3] == 6.0);
  CHECK(mem.base[4] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(mem.base[5] == doctest::Approx(3.0).epsilon(1e-12));

  for (int64_t i = 0; i < mem.prompts.numel(); ++i) {
    CHECK(mem.prompts[i] == 0.0);
    CHECK(mem.updated[i] == mem.base[i]);
  }

  CHECK(mem.find(MemKey{3, Platform::Aerial}) == 1);
  CHECK(mem.find(MemKey{2, Platform::Ground}) == -1);
}

TEST_CASE("build_memory rejects empty and ragged input") {
  CHECK_THROWS_AS(build_memory({}), std::invalid_argument);
  std::vector<SequenceFeature> ragged;
  ragged.push_back(seq({1.0, 2.0}, 0, Platform::Ground));
  ragged.push_back(seq({1.0}, 1, Platform::Ground));
  CHECK_THROWS_AS(build_memory(ragged), std::invalid_argument);
}

TEST_CASE("zeroed decoder leaves memory untouched") {
  Config cfg = default_config();
  cfg.embed_dim = 6;
  Rng rng(4);
  ParamStore ps;
  PromptDecoder dec(ps, cfg, rng);
  zero_params_with_prefix(ps, "dec.");

  std::vector<SequenceFeature> feats;
  Rng data(9);
  for (int id = 0; id < 3; ++id)
    for (Platform p : {Platform::Aerial, Platform::Ground})
      feats.push_back(
          seq(rand_t(data, {6}).data, id, p));
  ViewMemory mem = build_memory(feats);
  Tensor base_copy = mem.base;

  Var prompts = dec.prompt_rows(mem);
  for (int64_t i = 0; i < prompts->value.numel(); ++i)
    CHECK(prompts->value[i] == 0.0);

  dec.refresh(mem);
  for (int64_t i = 0; i < mem.base.numel(); ++i) {
    CHECK(mem.prompts[i] == 0.0);
    CHECK(mem.updated[i] == base_copy[i]);
  }
}

TEST_CASE("decoder couples platforms through the shared memory union") {
  Config cfg = default_config();
  cfg.embed_dim = 4;
  Rng rng(21);
  ParamStore ps;
  PromptDecoder dec(ps, cfg, rng);

  std::vector<SequenceFeature> feats;
  Rng data(2);
  feats.push_back(seq(rand_t(data, {4}).data, 0, Platform::Aerial));
  feats.push_back(seq(rand_t(data, {4}).data, 0, Platform::Ground));
  feats.push_back(seq(rand_t(data, {4}).data, 1, Platform::Aerial));
  ViewMemory mem = build_memory(feats);

  dec.refresh(mem);
  Tensor before = mem.updated;

  // A single-component bump; a uniform one would vanish under the
  // decoder's row normalization.
  const int ground_row = mem.find(MemKey{0, Platform::Ground});
  REQUIRE(ground_row >= 0);
  mem.base[ground_row * 4] += 0.5;
  dec.refresh(mem);

  const int aerial_row = mem.find(MemKey{0, Platform::Aerial});
  double shift = 0.0;
  for (int j = 0; j < 4; ++j)
    shift += std::abs(mem.updated[aerial_row * 4 + j] -
                      before[aerial_row * 4 + j]);
  CHECK(shift > 1e-8);
}

TEST_CASE("decoder prompts are differentiable in the decoder weights") {
  Config cfg = default_config();
  cfg.embed_dim = 4;
  Rng rng(33);
  ParamStore ps;
  PromptDecoder dec(ps, cfg, rng);

  std::vector<SequenceFeature> feats;
  Rng data(14);
  for (int id = 0; id < 2; ++id)
    for (Platform p : {Platform::Aerial, Platform::Ground})
      feats.push_back(seq(rand_t(data, {4}).data, id, p));
  ViewMemory mem = build_memory(feats);

  Var w = make_const(rand_t(rng, {4, 4}));
  auto run = [&]() { return sum_all(mul(dec.refreshed(mem), w)); };

  Var loss = run();
  backward(loss);

  const double h = 1e-6;
  for (const char* name : {"dec.layer1.self.wq.W", "dec.layer2.cross.wv.W",
                           "dec.layer1.ff1.b", "dec.out.W"}) {
    INFO("parameter " << std::string(name));
    Var p = ps.find(name);
    REQUIRE(p);
    const int64_t k = p->value.numel() / 3;
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
}

TEST_CASE("loss_v2m worked example") {
  // Two orthogonal unit features, each anchoring its own cell at tau = 1:
  // every anchor sees one positive at similarity 1 and one negative at 0,
  // so the loss is -log(e / (e + 1)).
  Var feats = make_const(Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0}));
  Var updated = make_const(Tensor({2, 2}, {2.0, 0.0, 0.0, 0.5}));
  std::vector<MemKey> keys{{0, Platform::Ground}, {1, Platform::Ground}};
  Var l = loss_v2m(feats, {0, 1}, {Platform::Ground, Platform::Ground},
                   updated, keys, 1.0);
  CHECK(value(l) ==
        doctest::Approx(std::log(1.0 + std::exp(1.0)) - 1.0).epsilon(1e-12));
}

TEST_CASE("loss_v2m matches the loop oracle on random batches") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 3 + (int)rng.uniform_int(5);
    const int num_ids = 2 + (int)rng.uniform_int(3);
    std::vector<int> ids;
    std::vector<Platform> plats;
    std::vector<MemKey> keyset;
    const int b = 2 + (int)rng.uniform_int(7);
    for (int i = 0; i < b; ++i) {
      ids.push_back((int)rng.uniform_int(num_ids));
      plats.push_back(rng.uniform() < 0.5 ? Platform::Aerial
                                          : Platform::Ground);
    }
    for (int id = 0; id < num_ids; ++id)
      for (Platform p : {Platform::Aerial, Platform::Ground})
        keyset.push_back(MemKey{id, p});
    Tensor feats = rand_t(rng, {b, d}, -2.0, 2.0);
    Tensor mem = rand_t(rng, {(int)keyset.size(), d}, -2.0, 2.0);
    const double tau = 0.2 + rng.uniform(0.0, 1.0);

    double got = value(loss_v2m(make_const(feats), ids, plats,
                                make_const(mem), keyset, tau));
    double want = oracle_v2m(feats, ids, plats, mem, keyset, tau);
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("loss_v2m gradients") {
  Rng rng(55);
  std::vector<int> ids{0, 0, 1, 2};
  std::vector<Platform> plats{Platform::Aerial, Platform::Ground,
                              Platform::Ground, Platform::Aerial};
  std::vector<MemKey> keys;
  for (int id = 0; id < 3; ++id)
    for (Platform p : {Platform::Aerial, Platform::Ground})
      keys.push_back(MemKey{id, p});
  gradcheck::check_grads(
      [&](const std::vector<Var>& xs) {
        return loss_v2m(xs[0], ids, plats, xs[1], keys, 0.3);
      },
      {rand_t(rng, {4, 5}), rand_t(rng, {6, 5})}, 1e-6, 1e-5);
}

TEST_CASE("loss_v2m rejects bad input") {
  Var feats = make_const(Tensor({1, 2}, {1.0, 0.0}));
  Var updated = make_const(Tensor({1, 2}, {1.0, 0.0}));
  std::vector<MemKey> keys{{0, Platform::Ground}};
  CHECK_THROWS_AS(loss_v2m(feats, {0}, {Platform::Ground}, updated, keys,
                           0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(loss_v2m(feats, {0}, {Platform::Aerial}, updated, keys,
                           1.0),
                  DataError);
  CHECK_THROWS_AS(loss_v2m(feats, {0, 1}, {Platform::Ground}, updated, keys,
                           1.0),
                  std::invalid_argument);
}

TEST_CASE("patchify splits frames into grid-ordered patch rows") {
  // One 1-channel 4x4 frame with values 0..15 and 2x2 patches.
  Tensor frame({1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) frame[i] = i;
  Tensor rows = patchify(frame, 2);
  REQUIRE(rows.dim(0) == 4);
  REQUIRE(rows.dim(1) == 4);
  const double want[4][4] = {{0, 1, 4, 5},
                             {2, 3, 6, 7},
                             {8, 9, 12, 13},
                             {10, 11, 14, 15}};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) CHECK(rows[r * 4 + c] == want[r][c]);

  CHECK_THROWS_AS(patchify(frame, 3), std::invalid_argument);
}

TEST_CASE("stream two reduces tokens to one feature per tracklet") {
  Config cfg = default_config();
  cfg.image_height = 8;
  cfg.image_width = 8;
  cfg.st2_patch = 4;
  cfg.embed_dim = 6;
  cfg.st2_layers = 2;
  Rng init(12);
  ParamStore ps;
  Stream2 st2(ps, cfg, init);

  ClipBatch b;
  b.P = 2;
  b.K = 2;
  b.T = 3;
  Rng data(8);
  b.pixels = rand_t(data, {12, 3, 8, 8}, 0.0, 1.0);
  b.ids = {0, 0, 1, 1};
  b.platforms.assign(4, Platform::Ground);
  b.modalities.assign(4, Modality::Visible);

  Var out = st2.forward(b);
  CHECK(out->value.dim(0) == 4);
  CHECK(out->value.dim(1) == 6);

  Var replay = st2.forward(b);
  for (int64_t i = 0; i < out->value.numel(); ++i)
    CHECK(replay->value[i] == out->value[i]);

  CHECK_THROWS_AS(st2.forward_frames(b.pixels, 5), std::invalid_argument);
}

TEST_CASE("stream two weights move a projected output") {
  Config cfg = default_config();
  cfg.image_height = 8;
  cfg.image_width = 8;
  cfg.st2_patch = 4;
  cfg.embed_dim = 6;
  Rng init(44);
  ParamStore ps;
  Stream2 st2(ps, cfg, init);

  Rng data(3);
  Tensor frames = rand_t(data, {4, 3, 8, 8}, 0.0, 1.0);
  Var w = make_const(rand_t(data, {2, 6}));
  auto run = [&]() { return sum_all(mul(st2.forward_frames(frames, 2), w)); };

  Var loss = run();
  backward(loss);

  const double h = 1e-6;
  for (const char* name :
       {"st2.embed.W", "st2.pos", "st2.block1.wq.W", "st2.block1.ff2.b"}) {
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
}
