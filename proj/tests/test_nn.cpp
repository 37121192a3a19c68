#include "doctest.h"

#include "grad_check.hpp"
#include "trireid/adam.hpp"
#include "trireid/nn.hpp"

#include <cmath>
#include <sstream>

using namespace trireid;
using gradcheck::rand_t;

TEST_CASE("param store rejects duplicates and tracks size") {
  ParamStore ps;
  ps.add("a", Tensor::zeros({2, 3}));
  ps.add("b", Tensor::zeros({4}));
  CHECK(ps.total_size() == 10);
  CHECK(ps.find("a") != nullptr);
  CHECK(ps.find("missing") == nullptr);
  CHECK_THROWS_AS(ps.add("a", Tensor::zeros({1})), std::logic_error);
}

TEST_CASE("linear layer computes xW^T + b") {
  ParamStore ps;
  Rng rng(1);
  Linear lin(ps, "lin", 3, 2, rng);
  lin.W->value = Tensor({2, 3}, {1, 0, 0, 0, 1, 0});
  lin.b->value = Tensor({2}, {0.5, -0.5});
  Var x = make_const(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var y = lin.forward(x);
  CHECK(y->value[0] == doctest::Approx(1.5));
  CHECK(y->value[1] == doctest::Approx(1.5));
  CHECK(y->value[2] == doctest::Approx(4.5));
  CHECK(y->value[3] == doctest::Approx(4.5));
}

TEST_CASE("instance norm standardizes each sample-channel plane") {
  ParamStore ps;
  Rng rng(2);
  InstanceNorm2d norm(ps, "in", 3);
  Tensor x = rand_t(rng, {2, 3, 4, 5}, -2.0, 5.0);
  Var y = norm.forward(make_const(x));
  const int hw = 4 * 5;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) {
      double mean = 0.0, var = 0.0;
      for (int i = 0; i < hw; ++i)
        mean += y->value[(n * 3 + c) * hw + i];
      mean /= hw;
      for (int i = 0; i < hw; ++i) {
        double d = y->value[(n * 3 + c) * hw + i] - mean;
        var += d * d;
      }
      var /= hw;
      CHECK(mean == doctest::Approx(0.0).epsilon(1e-10));
      CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("instance norm gradients") {
  Rng rng(3);
  gradcheck::check_op(
      rng,
      [](const std::vector<Var>& xs) {
        ParamStore ps;
        InstanceNorm2d norm(ps, "in", 2);
        norm.gamma = xs[1];
        norm.beta = xs[2];
        return norm.forward(xs[0]);
      },
      {rand_t(rng, {2, 2, 3, 3}), rand_t(rng, {2}, 0.5, 1.5),
       rand_t(rng, {2})});
}

TEST_CASE("attention block keeps shape and is differentiable") {
  Rng rng(4);
  ParamStore ps;
  Rng init(7);
  AttentionBlock block(ps, "blk", 6, init);
  Tensor x = rand_t(rng, {6, 6});  // 2 sequences of length 3
  Var y = block.forward(make_leaf(x), 3);
  CHECK(y->value.shape == std::vector<int>{6, 6});

  gradcheck::check_op(
      rng,
      [&](const std::vector<Var>& xs) { return block.forward(xs[0], 3); },
      {x}, 1e-5, 1e-5);
}

TEST_CASE("cross attention with zeroed output projection is the identity") {
  ParamStore ps;
  Rng rng(5);
  CrossAttention ca(ps, "ca", 4, rng);
  for (auto& v : ca.wo.W->value.data) v = 0.0;
  Tensor q = rand_t(rng, {4, 4});
  Tensor kv = rand_t(rng, {6, 4});
  Var out = ca.forward(make_const(q), 2, make_const(kv), 3);
  for (int64_t i = 0; i < q.numel(); ++i) CHECK(out->value[i] == q[i]);
}

TEST_CASE("cross attention gradients") {
  Rng rng(6);
  ParamStore ps;
  Rng init(8);
  CrossAttention ca(ps, "ca", 4, init);
  gradcheck::check_op(
      rng,
      [&](const std::vector<Var>& xs) {
        return ca.forward(xs[0], 2, xs[1], 3);
      },
      {rand_t(rng, {4, 4}), rand_t(rng, {6, 4})}, 1e-5, 1e-5);
}

TEST_CASE("gru final state differs between directions and is differentiable") {
  Rng rng(9);
  ParamStore ps;
  Rng init(10);
  Gru gru(ps, "gru", 3, 4, init);
  Tensor x = rand_t(rng, {2 * 5, 3});
  Var fwd = gru.forward_seq(make_const(x), 2, 5, false);
  Var bwd = gru.forward_seq(make_const(x), 2, 5, true);
  CHECK(fwd->value.shape == std::vector<int>{2, 4});
  double diff = 0.0;
  for (int64_t i = 0; i < fwd->value.numel(); ++i)
    diff += std::abs(fwd->value[i] - bwd->value[i]);
  CHECK(diff > 1e-6);

  gradcheck::check_op(
      rng,
      [&](const std::vector<Var>& xs) {
        return gru.forward_seq(xs[0], 2, 5, false);
      },
      {x}, 1e-5, 1e-5);
}

TEST_CASE("bigru concatenates both directions") {
  Rng rng(11);
  ParamStore ps;
  Rng init(12);
  BiGru gru(ps, "bg", 3, 4, init);
  Var y = gru.forward(make_const(rand_t(rng, {2 * 3, 3})), 2, 3);
  CHECK(y->value.shape == std::vector<int>{2, 8});
}

TEST_CASE("adam drives a quadratic to its minimum") {
  ParamStore ps;
  Var w = ps.add("w", Tensor({4}, {5.0, -3.0, 2.0, 0.5}));
  Tensor target({4}, {1.0, 2.0, -1.0, 0.0});
  Adam opt(ps, 0.9, 0.999, 1e-8, 0.0);
  for (int step = 0; step < 400; ++step) {
    ps.zero_grads();
    Var diff = sub(w, make_const(target));
    Var loss = sum_all(mul(diff, diff));
    backward(loss);
    opt.step(0.05, 10.0);
  }
  for (int i = 0; i < 4; ++i)
    CHECK(w->value[i] == doctest::Approx(target[i]).epsilon(1e-3));
  CHECK(opt.steps_taken() == 400);
}

TEST_CASE("gradient clipping bounds the effective step") {
  ParamStore ps;
  Var w = ps.add("w", Tensor({1}, {0.0}));
  Adam opt(ps, 0.0, 0.0, 1e-12, 0.0);  // plain clipped SGD on the gradient sign
  ps.zero_grads();
  w->grad.data[0] = 1e9;
  opt.step(0.1, 1.0);
  // After clipping to norm 1, the bias-corrected update is lr * g/|g|.
  CHECK(w->value[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam state round-trips through save/load") {
  auto run = [](int total, int checkpoint_at) {
    ParamStore ps;
    Var w = ps.add("w", Tensor({3}, {2.0, -1.0, 0.5}));
    Adam opt(ps, 0.9, 0.999, 1e-8, 1e-4);
    std::string blob;
    Tensor saved_w;
    for (int step = 0; step < total; ++step) {
      if (step == checkpoint_at) {
        std::ostringstream os;
        opt.save(os);
        blob = os.str();
        saved_w = w->value;
      }
      ps.zero_grads();
      Var loss = sum_all(mul(w, w));
      backward(loss);
      opt.step(0.01, 10.0);
    }
    return std::make_tuple(w->value.data, blob, saved_w);
  };

  auto [direct, blob, saved_w] = run(50, 20);

  ParamStore ps;
  Var w = ps.add("w", saved_w);
  Adam opt(ps, 0.9, 0.999, 1e-8, 1e-4);
  std::istringstream is(blob);
  opt.load(is);
  CHECK(opt.steps_taken() == 20);
  for (int step = 20; step < 50; ++step) {
    ps.zero_grads();
    Var loss = sum_all(mul(w, w));
    backward(loss);
    opt.step(0.01, 10.0);
  }
  CHECK(w->value.data == direct);
}
