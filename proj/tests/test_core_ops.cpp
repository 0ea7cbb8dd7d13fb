#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dropnas/core/ops.hpp"
#include "dropnas/core/optim.hpp"
#include "gradcheck.hpp"

using namespace dropnas;
using dropnas::testing::grad_check;
using dropnas::testing::random_tensor;
using dropnas::testing::random_tensor_no_kink;
using dropnas::testing::random_tensor_separated;

namespace {
// scalar probe: dot the op output against a fixed random direction so the
// finite-difference loss exercises every output element
Tensor probe(Tape& tape, const Tensor& out, const Tensor& dir) {
  return sum(tape, mul(tape, out, dir));
}
}  // namespace

TEST_CASE("softmax of uniform logits is uniform") {
  Tape tape;
  Tensor x = Tensor::zeros({8});
  Tensor p = softmax(tape, x);
  for (int i = 0; i < 8; ++i) REQUIRE(p.v()[i] == Catch::Approx(0.125).margin(1e-15));
}

TEST_CASE("softmax rows are non-negative and sum to one") {
  RngStream rng(7, "softmax-prop");
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    Tensor x = random_tensor({4, 9}, rng, false, -30.0, 30.0);
    Tensor p = softmax(tape, x);
    for (int r = 0; r < 4; ++r) {
      Real s = 0;
      for (int k = 0; k < 9; ++k) {
        REQUIRE(p.v()[r * 9 + k] >= 0.0);
        s += p.v()[r * 9 + k];
      }
      REQUIRE(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("conv2d with identity kernel reproduces input") {
  Tape tape;
  RngStream rng(3, "conv-ident");
  Tensor x = random_tensor({2, 3, 5, 5}, rng, false);
  // delta kernel: w[c][c][1][1] = 1 at the center of a 3x3 kernel
  Tensor w = Tensor::zeros({3, 3, 3, 3});
  for (int c = 0; c < 3; ++c) w.v()[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
  Tensor y = conv2d(tape, x, w, 1, 1, 1);
  REQUIRE(y.shape() == x.shape());
  for (long i = 0; i < x.numel(); ++i) REQUIRE(y.v()[i] == Catch::Approx(x.v()[i]).margin(1e-15));
}

TEST_CASE("conv2d gradient matches finite differences on random 4x4x2 input") {
  RngStream rng(11, "conv-fd");
  Tensor x = random_tensor({1, 2, 4, 4}, rng);
  Tensor w = random_tensor({3, 2, 3, 3}, rng);
  Tensor dir = random_tensor({1, 3, 4, 4}, rng, false);
  auto fn = [&](Tape& t) { return probe(t, conv2d(t, x, w, 1, 1, 1), dir); };
  auto res = grad_check(fn, {x, w});
  REQUIRE(res.ok);
  REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("finite-difference checks across all differentiable ops") {
  RngStream rng(42, "op-fd");
  const int trials = 20;

  SECTION("matmul") {
    for (int t = 0; t < trials; ++t) {
      Tensor a = random_tensor({3, 4}, rng);
      Tensor b = random_tensor({4, 2}, rng);
      Tensor dir = random_tensor({3, 2}, rng, false);
      auto fn = [&](Tape& tp) { return probe(tp, matmul(tp, a, b), dir); };
      REQUIRE(grad_check(fn, {a, b}).ok);
    }
  }
  SECTION("add_bias") {
    for (int t = 0; t < trials; ++t) {
      Tensor a = random_tensor({3, 5}, rng);
      Tensor b = random_tensor({5}, rng);
      Tensor dir = random_tensor({3, 5}, rng, false);
      auto fn = [&](Tape& tp) { return probe(tp, add_bias(tp, a, b), dir); };
      REQUIRE(grad_check(fn, {a, b}).ok);
    }
  }
  SECTION("conv2d stride 2") {
    for (int t = 0; t < trials; ++t) {
      Tensor x = random_tensor({2, 2, 6, 6}, rng);
      Tensor w = random_tensor({2, 2, 3, 3}, rng);
      Tensor dir = random_tensor({2, 2, 3, 3}, rng, false);
      auto fn = [&](Tape& tp) { return probe(tp, conv2d(tp, x, w, 2, 1, 1), dir); };
      REQUIRE(grad_check(fn, {x, w}).ok);
    }
  }
  SECTION("conv2d dilation 2") {
    for (int t = 0; t < trials; ++t) {
      Tensor x = random_tensor({1, 2, 7, 7}, rng);
      Tensor w = random_tensor({2, 2, 3, 3}, rng);
      Tensor dir = random_tensor({1, 2, 7, 7}, rng, false);
      auto fn = [&](Tape& tp) { return probe(tp, conv2d(tp, x, w, 1, 2, 1), dir); };
      REQUIRE(grad_check(fn, {x, w}).ok);
    }
  }
  SECTION("conv2d depthwise (groups = channels)") {
    for (int t = 0; t < trials; ++t) {
      Tensor x = random_tensor({2, 3, 5, 5}, rng);
      Tensor w = random_tensor({3, 1, 3, 3}, rng);
      Tensor dir = random_tensor({2, 3, 5, 5}, rng, false);
      auto fn = [&](Tape& tp) { return probe(tp, conv2d(tp, x, w, 1, 1, 3), dir); };
      REQUIRE(grad_check(fn, {x, w}).ok);
    }
  }
  SECTION("conv2d 5x5") {
    for (int t = 0; t < trials; ++t) {
      Tensor x = random_tensor({1, 2, 6, 6}, rng);
      Tensor w = random_tensor({2, 2, 5, 5}, rng);
      Tensor dir = random_tensor({1, 2, 6, 6}, rng, false);
      auto fn = [&](Tape& tp) { return probe(tp, conv2d(tp, x, w, 1, 1, 1), dir); };
      REQUIRE(grad_check(fn, {x, w}).ok);
    }
  }
  SECTION("relu") {
    for (int t = 0; t < trials; ++t) {
      Tensor x = random_tensor_no_kink({2, 3, 4, 4}, rng);
      Tensor dir = random_tensor({2, 3, 4, 4}, rng, false);
      auto fn = [&](Tape& tp) { return probe(tp, relu(tp, x), dir); };
      REQUIRE(grad_check(fn, {x}).ok);
    }
  }
  SECTION("max_pool3x3") {
    for (int t = 0; t < trials; ++t) {
      Tensor x = random_tensor_separated({1, 2, 5, 5}, rng);
      Tensor dir = random_tensor({1, 2, 5, 5}, rng, false);
      auto fn = [&](Tape& tp) { return probe(tp, max_pool3x3(tp, x, 1), dir); };
      REQUIRE(grad_check(fn, {x}).ok);
    }
  }
  SECTION("max_pool3x3 stride 2") {
    for (int t = 0; t < trials; ++t) {
      Tensor x = random_tensor_separated({1, 2, 6, 6}, rng);
      Tensor dir = random_tensor({1, 2, 3, 3}, rng, false);
      auto fn = [&](Tape& tp) { return probe(tp, max_pool3x3(tp, x, 2), dir); };
      REQUIRE(grad_check(fn, {x}).ok);
    }
  }
  SECTION("avg_pool3x3") {
    for (int t = 0; t < trials; ++t) {
      Tensor x = random_tensor({2, 2, 5, 5}, rng);
      Tensor dir = random_tensor({2, 2, 5, 5}, rng, false);
      auto fn = [&](Tape& tp) { return probe(tp, avg_pool3x3(tp, x, 1), dir); };
      REQUIRE(grad_check(fn, {x}).ok);
    }
  }
  SECTION("avg_pool3x3 stride 2") {
    for (int t = 0; t < trials; ++t) {
      Tensor x = random_tensor({2, 2, 6, 6}, rng);
      Tensor dir = random_tensor({2, 2, 3, 3}, rng, false);
      auto fn = [&](Tape& tp) { return probe(tp, avg_pool3x3(tp, x, 2), dir); };
      REQUIRE(grad_check(fn, {x}).ok);
    }
  }
  SECTION("batch_norm without affine") {
    for (int t = 0; t < trials; ++t) {
      Tensor x = random_tensor({3, 2, 4, 4}, rng);
      Tensor dir = random_tensor({3, 2, 4, 4}, rng, false);
      auto fn = [&](Tape& tp) { return probe(tp, batch_norm(tp, x, {}, {}), dir); };
      REQUIRE(grad_check(fn, {x}).ok);
    }
  }
  SECTION("batch_norm with affine") {
    for (int t = 0; t < trials; ++t) {
      Tensor x = random_tensor({3, 2, 4, 4}, rng);
      Tensor gm = random_tensor({2}, rng, true, 0.5, 1.5);
      Tensor bt = random_tensor({2}, rng);
      Tensor dir = random_tensor({3, 2, 4, 4}, rng, false);
      auto fn = [&](Tape& tp) { return probe(tp, batch_norm(tp, x, gm, bt), dir); };
      REQUIRE(grad_check(fn, {x, gm, bt}).ok);
    }
  }
  SECTION("softmax") {
    for (int t = 0; t < trials; ++t) {
      Tensor x = random_tensor({8}, rng);
      Tensor dir = random_tensor({8}, rng, false);
      auto fn = [&](Tape& tp) { return probe(tp, softmax(tp, x), dir); };
      REQUIRE(grad_check(fn, {x}).ok);
    }
  }
  SECTION("cross_entropy") {
    for (int t = 0; t < trials; ++t) {
      Tensor z = random_tensor({4, 5}, rng);
      std::vector<int> labels{0, 2, 4, 1};
      auto fn = [&](Tape& tp) { return cross_entropy(tp, z, labels); };
      REQUIRE(grad_check(fn, {z}).ok);
    }
  }
  SECTION("global_avg_pool") {
    for (int t = 0; t < trials; ++t) {
      Tensor x = random_tensor({2, 3, 4, 4}, rng);
      Tensor dir = random_tensor({2, 3}, rng, false);
      auto fn = [&](Tape& tp) { return probe(tp, global_avg_pool(tp, x), dir); };
      REQUIRE(grad_check(fn, {x}).ok);
    }
  }
  SECTION("concat_channels") {
    for (int t = 0; t < trials; ++t) {
      Tensor a = random_tensor({2, 2, 3, 3}, rng);
      Tensor b = random_tensor({2, 3, 3, 3}, rng);
      Tensor dir = random_tensor({2, 5, 3, 3}, rng, false);
      auto fn = [&](Tape& tp) { return probe(tp, concat_channels(tp, {a, b}), dir); };
      REQUIRE(grad_check(fn, {a, b}).ok);
    }
  }
  SECTION("subsample stride 2") {
    for (int t = 0; t < trials; ++t) {
      Tensor x = random_tensor({2, 2, 6, 6}, rng);
      Tensor dir = random_tensor({2, 2, 3, 3}, rng, false);
      auto fn = [&](Tape& tp) { return probe(tp, subsample(tp, x, 2), dir); };
      REQUIRE(grad_check(fn, {x}).ok);
    }
  }
  SECTION("elementwise add / mul / scale / scale_by_element") {
    for (int t = 0; t < trials; ++t) {
      Tensor a = random_tensor({3, 4}, rng);
      Tensor b = random_tensor({3, 4}, rng);
      Tensor coeff = random_tensor({5}, rng);
      Tensor dir = random_tensor({3, 4}, rng, false);
      auto fn = [&](Tape& tp) {
        Tensor s = add(tp, mul(tp, a, b), scale(tp, a, 0.5));
        return probe(tp, scale_by_element(tp, s, coeff, 2), dir);
      };
      REQUIRE(grad_check(fn, {a, b, coeff}).ok);
    }
  }
}

TEST_CASE("backward trivial losses") {
  SECTION("loss = sum(x) gives all-ones gradient") {
    Tape tape;
    RngStream rng(5, "sum");
    Tensor x = random_tensor({2, 3, 2, 2}, rng);
    Tensor loss = sum(tape, x);
    tape.backward(loss);
    for (long i = 0; i < x.numel(); ++i) REQUIRE(x.g()[i] == 1.0);
  }
  SECTION("loss = sum(x^2)/2 gives grad x") {
    Tape tape;
    RngStream rng(6, "sumsq");
    Tensor x = random_tensor({7}, rng);
    Tensor loss = scale(tape, sum(tape, mul(tape, x, x)), 0.5);
    tape.backward(loss);
    for (long i = 0; i < x.numel(); ++i)
      REQUIRE(x.g()[i] == Catch::Approx(x.v()[i]).margin(1e-15));
  }
}

TEST_CASE("gradient accumulation across repeated use") {
  RngStream rng(8, "accum");
  Tensor x = random_tensor({6}, rng);
  Tensor dir = random_tensor({6}, rng, false);

  // combined: y = x*dir + x*dir (x used twice)
  Tape t1;
  Tensor both = add(t1, mul(t1, x, dir), mul(t1, x, dir));
  t1.backward(sum(t1, both));
  std::vector<Real> g_both = x.g();

  x.zero_grad();
  Tape t2;
  t2.backward(sum(t2, mul(t2, x, dir)));
  std::vector<Real> g_once = x.g();

  for (long i = 0; i < x.numel(); ++i)
    REQUIRE(g_both[i] == Catch::Approx(2.0 * g_once[i]).margin(1e-15));
}

TEST_CASE("tape reset / double backward guard") {
  Tape tape;
  Tensor x = Tensor::from({1}, {2.0}, true);
  Tensor loss = mul(tape, x, x);
  tape.backward(loss);
  REQUIRE_THROWS_AS(tape.backward(loss), ContractError);
  tape.reset();
  REQUIRE(tape.size() == 0);
}

TEST_CASE("non-finite op output raises a numeric error naming the op") {
  Tape tape;
  Tensor x = Tensor::from({2}, {1e308, 1e308});
  try {
    add(tape, x, x);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    REQUIRE(std::string(e.what()).find("add") != std::string::npos);
  }
}

TEST_CASE("grad_mask blocks gradient exactly on dropped indices") {
  RngStream rng(9, "gmask");
  Tensor x = random_tensor({6}, rng);
  Tape tape;
  Tensor masked = grad_mask(tape, x, {1, 0, 1, 0, 1, 1});
  // forward identity
  for (long i = 0; i < 6; ++i) REQUIRE(masked.v()[i] == x.v()[i]);
  Tensor dir = random_tensor({6}, rng, false);
  tape.backward(sum(tape, mul(tape, masked, dir)));
  REQUIRE(x.g()[1] == 0.0);
  REQUIRE(x.g()[3] == 0.0);
  REQUIRE(x.g()[0] == Catch::Approx(dir.v()[0]).margin(1e-15));
}

TEST_CASE("clip_grad_norm") {
  SECTION("3-4-5 triangle scales to max_norm 3") {
    Tensor p = Tensor::zeros({2}, true);
    p.g()[0] = 3.0;
    p.g()[1] = 4.0;
    std::vector<Tensor> params{p};
    Real before = clip_grad_norm(params, 3.0);
    REQUIRE(before == Catch::Approx(5.0).margin(1e-12));
    REQUIRE(p.g()[0] == Catch::Approx(1.8).margin(1e-12));
    REQUIRE(p.g()[1] == Catch::Approx(2.4).margin(1e-12));
  }
  SECTION("norm below threshold is untouched") {
    Tensor p = Tensor::zeros({1}, true);
    p.g()[0] = 2.0;
    std::vector<Tensor> params{p};
    Real before = clip_grad_norm(params, 3.0);
    REQUIRE(before == Catch::Approx(2.0).margin(1e-12));
    REQUIRE(p.g()[0] == 2.0);
  }
  SECTION("100 random tensors: post-clip norm equals min(before, 3)") {
    RngStream rng(10, "clip");
    std::vector<Tensor> params;
    for (int i = 0; i < 100; ++i) {
      Tensor p = Tensor::zeros({3}, true);
      for (Real& g : p.g()) g = static_cast<Real>(rng.uniform(-1, 1));
      params.push_back(p);
    }
    Real before = clip_grad_norm(params, 3.0);
    Real sq = 0;
    for (Tensor& p : params)
      for (Real g : p.g()) sq += g * g;
    REQUIRE(std::sqrt(sq) == Catch::Approx(std::min(before, (Real)3.0)).margin(1e-9));
  }
  SECTION("zero gradients are a no-op") {
    Tensor p = Tensor::zeros({4}, true);
    std::vector<Tensor> params{p};
    REQUIRE(clip_grad_norm(params, 3.0) == 0.0);
  }
}

TEST_CASE("optimizer steps") {
  SECTION("plain sgd: p=1, g=0.5, lr=1 -> p=0.5") {
    Tensor p = Tensor::from({1}, {1.0}, true);
    p.g()[0] = 0.5;
    std::vector<Tensor> params{p};
    Optimizer opt = Optimizer::sgd_momentum(1.0, 0.0, 0.0);
    opt.step(params);
    REQUIRE(p.v()[0] == Catch::Approx(0.5).margin(1e-15));
  }
  SECTION("mask false everywhere with nonzero decay equals decay off") {
    RngStream rng(12, "mask-decay");
    Tensor a = random_tensor({5}, rng);
    Tensor b = a.clone_values();
    Tensor bt = Tensor::zeros({5}, true);
    bt.v() = b.v();
    for (int i = 0; i < 5; ++i) {
      a.g()[i] = 0.1 * i;
      bt.g()[i] = 0.1 * i;
    }
    std::vector<std::uint8_t> none(5, 0);
    std::vector<const std::vector<std::uint8_t>*> masks{&none};
    std::vector<Tensor> pa{a}, pb{bt};
    Optimizer oa = Optimizer::sgd_momentum(0.1, 0.9, 0.001);
    Optimizer ob = Optimizer::sgd_momentum(0.1, 0.9, 0.0);
    oa.step(pa, &masks);
    ob.step(pb, &masks);
    for (int i = 0; i < 5; ++i) REQUIRE(a.v()[i] == bt.v()[i]);
  }
  SECTION("adam scalar step matches the closed-form update") {
    const Real lr = 0.01, b1 = 0.5, b2 = 0.999, eps = 1e-8;
    const Real p0 = 0.7, g = -0.3;
    Tensor p = Tensor::from({1}, {p0}, true);
    p.g()[0] = g;
    std::vector<Tensor> params{p};
    Optimizer opt = Optimizer::adam(lr, b1, b2, 0.0);
    opt.step(params);
    // independent closed form at t=1 from zero moments
    const Real m = (1 - b1) * g, v = (1 - b2) * g * g;
    const Real mh = m / (1 - b1), vh = v / (1 - b2);
    const Real expect = p0 - lr * mh / (std::sqrt(vh) + eps);
    REQUIRE(p.v()[0] == Catch::Approx(expect).margin(1e-12));
  }
  SECTION("missing grad on tracked parameter errors") {
    Tensor p = Tensor::zeros({2}, false);
    std::vector<Tensor> params{p};
    Optimizer opt = Optimizer::sgd_momentum(0.1, 0.9, 0.0);
    REQUIRE_THROWS_AS(opt.step(params), ContractError);
  }
  SECTION("masked-out elements keep value and moments bit-identical") {
    RngStream rng(13, "mask-iso");
    Tensor p = random_tensor({6}, rng);
    Optimizer opt = Optimizer::adam(0.01, 0.5, 0.999, 0.001);
    std::vector<Tensor> params{p};
    // one unmasked step to populate moments
    for (int i = 0; i < 6; ++i) p.g()[i] = 0.2;
    opt.step(params);
    std::vector<Real> vals = p.v();
    std::vector<Real> mom1 = opt.m1[0], mom2 = opt.m2[0];
    // second step with elements 1,4 inactive
    std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 1};
    std::vector<const std::vector<std::uint8_t>*> masks{&mask};
    for (int i = 0; i < 6; ++i) p.g()[i] = -0.7;
    opt.step(params, &masks);
    for (int i : {1, 4}) {
      REQUIRE(p.v()[i] == vals[i]);
      REQUIRE(opt.m1[0][i] == mom1[i]);
      REQUIRE(opt.m2[0][i] == mom2[i]);
    }
    for (int i : {0, 2, 3, 5}) REQUIRE(p.v()[i] != vals[i]);
  }
}

TEST_CASE("deterministic rng streams") {
  RngStream a(99, "mask", 5, 3);
  RngStream b(99, "mask", 5, 3);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
  RngStream c(99, "mask", 6, 3);
  bool differ = false;
  RngStream a2(99, "mask", 5, 3);
  for (int i = 0; i < 10; ++i) differ = differ || (a2.next_u64() != c.next_u64());
  REQUIRE(differ);
}
