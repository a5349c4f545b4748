#include <cmath>
#include <random>

#include "doctest.h"
#include "mriqa/tensor.hpp"
#include "testutil.hpp"

using mriqa::GradientTapeT;
using mriqa::Tensor64;
using mriqa::TensorT;
using testutil::random_tensor;
using testutil::weighted_sum;

using Tape = GradientTapeT<double>;
using Var = Tape::Var;

namespace {

// Finite-difference check of a weighted-sum probe through `build`, with
// respect to the input selected by `wrt` (0 = first leaf, 1 = second).
double check_gradient(const Tensor64& a, const Tensor64& b,
                      const std::function<Var(Tape&, Var, Var)>& build, int wrt,
                      std::mt19937_64& rng, double step = 1e-5) {
  Tape probe_tape;
  Var pa = probe_tape.leaf(a);
  Var pb = probe_tape.leaf(b);
  Var out = build(probe_tape, pa, pb);
  const Tensor64 weights = random_tensor<double>(probe_tape.value(out).shape, rng);

  Tape tape;
  Var va = tape.leaf(a);
  Var vb = tape.leaf(b);
  Var loss = weighted_sum(tape, build(tape, va, vb), weights);
  tape.backward(loss);
  const Tensor64 analytic = tape.grad(wrt == 0 ? va : vb);

  auto f = [&](const Tensor64& x) {
    Tape t2;
    Var xa = t2.leaf(wrt == 0 ? x : a);
    Var xb = t2.leaf(wrt == 0 ? b : x);
    Var l = weighted_sum(t2, build(t2, xa, xb), weights);
    return t2.value(l).data[0];
  };
  return mriqa::finite_diff_check<double>(f, wrt == 0 ? a : b, step, analytic);
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("conv2d sums a ones kernel over a ones input") {
  Tape tape;
  Var in = tape.leaf(Tensor64::full({1, 3, 3}, 1.0));
  Var k = tape.leaf(Tensor64::full({1, 1, 3, 3}, 1.0));
  Var out = tape.conv2d(in, k, 1, 0);
  REQUIRE(tape.value(out).shape == std::vector<int>{1, 1, 1});
  CHECK(tape.value(out).data[0] == 9.0);
}

TEST_CASE("conv2d with an identity 1x1 kernel is the identity") {
  std::mt19937_64 rng(11);
  const Tensor64 x = random_tensor<double>({3, 4, 5}, rng);
  Tape tape;
  Tensor64 k = Tensor64::zeros({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) k.data[static_cast<std::size_t>(c) * 3 + c] = 1.0;
  Var out = tape.conv2d(tape.leaf(x), tape.leaf(k), 1, 0);
  CHECK(tape.value(out).data == x.data);
}

TEST_CASE("conv2d output extent follows the stride/padding arithmetic") {
  std::mt19937_64 rng(12);
  Tape tape;
  Var in = tape.leaf(random_tensor<double>({2, 9, 9}, rng));
  Var k = tape.leaf(random_tensor<double>({4, 2, 3, 3}, rng));
  CHECK(tape.value(tape.conv2d(in, k, 2, 1)).shape == std::vector<int>{4, 5, 5});
  CHECK(tape.value(tape.conv2d(in, k, 1, 0)).shape == std::vector<int>{4, 7, 7});
}

TEST_CASE("conv2d gradients match central finite differences") {
  std::mt19937_64 rng(42);
  const Tensor64 x = random_tensor<double>({2, 5, 5}, rng);
  const Tensor64 k = random_tensor<double>({3, 2, 3, 3}, rng);
  auto build = [](Tape& t, Var a, Var b) { return t.conv2d(a, b, 1, 1); };
  CHECK(check_gradient(x, k, build, 0, rng) < 1e-4);
  CHECK(check_gradient(x, k, build, 1, rng) < 1e-4);
  auto strided = [](Tape& t, Var a, Var b) { return t.conv2d(a, b, 2, 1); };
  CHECK(check_gradient(x, k, strided, 0, rng) < 1e-4);
  CHECK(check_gradient(x, k, strided, 1, rng) < 1e-4);
}

TEST_CASE("conv2d rejects incompatible shapes") {
  Tape tape;
  Var in = tape.leaf(Tensor64::zeros({2, 5, 5}));
  Var k = tape.leaf(Tensor64::zeros({3, 4, 3, 3}));
  CHECK_THROWS_AS(tape.conv2d(in, k, 1, 0), mriqa::ShapeError);
  Var k2 = tape.leaf(Tensor64::zeros({3, 2, 3, 3}));
  CHECK_THROWS_AS(tape.conv2d(in, k2, 0, 0), mriqa::InvalidInputError);
}

TEST_CASE("conv2d is linear in its input") {
  std::mt19937_64 rng(7);
  const Tensor64 x = random_tensor<double>({2, 6, 6}, rng);
  const Tensor64 y = random_tensor<double>({2, 6, 6}, rng);
  const Tensor64 k = random_tensor<double>({3, 2, 3, 3}, rng);
  const double a = 0.37, b = -1.25;

  Tensor64 combo = x;
  for (std::size_t i = 0; i < combo.data.size(); ++i) combo.data[i] = a * x.data[i] + b * y.data[i];

  Tape tape;
  Var vk = tape.leaf(k);
  const Tensor64 lhs = tape.value(tape.conv2d(tape.leaf(combo), vk, 1, 1));
  const Tensor64 cx = tape.value(tape.conv2d(tape.leaf(x), vk, 1, 1));
  const Tensor64 cy = tape.value(tape.conv2d(tape.leaf(y), vk, 1, 1));
  for (std::size_t i = 0; i < lhs.data.size(); ++i) {
    CHECK(lhs.data[i] == doctest::Approx(a * cx.data[i] + b * cy.data[i]).epsilon(1e-10));
  }
}

TEST_CASE("depthwise_conv2d with identity kernels is the identity") {
  std::mt19937_64 rng(13);
  const Tensor64 x = random_tensor<double>({2, 4, 4}, rng);
  Tensor64 k = Tensor64::zeros({2, 3, 3});
  k.data[4] = 1.0;       // center tap, channel 0
  k.data[9 + 4] = 1.0;   // center tap, channel 1
  Tape tape;
  Var out = tape.depthwise_conv2d(tape.leaf(x), tape.leaf(k), 1, 1);
  CHECK(tape.value(out).data == x.data);
}

TEST_CASE("depthwise_conv2d equals conv2d with a block-diagonal kernel") {
  std::mt19937_64 rng(14);
  const Tensor64 x = random_tensor<double>({3, 6, 6}, rng);
  const Tensor64 dw = random_tensor<double>({3, 3, 3}, rng);
  Tensor64 full = Tensor64::zeros({3, 3, 3, 3});
  for (int c = 0; c < 3; ++c) {
    for (int t = 0; t < 9; ++t) {
      full.data[((static_cast<std::size_t>(c) * 3 + c) * 9) + t] =
          dw.data[static_cast<std::size_t>(c) * 9 + t];
    }
  }
  Tape tape;
  const Tensor64 a = tape.value(tape.depthwise_conv2d(tape.leaf(x), tape.leaf(dw), 1, 1));
  const Tensor64 b = tape.value(tape.conv2d(tape.leaf(x), tape.leaf(full), 1, 1));
  CHECK(a.data == b.data);  // exact: same tap order, zero off-channel terms
}

TEST_CASE("depthwise_conv2d gradients match finite differences") {
  std::mt19937_64 rng(15);
  const Tensor64 x = random_tensor<double>({2, 5, 5}, rng);
  const Tensor64 k = random_tensor<double>({2, 3, 3}, rng);
  auto build = [](Tape& t, Var a, Var b) { return t.depthwise_conv2d(a, b, 2, 1); };
  CHECK(check_gradient(x, k, build, 0, rng) < 1e-4);
  CHECK(check_gradient(x, k, build, 1, rng) < 1e-4);
}

TEST_CASE("pointwise_conv2d with the identity matrix is the identity") {
  std::mt19937_64 rng(16);
  const Tensor64 x = random_tensor<double>({3, 4, 4}, rng);
  Tensor64 k = Tensor64::zeros({3, 3});
  for (int c = 0; c < 3; ++c) k.data[static_cast<std::size_t>(c) * 3 + c] = 1.0;
  Tape tape;
  Var out = tape.pointwise_conv2d(tape.leaf(x), tape.leaf(k));
  CHECK(tape.value(out).data == x.data);
}

TEST_CASE("pointwise_conv2d equals conv2d with 1x1 kernels") {
  std::mt19937_64 rng(17);
  const Tensor64 x = random_tensor<double>({3, 5, 5}, rng);
  const Tensor64 pw = random_tensor<double>({4, 3}, rng);
  const Tensor64 as_conv = Tensor64::from({4, 3, 1, 1}, pw.data);
  Tape tape;
  const Tensor64 a = tape.value(tape.pointwise_conv2d(tape.leaf(x), tape.leaf(pw)));
  const Tensor64 b = tape.value(tape.conv2d(tape.leaf(x), tape.leaf(as_conv), 1, 0));
  CHECK(a.data == b.data);
}

TEST_CASE("pointwise_conv2d gradient check and channel mismatch error") {
  std::mt19937_64 rng(18);
  const Tensor64 x = random_tensor<double>({3, 4, 4}, rng);
  const Tensor64 k = random_tensor<double>({5, 3}, rng);
  auto build = [](Tape& t, Var a, Var b) { return t.pointwise_conv2d(a, b); };
  CHECK(check_gradient(x, k, build, 0, rng) < 1e-4);
  CHECK(check_gradient(x, k, build, 1, rng) < 1e-4);

  Tape tape;
  Var bad = tape.leaf(Tensor64::zeros({5, 2}));
  CHECK_THROWS_AS(tape.pointwise_conv2d(tape.leaf(x), bad), mriqa::ShapeError);
}

TEST_CASE("depthwise+pointwise composition equals the rank-structured full conv") {
  std::mt19937_64 rng(19);
  const Tensor64 x = random_tensor<double>({3, 6, 6}, rng);
  const Tensor64 dw = random_tensor<double>({3, 3, 3}, rng);
  const Tensor64 pw = random_tensor<double>({4, 3}, rng);
  // full[co,ci,:,:] = pw[co,ci] * dw[ci,:,:]
  Tensor64 full = Tensor64::zeros({4, 3, 3, 3});
  for (int co = 0; co < 4; ++co) {
    for (int ci = 0; ci < 3; ++ci) {
      for (int t = 0; t < 9; ++t) {
        full.data[((static_cast<std::size_t>(co) * 3 + ci) * 9) + t] =
            pw.data[static_cast<std::size_t>(co) * 3 + ci] *
            dw.data[static_cast<std::size_t>(ci) * 9 + t];
      }
    }
  }
  Tape tape;
  Var composed = tape.pointwise_conv2d(tape.depthwise_conv2d(tape.leaf(x), tape.leaf(dw), 1, 1),
                                       tape.leaf(pw));
  Var direct = tape.conv2d(tape.leaf(x), tape.leaf(full), 1, 1);
  const Tensor64& a = tape.value(composed);
  const Tensor64& b = tape.value(direct);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("batchnorm2d normalizes to zero mean and unit variance in training mode") {
  std::mt19937_64 rng(20);
  const Tensor64 x = random_tensor<double>({4, 3, 5, 5}, rng, -3.0, 7.0);
  mriqa::BatchNormStateT<double> state(3);
  Tape tape;
  Var out = tape.batchnorm2d(tape.leaf(x), tape.leaf(Tensor64::full({3}, 1.0)),
                             tape.leaf(Tensor64::zeros({3})), &state, true);
  const Tensor64& y = tape.value(out);
  const std::int64_t m = 4 * 5 * 5;
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (int s = 0; s < 4; ++s) {
      for (int p = 0; p < 25; ++p) mean += y.data[((static_cast<std::size_t>(s) * 3 + c) * 25) + p];
    }
    mean /= static_cast<double>(m);
    for (int s = 0; s < 4; ++s) {
      for (int p = 0; p < 25; ++p) {
        const double d = y.data[((static_cast<std::size_t>(s) * 3 + c) * 25) + p] - mean;
        var += d * d;
      }
    }
    var /= static_cast<double>(m);
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("batchnorm2d gamma/beta set the output std and mean") {
  std::mt19937_64 rng(21);
  const Tensor64 x = random_tensor<double>({8, 1, 4, 4}, rng, -2.0, 2.0);
  mriqa::BatchNormStateT<double> state(1);
  Tape tape;
  Var out = tape.batchnorm2d(tape.leaf(x), tape.leaf(Tensor64::full({1}, 2.0)),
                             tape.leaf(Tensor64::full({1}, 3.0)), &state, true);
  const Tensor64& y = tape.value(out);
  double mean = 0.0;
  for (double v : y.data) mean += v;
  mean /= static_cast<double>(y.numel());
  double var = 0.0;
  for (double v : y.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(y.numel());
  CHECK(mean == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(std::sqrt(var) == doctest::Approx(2.0).epsilon(1e-4));
}

TEST_CASE("batchnorm2d gradients match finite differences") {
  std::mt19937_64 rng(22);
  const Tensor64 x = random_tensor<double>({3, 2, 4, 4}, rng);
  const Tensor64 gamma = random_tensor<double>({2}, rng, 0.5, 1.5);
  const Tensor64 beta = random_tensor<double>({2}, rng);

  auto build_x = [&](Tape& t, Var a, Var g) {
    static thread_local mriqa::BatchNormStateT<double> state(2);
    state = mriqa::BatchNormStateT<double>(2);
    return t.batchnorm2d(a, g, t.leaf(beta), &state, true);
  };
  CHECK(check_gradient(x, gamma, build_x, 0, rng) < 1e-3);
  CHECK(check_gradient(x, gamma, build_x, 1, rng) < 1e-3);

  auto build_beta = [&](Tape& t, Var a, Var b) {
    static thread_local mriqa::BatchNormStateT<double> state(2);
    state = mriqa::BatchNormStateT<double>(2);
    return t.batchnorm2d(a, t.leaf(gamma), b, &state, true);
  };
  CHECK(check_gradient(x, beta, build_beta, 1, rng) < 1e-3);
}

TEST_CASE("batchnorm2d updates running statistics with momentum 0.9") {
  const Tensor64 x = Tensor64::from({1, 1, 1, 2}, {1.0, 3.0});  // mean 2, var 1
  mriqa::BatchNormStateT<double> state(1);
  Tape tape;
  tape.batchnorm2d(tape.leaf(x), tape.leaf(Tensor64::full({1}, 1.0)),
                   tape.leaf(Tensor64::zeros({1})), &state, true);
  CHECK(state.running_mean.data[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.0));
  CHECK(state.running_var.data[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.0));
}

TEST_CASE("batchnorm2d rejects a zero-size batch") {
  mriqa::BatchNormStateT<double> state(2);
  Tape tape;
  Var in = tape.leaf(Tensor64::zeros({0, 2, 4, 4}));
  CHECK_THROWS_AS(tape.batchnorm2d(in, tape.leaf(Tensor64::full({2}, 1.0)),
                                   tape.leaf(Tensor64::zeros({2})), &state, true),
                  mriqa::InvalidInputError);
}

TEST_CASE("softmax of a constant vector is uniform") {
  Tape tape;
  Var out = tape.softmax(tape.leaf(Tensor64::zeros({3})));
  for (double v : tape.value(out).data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax with a huge logit stays finite") {
  Tape tape;
  Var out = tape.softmax(tape.leaf(Tensor64::from({3}, {1000.0, 0.0, 0.0})));
  const Tensor64& y = tape.value(out);
  CHECK(mriqa::all_finite(y));
  CHECK(y.data[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y.data[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("global_avg_pool of a constant channel returns the constant") {
  Tape tape;
  Var out = tape.global_avg_pool(tape.leaf(Tensor64::full({2, 3, 3}, 7.0)));
  REQUIRE(tape.value(out).shape == std::vector<int>{2});
  CHECK(tape.value(out).data[0] == 7.0);
  CHECK(tape.value(out).data[1] == 7.0);
}

TEST_CASE("softmax, pooling, matmul and add gradients match finite differences") {
  std::mt19937_64 rng(23);
  const Tensor64 x = random_tensor<double>({2, 3, 4}, rng);
  const Tensor64 y = random_tensor<double>({2, 4, 5}, rng);
  auto mm = [](Tape& t, Var a, Var b) { return t.matmul(a, b); };
  CHECK(check_gradient(x, y, mm, 0, rng) < 1e-4);
  CHECK(check_gradient(x, y, mm, 1, rng) < 1e-4);

  const Tensor64 v = random_tensor<double>({4, 6}, rng);
  auto sm = [](Tape& t, Var a, Var) { return t.softmax(a); };
  CHECK(check_gradient(v, v, sm, 0, rng) < 1e-4);

  const Tensor64 img = random_tensor<double>({3, 4, 4}, rng);
  auto gap = [](Tape& t, Var a, Var) { return t.global_avg_pool(a); };
  CHECK(check_gradient(img, img, gap, 0, rng) < 1e-4);

  const Tensor64 w = random_tensor<double>({3, 4, 4}, rng);
  auto addop = [](Tape& t, Var a, Var b) { return t.add(a, b); };
  CHECK(check_gradient(img, w, addop, 0, rng) < 1e-4);
  CHECK(check_gradient(img, w, addop, 1, rng) < 1e-4);

  auto tr = [](Tape& t, Var a, Var) { return t.transpose_last2(a); };
  CHECK(check_gradient(x, x, tr, 0, rng) < 1e-4);
}

TEST_CASE("relu gradient away from the kink") {
  std::mt19937_64 rng(24);
  Tensor64 x = random_tensor<double>({3, 4, 4}, rng);
  for (auto& v : x.data) {
    if (std::abs(v) < 0.1) v += (v >= 0 ? 0.2 : -0.2);
  }
  auto rl = [](Tape& t, Var a, Var) { return t.relu(a); };
  CHECK(check_gradient(x, x, rl, 0, rng) < 1e-4);
}

TEST_CASE("backward of sum(w) yields a gradient of ones") {
  std::mt19937_64 rng(25);
  const Tensor64 w = random_tensor<double>({3, 5}, rng);
  Tape tape;
  Var vw = tape.leaf(w);
  tape.backward(tape.sum(vw));
  for (double g : tape.grad(vw).data) CHECK(g == 1.0);
}

TEST_CASE("backward of sum(w*w)/2 yields w") {
  std::mt19937_64 rng(26);
  const Tensor64 w = random_tensor<double>({4, 4}, rng);
  Tape tape;
  Var vw = tape.leaf(w);
  tape.backward(tape.scale(tape.sum_squares(vw), 0.5));
  const Tensor64& g = tape.grad(vw);
  for (std::size_t i = 0; i < w.data.size(); ++i) {
    CHECK(g.data[i] == doctest::Approx(w.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward rejects a non-scalar loss") {
  Tape tape;
  Var v = tape.leaf(Tensor64::zeros({2, 2}));
  CHECK_THROWS_AS(tape.backward(v), mriqa::InvalidInputError);
}

TEST_CASE("finite_diff_check self-test on sum of squares") {
  std::mt19937_64 rng(27);
  const Tensor64 x = random_tensor<double>({6}, rng);
  Tensor64 analytic = x;
  for (auto& v : analytic.data) v *= 2.0;
  auto f = [](const Tensor64& t) {
    double s = 0.0;
    for (double v : t.data) s += v * v;
    return s;
  };
  CHECK(mriqa::finite_diff_check<double>(f, x, 1e-5, analytic) < 1e-9);
}

TEST_CASE("gradient checks pass across many random seeds and shapes") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> cdist(1, 3), hw(3, 6);
    const int c = cdist(rng), co = cdist(rng), h = hw(rng), w = hw(rng);
    const Tensor64 x = random_tensor<double>({c, h, w}, rng);
    const Tensor64 k = random_tensor<double>({co, c, 3, 3}, rng);
    auto build = [](Tape& t, Var a, Var b) { return t.conv2d(a, b, 1, 1); };
    CHECK(check_gradient(x, k, build, 0, rng) < 1e-4);
    CHECK(check_gradient(x, k, build, 1, rng) < 1e-4);

    const Tensor64 dk = random_tensor<double>({c, 3, 3}, rng);
    auto dwb = [](Tape& t, Var a, Var b) { return t.depthwise_conv2d(a, b, 1, 1); };
    CHECK(check_gradient(x, dk, dwb, 1, rng) < 1e-4);

    const Tensor64 pk = random_tensor<double>({co, c}, rng);
    auto pwb = [](Tape& t, Var a, Var b) { return t.pointwise_conv2d(a, b); };
    CHECK(check_gradient(x, pk, pwb, 0, rng) < 1e-4);
  }
}

TEST_CASE("forward passes are deterministic at fixed precision") {
  std::mt19937_64 rng(28);
  const Tensor64 x = random_tensor<double>({2, 6, 6}, rng);
  const Tensor64 k = random_tensor<double>({3, 2, 3, 3}, rng);
  Tape t1, t2;
  const Tensor64 a = t1.value(t1.conv2d(t1.leaf(x), t1.leaf(k), 2, 1));
  const Tensor64 b = t2.value(t2.conv2d(t2.leaf(x), t2.leaf(k), 2, 1));
  CHECK(a.data == b.data);
}

TEST_SUITE_END();
