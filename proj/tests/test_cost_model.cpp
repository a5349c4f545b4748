#include <random>

#include "doctest.h"
#include "mriqa/cost_model.hpp"
#include "mriqa/nrnet.hpp"
#include "mriqa/tensor.hpp"
#include "testutil.hpp"

using namespace mriqa;
using testutil::random_tensor;

TEST_SUITE_BEGIN("cost_model");

TEST_CASE("standard convolution cost on a hand-evaluated shape") {
  CHECK(cc_std_conv({2, 4, 5, 5, 3}) == 1800);  // 2*4*9*25
  CHECK(cc_std_conv({1, 1, 1, 1, 1}) == 1);
}

TEST_CASE("separable convolution cost on a hand-evaluated shape") {
  CHECK(cc_dsconv({2, 4, 5, 5, 3}) == 650);  // 2*9*25 + 2*4*25
}

TEST_CASE("separable cost with d=1 collapses to the pointwise form") {
  const ConvShape s{6, 10, 4, 7, 1};
  const std::uint64_t hw = 4ull * 7ull;
  CHECK(cc_dsconv(s) == 6 * hw + 6 * 10 * hw);
}

TEST_CASE("crf_conv equals the cost ratio on the hand-evaluated shape") {
  const ConvShape s{2, 4, 5, 5, 3};
  CHECK(crf_conv(s) == doctest::Approx(0.25 + 1.0 / 9.0).epsilon(1e-15));
  CHECK(crf_conv(s) == doctest::Approx(650.0 / 1800.0).epsilon(1e-15));
}

TEST_CASE("crf_dsres at c'=512, d=3 lands in the six-to-seven-fold band") {
  const double crf = crf_dsres({256, 512, 1, 1, 3});
  CHECK(crf == doctest::Approx(1.0 / 512.0 + 3.0 / 19.0).epsilon(1e-15));
  const double reduction = 1.0 / crf;
  CHECK(reduction >= 6.0);
  CHECK(reduction <= 7.0);
}

TEST_CASE("pointwise replacement offers no spatial saving: crf_conv(d=1) >= 1") {
  for (int c_out : {1, 2, 16, 512}) {
    CHECK(crf_conv({4, c_out, 3, 3, 1}) >= 1.0);
  }
}

TEST_CASE("cost ratio identity holds exactly in rational arithmetic") {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> ch(1, 512), sp(1, 64), kd(0, 3);
  const int kernels[] = {1, 3, 5, 7};
  for (int i = 0; i < 1000; ++i) {
    const ConvShape s{ch(rng), ch(rng), sp(rng), sp(rng), kernels[kd(rng)]};
    CHECK(crf_conv_identity_holds(s));
  }
}

TEST_CASE("instrumented MAC counts match the analytic formulas exactly") {
  std::mt19937_64 rng(102);
  std::uniform_int_distribution<int> ch(1, 5), sp(4, 9), st(1, 2), pd(0, 2);
  using Tape = GradientTapeT<double>;
  for (int i = 0; i < 10; ++i) {
    const int c = ch(rng), co = ch(rng), h = sp(rng), w = sp(rng);
    const int d = 3, stride = st(rng), pad = pd(rng);
    const auto x = random_tensor<double>({c, h, w}, rng);

    Tape tape;
    auto vx = tape.leaf(x);

    opcount::reset();
    auto out = tape.conv2d(vx, tape.leaf(random_tensor<double>({co, c, d, d}, rng)), stride, pad);
    const auto& os = tape.value(out).shape;
    CHECK(opcount::macs == cc_std_conv({c, co, os[1], os[2], d}));

    opcount::reset();
    auto dwo = tape.depthwise_conv2d(vx, tape.leaf(random_tensor<double>({c, d, d}, rng)), stride,
                                     pad);
    const auto& ds = tape.value(dwo).shape;
    CHECK(opcount::macs ==
          static_cast<std::uint64_t>(c) * d * d * static_cast<std::uint64_t>(ds[1]) * ds[2]);

    opcount::reset();
    tape.pointwise_conv2d(vx, tape.leaf(random_tensor<double>({co, c}, rng)));
    CHECK(opcount::macs == static_cast<std::uint64_t>(c) * co * h * w);

    opcount::reset();
    tape.matmul(tape.leaf(random_tensor<double>({h, w}, rng)),
                tape.leaf(random_tensor<double>({w, c}, rng)));
    CHECK(opcount::macs == static_cast<std::uint64_t>(h) * w * c);
  }
  opcount::reset();
}

TEST_CASE("instrumented depthwise+pointwise pipeline matches cc_dsconv exactly") {
  std::mt19937_64 rng(103);
  using Tape = GradientTapeT<double>;
  for (int i = 0; i < 10; ++i) {
    std::uniform_int_distribution<int> ch(1, 6), sp(4, 9);
    const int c = ch(rng), co = ch(rng), h = sp(rng), w = sp(rng), d = 3;
    Tape tape;
    auto vx = tape.leaf(random_tensor<double>({c, h, w}, rng));
    opcount::reset();
    auto mid = tape.depthwise_conv2d(vx, tape.leaf(random_tensor<double>({c, d, d}, rng)), 1, 1);
    tape.pointwise_conv2d(mid, tape.leaf(random_tensor<double>({co, c}, rng)));
    CHECK(opcount::macs == cc_dsconv({c, co, h, w, d}));
  }
  opcount::reset();
}

TEST_CASE("crf_dsres agrees with the block-level cost ratio within 2% for c >= 32") {
  for (int c : {32, 64, 128, 256, 512}) {
    const int c_out = 2 * c;
    const double ratio = static_cast<double>(cc_residual_block_ds(c_out, 3, 100)) /
                         static_cast<double>(cc_residual_block_std(c_out, 3, 100));
    const double formula = crf_dsres({c, c_out, 10, 10, 3});
    CHECK(std::abs(ratio - formula) / formula < 0.02);
  }
}

TEST_CASE("a single 1x1 conv layer costs c*c' params and c*c'*h*w MACs") {
  LayerDesc l{"pw", LayerKind::Pointwise, "x", false, 16, 40, 1, 1, 8, 8, 0, 0, 0};
  const CostReport r = count_macs({l});
  CHECK(r.total_params == 16u * 40u);
  CHECK(r.total_macs == 16u * 40u * 8u * 8u);
}

TEST_CASE("residual-portion MAC ratio of CRes vs DSRes is 6 to 7 fold") {
  for (Variant pair : {Variant::CRes, Variant::CResNRes}) {
    const Variant ds = pair == Variant::CRes ? Variant::DSRes : Variant::DSResNRes;
    const CostReport std_rep = network_cost(build_variant(pair));
    const CostReport ds_rep = network_cost(build_variant(ds));
    const double ratio = static_cast<double>(std_rep.residual_macs) /
                         static_cast<double>(ds_rep.residual_macs);
    CHECK(ratio >= 6.0);
    CHECK(ratio <= 7.0);
  }
}

TEST_CASE("per-block MAC ratios at c' in {128,256,512} stay in the 6-to-7 band") {
  const auto std_plan = layer_plan(build_variant(Variant::CRes));
  const auto ds_plan = layer_plan(build_variant(Variant::DSRes));
  for (const std::string block : {"stage1", "stage2", "head"}) {
    std::uint64_t std_macs = 0, ds_macs = 0;
    for (const auto& l : std_plan) {
      if (l.block == block) std_macs += layer_macs(l);
    }
    for (const auto& l : ds_plan) {
      if (l.block == block) ds_macs += layer_macs(l);
    }
    const double ratio = static_cast<double>(std_macs) / static_cast<double>(ds_macs);
    CHECK(ratio >= 6.0);
    CHECK(ratio <= 7.0);
  }
}

TEST_CASE("parameter counts order the ablation variants as published") {
  const auto nop = [](Variant v) { return network_cost(build_variant(v)).total_params; };
  const std::uint64_t cres = nop(Variant::CRes);
  const std::uint64_t cres_nres = nop(Variant::CResNRes);
  const std::uint64_t dsres = nop(Variant::DSRes);
  const std::uint64_t dsres_nres = nop(Variant::DSResNRes);
  CHECK(cres > cres_nres);
  CHECK(cres_nres > dsres);
  CHECK(dsres > dsres_nres);
  // separable always beats standard at matching structure
  CHECK(dsres < cres);
  CHECK(dsres_nres < cres_nres);
  const auto desk_nop = [](Variant v) { return network_cost(desk_variant(v)).total_params; };
  CHECK(desk_nop(Variant::DSRes) < desk_nop(Variant::CRes));
  CHECK(desk_nop(Variant::DSResNRes) < desk_nop(Variant::CResNRes));
}

TEST_CASE("bench rejects fewer than 3 repetitions") {
  CHECK_THROWS_AS(bench({}, 2), InvalidInputError);
}

TEST_CASE("an empty network costs nothing and times below the measurement floor") {
  const CostReport empty = count_macs({});
  CHECK(empty.total_macs == 0);
  CHECK(empty.total_params == 0);
  const BenchReport r = bench({{"empty", [] {}, 0, 0}}, 11);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].median_ms < 1.0);
}

TEST_CASE("bench reports have a deterministic structure across runs") {
  std::vector<BenchItem> items = {{"a", [] {}, 1, 2}, {"b", [] {}, 3, 4}};
  const BenchReport r1 = bench(items, 5);
  const BenchReport r2 = bench(items, 5);
  REQUIRE(r1.rows.size() == r2.rows.size());
  for (std::size_t i = 0; i < r1.rows.size(); ++i) {
    CHECK(r1.rows[i].name == r2.rows[i].name);
    CHECK(r1.rows[i].macs == r2.rows[i].macs);
  }
}

TEST_SUITE_END();
