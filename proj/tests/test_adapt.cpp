#include <doctest.h>

#include <cmath>

#include "hfan/adapt.hpp"
#include "oracles.hpp"

using namespace hfan;
using hfan::test::max_diff;
using hfan::test::random_tensor;

namespace {

template <typename T>
FatParams<T> random_fat(std::size_t c, std::uint64_t seed, double lo = -0.8, double hi = 0.8) {
  FatParams<T> p("fat", c, seed);
  ModuleState<T> st;
  p.collect(st);
  test::randomize(st, seed + 1, lo, hi);
  return p;
}


}  // namespace

TEST_CASE("fuse_sum") {
  Tape<double> tape;
  auto I = random_tensor<double>(1, {1, 3, 4, 4});
  auto O = random_tensor<double>(2, {1, 3, 4, 4});
  CHECK(fuse_sum(tape.constant(I), tape.constant(Tensor<double>::zeros(I.shape()))).value() == I);
  Tensor<double> neg = I;
  for (double& v : neg.storage()) v = -v;
  CHECK(fuse_sum(tape.constant(I), tape.constant(neg)).value() == Tensor<double>::zeros(I.shape()));
  auto f = fuse_sum(tape.constant(I), tape.constant(O)).value();
  for (std::size_t i = 0; i < I.numel(); ++i) CHECK(f[i] == I[i] + O[i]);
  CHECK_THROWS_AS(fuse_sum(tape.constant(I), tape.constant(Tensor<double>::zeros({1, 3, 4, 3}))), DimensionError);
}

TEST_CASE("fat: fresh parameters give a 0.5 gate") {
  FatParams<double> p("fat", 8, 4);
  Tape<double> tape;
  Context<double> ctx{tape};
  auto r = fat(ctx, tape.constant(random_tensor<double>(1, {2, 8, 3, 3})),
               tape.constant(random_tensor<double>(2, {2, 8, 3, 3})), p);
  for (double g : r.gate.value().storage()) CHECK(g == 0.5);
}

TEST_CASE("fat: equal streams, saturation fixtures, mismatch") {
  Tape<double> tape;
  Context<double> ctx{tape};
  auto p = random_fat<double>(8, 5);
  auto I = random_tensor<double>(6, {1, 8, 5, 5}, -3, 3);
  auto O = random_tensor<double>(7, {1, 8, 5, 5}, -3, 3);
  auto same = fat(ctx, tape.constant(I), tape.constant(I), p);
  CHECK(max_diff(same.fused.value(), I) <= 1e-12);

  for (double logit : {20.0, -20.0}) {
    p.spatial_expand.weight.value.fill(0.0);
    p.spatial_expand.bias.value.fill(logit);
    p.pooled_expand.weight.value.fill(0.0);
    p.pooled_expand.bias.value.fill(0.0);
    auto r = fat(ctx, tape.constant(I), tape.constant(O), p);
    CHECK(max_diff(r.fused.value(), logit > 0 ? I : O) <= 1e-6);
  }
  CHECK_THROWS_AS(fat(ctx, tape.constant(I), tape.constant(random_tensor<double>(1, {1, 8, 5, 4})), p),
                  DimensionError);
}

TEST_CASE("fat: independent gate oracle") {
  Tape<double> tape;
  Context<double> ctx{tape};
  auto p = random_fat<double>(8, 29);
  auto I = random_tensor<double>(29, {1, 8, 5, 5});
  auto O = random_tensor<double>(30, {1, 8, 5, 5});
  auto r = fat(ctx, tape.constant(I), tape.constant(O), p);
  Tensor<double> gate = test::oracle_gate(I, O, p);
  CHECK(max_diff(r.gate.value(), gate) <= 1e-6);
  Tensor<double> u(I.shape());
  for (std::size_t i = 0; i < u.numel(); ++i) u[i] = gate[i] * I[i] + (1.0 - gate[i]) * O[i];
  CHECK(max_diff(r.fused.value(), u) <= 1e-6);
}

TEST_CASE("fat: outputs lie between the two streams (1000 inputs)") {
  Rng rng(1000);
  std::size_t violations = 0, gate_out_of_range = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.index(2), c = 1 + rng.index(12), h = 1 + rng.index(5), w = 1 + rng.index(5);
    auto p = random_fat<float>(c, 3000 + trial, -3.0, 3.0);
    auto I = rng.uniform_tensor<float>({n, c, h, w}, -5, 5);
    auto O = rng.uniform_tensor<float>({n, c, h, w}, -5, 5);
    Tape<float> tape;
    Context<float> ctx{tape};
    auto r = fat(ctx, tape.constant(I), tape.constant(O), p);
    for (std::size_t i = 0; i < I.numel(); ++i) {
      const double u = r.fused.value()[i];
      const double lo = std::min(I[i], O[i]), hi = std::max(I[i], O[i]);
      if (u < lo - 1e-6 || u > hi + 1e-6) ++violations;
      const float g = r.gate.value()[i];
      if (!(g >= 0.0f && g <= 1.0f)) ++gate_out_of_range;
    }
  }
  CHECK(violations == 0);
  CHECK(gate_out_of_range == 0);
}

TEST_CASE("fat: gate strictly inside (0, 1) in double precision") {
  auto p = random_fat<double>(6, 11, -2, 2);
  Tape<double> tape;
  Context<double> ctx{tape};
  auto r = fat(ctx, tape.constant(random_tensor<double>(1, {2, 6, 4, 4}, -4, 4)),
               tape.constant(random_tensor<double>(2, {2, 6, 4, 4}, -4, 4)), p);
  for (double g : r.gate.value().storage()) {
    CHECK(g > 0.0);
    CHECK(g < 1.0);
  }
}

TEST_CASE("fat: gradients reach both streams") {
  auto p = random_fat<double>(8, 13);
  Parameter<double> I("I", random_tensor<double>(14, {1, 8, 5, 5}));
  Parameter<double> O("O", random_tensor<double>(15, {1, 8, 5, 5}));
  Tape<double> tape;
  Context<double> ctx{tape};
  auto r = fat(ctx, tape.parameter(I), tape.parameter(O), p);
  tape.backward(test::probe(r.fused, 3));
  double ni = 0.0, no = 0.0;
  for (double g : I.grad.storage()) ni += g * g;
  for (double g : O.grad.storage()) no += g * g;
  CHECK(ni > 1e-6);
  CHECK(no > 1e-6);
}

TEST_CASE("hfan_stage: shapes, symmetry, composition") {
  const Shape shape{1, 8, 6, 6};
  auto I = random_tensor<double>(40, shape);
  auto O = random_tensor<double>(41, shape);
  StageParams<double> sp("s", 8, 8, true, Fusion::Hfan, 42);
  {
    ModuleState<double> st;
    sp.adapt.collect(st);
    test::randomize(st, 43);
  }
  Tape<double> tape;
  Context<double> ctx{tape};
  auto u = hfan_stage(ctx, tape.constant(I), tape.constant(O), sp);
  CHECK(u.shape() == shape);

  auto aligned = fam(ctx, tape.constant(I), tape.constant(O), sp.align);
  auto manual = fat(ctx, aligned.appearance, aligned.motion, sp.adapt).fused;
  CHECK(bit_identical(u.value(), manual.value()));

  auto us = hfan_stage(ctx, tape.constant(I), tape.constant(I), sp);
  auto as = fam(ctx, tape.constant(I), tape.constant(I), sp.align);
  CHECK(max_diff(us.value(), as.appearance.value()) <= 1e-12);

  Tape<float> tf;
  Context<float> cf{tf};
  const std::size_t channels[] = {8, 16, 32, 64}, sizes[] = {16, 8, 4, 2};
  for (int s = 0; s < 4; ++s) {
    for (Fusion f : {Fusion::Hfan, Fusion::FamOnly, Fusion::FatOnly, Fusion::Add}) {
      StageParams<float> p("s", channels[s], attention_width(channels[s]), true, f, 7);
      Shape sh{2, channels[s], sizes[s], sizes[s]};
      auto out = hfan_stage(cf, tf.constant(random_tensor<float>(1, sh)), tf.constant(random_tensor<float>(2, sh)), p);
      CHECK(out.shape() == sh);
    }
  }
}

TEST_CASE("fusion names round-trip") {
  for (Fusion f : {Fusion::Hfan, Fusion::FamOnly, Fusion::FatOnly, Fusion::Add, Fusion::FrameOnly, Fusion::FlowOnly})
    CHECK(parse_fusion(fusion_name(f)) == f);
  CHECK_THROWS_AS(parse_fusion("concat"), ConfigError);
  CHECK_FALSE(uses_flow(Fusion::FrameOnly));
  CHECK_FALSE(uses_frames(Fusion::FlowOnly));
}

TEST_CASE("hfan_stage: gradient check at 1x8x6x6") {
  StageParams<double> sp("s", 8, attention_width(8), true, Fusion::Hfan, 23);
  ModuleState<double> st;
  sp.collect(st);
  test::randomize(st, 24);
  Parameter<double> I("I", random_tensor<double>(25, {1, 8, 6, 6}));
  Parameter<double> O("O", random_tensor<double>(26, {1, 8, 6, 6}));
  std::vector<Parameter<double>*> ps = st.params;
  ps.push_back(&I);
  ps.push_back(&O);
  auto rep = gradcheck("stage", ps, [&](Tape<double>& t) {
    Context<double> ctx{t};
    return test::probe(hfan_stage(ctx, t.parameter(I), t.parameter(O), sp), 5);
  });
  INFO("worst " << rep.max_rel_err);
  CHECK(rep.passed);
}
