#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "hfan/kernels.hpp"
#include "hfan/tensor_io.hpp"
#include "test_support.hpp"

using namespace hfan;
using hfan::test::max_diff;
using hfan::test::random_tensor;

TEST_CASE("tensor rejects zero extents and mismatched data") {
  CHECK_THROWS_AS(Tensor<float>({2, 0, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor<float>({2, 3}, std::vector<float>(5)), DimensionError);
  Tensor<float> t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK_THROWS_AS(t.reshaped({5, 5}), DimensionError);
}

TEST_CASE("matmul") {
  Tape<double> tape;
  SUBCASE("identity") {
    Tensor<double> eye({3, 3});
    for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
    Tensor<double> b = random_tensor<double>(1, {3, 2});
    CHECK(ops::matmul(tape.constant(eye), tape.constant(b)).value() == b);
  }
  SUBCASE("annihilator") {
    Tensor<double> b = random_tensor<double>(2, {4, 5});
    auto c = ops::matmul(tape.constant(Tensor<double>::zeros({2, 4})), tape.constant(b));
    CHECK(c.value() == Tensor<double>::zeros({2, 5}));
  }
  SUBCASE("triple-loop oracle, seed 7") {
    Tensor<float> a = random_tensor<float>(7, {5, 6});
    Tensor<float> b = random_tensor<float>(8, {6, 4});
    Tape<float> tf;
    auto c = ops::matmul(tf.constant(a), tf.constant(b)).value();
    std::vector<double> ad(a.storage().begin(), a.storage().end()), bd(b.storage().begin(), b.storage().end());
    auto ref = test::oracle_matmul(ad, bd, 5, 6, 4);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(c[i] - ref[i]) <= 1e-6 * std::max(1.0, std::abs(ref[i])));
  }
  SUBCASE("shape mismatch names both shapes") {
    try {
      ops::matmul(tape.constant(Tensor<double>({2, 3})), tape.constant(Tensor<double>({4, 2})));
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
      CHECK(msg.find("[4x2]") != std::string::npos);
    }
  }
}

TEST_CASE("conv1x1") {
  Tape<double> tape;
  Tensor<double> x = random_tensor<double>(3, {2, 3, 4, 5});
  SUBCASE("identity weights") {
    Tensor<double> w({3, 3});
    for (int i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
    auto y = ops::conv1x1(tape.constant(x), tape.constant(w), tape.constant(Tensor<double>::zeros({3})));
    CHECK(y.value() == x);
  }
  SUBCASE("zero input gives bias") {
    Tensor<double> b({2}, std::vector<double>{0.25, -1.5});
    auto y = ops::conv1x1(tape.constant(Tensor<double>::zeros({1, 3, 2, 2})),
                          tape.constant(random_tensor<double>(4, {2, 3})), tape.constant(b));
    for (std::size_t p = 0; p < 4; ++p) {
      CHECK(y.value()[p] == 0.25);
      CHECK(y.value()[4 + p] == -1.5);
    }
  }
  SUBCASE("per-pixel oracle, seed 11") {
    Tensor<float> xf = random_tensor<float>(11, {1, 3, 4, 4});
    Tensor<float> wf = random_tensor<float>(12, {5, 3});
    Tensor<float> bf = random_tensor<float>(13, {5});
    Tape<float> tf;
    auto y = ops::conv1x1(tf.constant(xf), tf.constant(wf), tf.constant(bf)).value();
    CHECK(max_diff(y, test::oracle_conv1x1(xf, wf, bf)) <= 1e-6);
  }
  SUBCASE("equals matmul over the pixel-unrolled input bit-exactly") {
    Tensor<float> xf = random_tensor<float>(21, {2, 6, 3, 5});
    Tensor<float> wf = random_tensor<float>(22, {4, 6});
    Tensor<float> bf = random_tensor<float>(23, {4});
    Tape<float> tf;
    auto y = ops::conv1x1(tf.constant(xf), tf.constant(wf), tf.constant(bf)).value();
    // (N*H*W) x C unrolled input times W^T, then bias.
    Tensor<float> unrolled({2 * 15, 6}), wt({6, 4});
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 6; ++c)
        for (std::size_t p = 0; p < 15; ++p) unrolled[(n * 15 + p) * 6 + c] = xf[(n * 6 + c) * 15 + p];
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t c = 0; c < 6; ++c) wt[c * 4 + o] = wf[o * 6 + c];
    auto mm = ops::matmul(tf.constant(unrolled), tf.constant(wt)).value();
    bool exact = true;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t o = 0; o < 4; ++o)
        for (std::size_t p = 0; p < 15; ++p)
          exact = exact && y[(n * 4 + o) * 15 + p] == mm[(n * 15 + p) * 4 + o] + bf[o];
    CHECK(exact);
  }
  SUBCASE("channel mismatch") {
    CHECK_THROWS_AS(ops::conv1x1(tape.constant(x), tape.constant(Tensor<double>({2, 4})),
                                 tape.constant(Tensor<double>({2}))),
                    DimensionError);
  }
}

TEST_CASE("batchnorm") {
  Tape<double> tape;
  const Tensor<double> ones = Tensor<double>::ones({4}), zeros = Tensor<double>::zeros({4});
  SUBCASE("eval with identity statistics") {
    ops::BatchNormState<double> st(4);
    st.batches = 1;
    Tensor<double> x = random_tensor<double>(5, {2, 4, 3, 3});
    auto y = ops::batchnorm(tape.constant(x), tape.constant(ones), tape.constant(zeros), st, ops::Mode::Eval).value();
    for (std::size_t i = 0; i < x.numel(); ++i)
      CHECK(std::abs(y[i] - x[i]) <= std::abs(x[i]) * (ops::kBatchNormEps / 2) * 1.0001);
  }
  SUBCASE("train output is standardised per channel") {
    ops::BatchNormState<double> st(4);
    Tensor<double> x = random_tensor<double>(6, {3, 4, 5, 2}, -3.0, 7.0);
    auto y = ops::batchnorm(tape.constant(x), tape.constant(ones), tape.constant(zeros), st, ops::Mode::Train).value();
    for (std::size_t c = 0; c < 4; ++c) {
      double m = 0, v = 0;
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t p = 0; p < 10; ++p) m += y[(n * 4 + c) * 10 + p];
      m /= 30;
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t p = 0; p < 10; ++p) v += std::pow(y[(n * 4 + c) * 10 + p] - m, 2);
      v /= 30;
      CHECK(std::abs(m) <= 1e-6);
      CHECK(std::abs(v - 1.0) <= 1e-5);
    }
    CHECK(st.initialized());
  }
  SUBCASE("two-pass oracle, seed 3") {
    Tensor<float> x = random_tensor<float>(3, {2, 4, 3, 3});
    Tensor<float> g = random_tensor<float>(31, {4}, 0.5, 1.5), b = random_tensor<float>(32, {4});
    ops::BatchNormState<float> st(4);
    Tape<float> tf;
    auto y = ops::batchnorm(tf.constant(x), tf.constant(g), tf.constant(b), st, ops::Mode::Train).value();
    CHECK(max_diff(y, test::oracle_batchnorm(x, g, b, ops::kBatchNormEps)) <= 1e-6);
  }
  SUBCASE("running statistics follow the 0.1 momentum average") {
    ops::BatchNormState<double> st(4);
    Tensor<double> x = random_tensor<double>(7, {2, 4, 2, 2});
    ops::batchnorm(tape.constant(x), tape.constant(ones), tape.constant(zeros), st, ops::Mode::Train);
    double m0 = 0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t p = 0; p < 4; ++p) m0 += x[(n * 4) * 4 + p];
    m0 /= 8;
    CHECK(st.running_mean[0] == doctest::Approx(0.1 * m0).epsilon(1e-12));
  }
  SUBCASE("eval before any train step is a state error") {
    ops::BatchNormState<double> st(4);
    CHECK_THROWS_AS(ops::batchnorm(tape.constant(Tensor<double>({1, 4, 2, 2})), tape.constant(ones),
                                   tape.constant(zeros), st, ops::Mode::Eval),
                    StateError);
  }
}

TEST_CASE("elementwise and broadcasting") {
  Tape<double> tape;
  Tensor<double> x = random_tensor<double>(8, {1, 3, 4, 4});
  CHECK(ops::add(tape.constant(x), tape.constant(Tensor<double>::zeros(x.shape()))).value() == x);
  CHECK(ops::mul(tape.constant(x), tape.constant(Tensor<double>::ones(x.shape()))).value() == x);

  Tensor<double> v = random_tensor<double>(9, {1, 3, 1, 1});
  auto y = ops::mul(tape.constant(x), tape.constant(v)).value();
  bool exact = true;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t h = 0; h < 4; ++h)
      for (std::size_t w = 0; w < 4; ++w) exact = exact && y.at(0, c, h, w) == x.at(0, c, h, w) * v[c];
  CHECK(exact);

  CHECK_THROWS_AS(ops::add(tape.constant(x), tape.constant(Tensor<double>({1, 2, 1, 1}))), DimensionError);
  CHECK_THROWS_AS(ops::add(tape.constant(x), tape.constant(Tensor<double>({3, 1, 1}))), DimensionError);
}

TEST_CASE("softmax") {
  Tape<double> tape;
  SUBCASE("constant slice is uniform") {
    auto y = ops::softmax(tape.constant(Tensor<double>::full({2, 5}, 3.0)), 1).value();
    for (double v : y.storage()) CHECK(v == doctest::Approx(0.2));
  }
  SUBCASE("analytic two-point case") {
    auto y = ops::softmax(tape.constant(Tensor<double>({2}, std::vector<double>{0.0, std::log(3.0)})), 0).value();
    CHECK(y[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(0.75).epsilon(1e-12));
  }
  SUBCASE("shift invariance and normalisation over 1000 random tensors") {
    Rng rng(99);
    double worst_sum = 0, worst_shift = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      const Shape shape{1 + rng.index(3), 1 + rng.index(6), 1 + rng.index(5)};
      const std::size_t axis = rng.index(3);
      Tensor<double> x = rng.uniform_tensor<double>(shape, -20, 20);
      const double c = rng.uniform(-50, 50);
      Tensor<double> xs = x;
      for (double& v : xs.storage()) v += c;
      auto y = ops::softmax_value(x, axis);
      auto ys = ops::softmax_value(xs, axis);
      worst_shift = std::max(worst_shift, max_diff(y, ys));
      std::size_t outer = 1, inner = 1;
      for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
      for (std::size_t i = axis + 1; i < 3; ++i) inner *= shape[i];
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
          double s = 0;
          for (std::size_t k = 0; k < shape[axis]; ++k) {
            const double v = y[(o * shape[axis] + k) * inner + i];
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            s += v;
          }
          worst_sum = std::max(worst_sum, std::abs(s - 1.0));
        }
    }
    CHECK(worst_sum <= 1e-6);
    CHECK(worst_shift <= 1e-6);
  }
}

TEST_CASE("activations") {
  Tape<double> tape;
  auto r = ops::relu(tape.constant(Tensor<double>({2}, std::vector<double>{-1.0, 2.0}))).value();
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 2.0);
  CHECK(ops::sigmoid_scalar(0.0) == 0.5);
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(-40, 40);
    CHECK(std::abs(ops::sigmoid_scalar(x) + ops::sigmoid_scalar(-x) - 1.0) <= 1e-9);
  }
  CHECK(ops::sigmoid_scalar(-800.0) >= 0.0);
  CHECK(std::isfinite(ops::sigmoid_scalar(800.0f)));
}

TEST_CASE("global average pooling") {
  Tape<double> tape;
  auto c = ops::global_avg_pool(tape.constant(Tensor<double>::full({2, 3, 4, 5}, 0.75))).value();
  CHECK(c.shape() == Shape{2, 3, 1, 1});
  for (double v : c.storage()) CHECK(v == doctest::Approx(0.75));
  Tensor<double> single = random_tensor<double>(4, {2, 3, 1, 1});
  CHECK(ops::global_avg_pool(tape.constant(single)).value() == single);

  Tensor<double> x = random_tensor<double>(5, {2, 3, 4, 4});
  auto y = ops::global_avg_pool(tape.constant(x)).value();
  for (std::size_t q = 0; q < 6; ++q) {
    double s = 0;
    for (std::size_t p = 0; p < 16; ++p) s += x[q * 16 + p];
    CHECK(std::abs(y[q] - s / 16) <= 1e-7);
  }
}

TEST_CASE("bilinear resize") {
  Tape<float> tape;
  Tensor<float> x = random_tensor<float>(9, {1, 2, 2, 2});
  CHECK(bit_identical(ops::bilinear_resize(tape.constant(x), 2, 2).value(), x));
  auto c = ops::bilinear_resize(tape.constant(Tensor<float>::full({1, 1, 3, 5}, 0.3f)), 7, 2).value();
  for (float v : c.storage()) CHECK(v == doctest::Approx(0.3f).epsilon(1e-6));
  auto up = ops::bilinear_resize(tape.constant(x), 4, 4).value();
  CHECK(max_diff(up, test::oracle_resize(x, 4, 4)) <= 1e-6);
  // Known half-pixel values for a 1-D ramp [0, 1] upsampled to 4: 0, 0.25, 0.75, 1.
  Tensor<float> ramp({1, 1, 1, 2}, std::vector<float>{0.f, 1.f});
  auto r = ops::bilinear_resize(tape.constant(ramp), 1, 4).value();
  CHECK(r[0] == 0.f);
  CHECK(r[1] == doctest::Approx(0.25f));
  CHECK(r[2] == doctest::Approx(0.75f));
  CHECK(r[3] == 1.f);
  CHECK_THROWS_AS(ops::bilinear_resize(tape.constant(x), 0, 3), ContractError);
}

TEST_CASE("parallel kernels match the serial reference bit-exactly") {
  Rng rng(1234);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.index(70), k = 1 + rng.index(90), n = 1 + rng.index(80);
    Tensor<float> a = rng.uniform_tensor<float>({m, k}, -1, 1), b = rng.uniform_tensor<float>({k, n}, -1, 1);
    Tensor<float> c1({m, n}), c2({m, n});
    kernels::parallel::gemm(a.raw(), b.raw(), c1.raw(), m, k, n, false);
    kernels::reference::gemm(a.raw(), b.raw(), c2.raw(), m, k, n, false);
    CHECK(bit_identical(c1, c2));

    const std::size_t batch = 1 + rng.index(3), cin = 1 + rng.index(40), cout = 1 + rng.index(40),
                      pix = 1 + rng.index(300);
    Tensor<float> x = rng.uniform_tensor<float>({batch, cin, pix}, -1, 1);
    Tensor<float> w = rng.uniform_tensor<float>({cout, cin}, -1, 1), bias = rng.uniform_tensor<float>({cout}, -1, 1);
    Tensor<float> y1({batch, cout, pix}), y2({batch, cout, pix});
    kernels::parallel::conv1x1(x.raw(), w.raw(), bias.raw(), y1.raw(), batch, cin, cout, pix);
    kernels::reference::conv1x1(x.raw(), w.raw(), bias.raw(), y2.raw(), batch, cin, cout, pix);
    CHECK(bit_identical(y1, y2));

    std::vector<float> m1(cin), v1(cin), m2(cin), v2(cin);
    kernels::parallel::channel_stats(x.raw(), m1.data(), v1.data(), batch, cin, pix);
    kernels::reference::channel_stats(x.raw(), m2.data(), v2.data(), batch, cin, pix);
    CHECK(m1 == m2);
    CHECK(v1 == v2);
  }
}

TEST_CASE("primitives are deterministic") {
  auto run = [] {
    Tape<float> tape;
    Tensor<float> x = random_tensor<float>(77, {2, 8, 6, 6});
    ops::BatchNormState<float> st(8);
    auto y = ops::conv1x1(tape.constant(x), tape.constant(random_tensor<float>(78, {8, 8})),
                          tape.constant(random_tensor<float>(79, {8})));
    y = ops::batchnorm(y, tape.constant(Tensor<float>::ones({8})), tape.constant(Tensor<float>::zeros({8})), st,
                       ops::Mode::Train);
    y = ops::softmax(ops::bilinear_resize(ops::relu(y), 11, 13), 1);
    return y.value();
  };
  CHECK(bit_identical(run(), run()));
}

TEST_CASE(".ten files round-trip and reject damage") {
  const auto dir = std::filesystem::temp_directory_path() / "hfan_ten_test";
  std::filesystem::create_directories(dir);
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Shape shape;
    for (std::size_t r = 0, rank = 1 + rng.index(4); r < rank; ++r) shape.push_back(1 + rng.index(5));
    Tensor<float> t = rng.normal_tensor<float>(shape);
    t[0] = -0.0f;
    io::save_tensor(dir / "t.ten", t);
    CHECK(bit_identical(io::load_tensor(dir / "t.ten"), t));
  }
  Tensor<float> t({2, 3}, 1.5f);
  std::vector<std::uint8_t> bytes;
  io::encode_tensor(bytes, t);
  CHECK(bytes.size() == 4 + 4 + 8 + 24);
  CHECK(bytes[0] == 'H');
  CHECK(bytes[4] == 2);
  bytes.resize(bytes.size() - 3);
  io::write_file(dir / "cut.ten", bytes);
  CHECK_THROWS_AS(io::load_tensor(dir / "cut.ten"), FormatError);
  bytes[0] = 'X';
  io::write_file(dir / "bad.ten", bytes);
  try {
    io::load_tensor(dir / "bad.ten");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}
