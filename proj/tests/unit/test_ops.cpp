#include <doctest.h>

#include <cmath>

#include "ca3/ops.hpp"
#include "support.hpp"

using namespace ca3;
using ca3::test::pick;
using ca3::test::random_tensor;

TEST_SUITE("tensor_engine") {
  TEST_CASE("conv2d matches the nested-loop oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t n = pick(rng, 1, 3), c = pick(rng, 1, 4), o = pick(rng, 1, 4), k = pick(rng, 1, 3);
      const std::size_t s = pick(rng, 1, 2), p = pick(rng, 0, 1);
      const std::size_t h = pick(rng, k, 8), w = pick(rng, k, 8);
      const Tensor x = random_tensor(rng, {n, c, h, w});
      const Tensor wt = random_tensor(rng, {o, c, k, k});
      const Tensor b = random_tensor(rng, {o});
      Tape tape(Tape::Mode::inference);
      const Tensor y = ops::conv2d(tape, x, wt, b, {s, p, 0});
      std::size_t oh, ow;
      const auto ref = test::direct_conv2d(x, wt, b, s, p, oh, ow);
      REQUIRE(y.shape() == Shape{n, o, oh, ow});
      CHECK(test::max_abs_diff(y.data(), ref) < 1e-5);
    }
  }

  TEST_CASE("conv2d examples") {
    Tape tape(Tape::Mode::inference);
    // 1x1 kernel of value 1 with zero bias is the identity
    const Tensor x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor y = ops::conv2d(tape, x, Tensor::full({1, 1, 1, 1}, 1.0f), Tensor::zeros({1}));
    CHECK(std::vector<float>(y.data().begin(), y.data().end()) == std::vector<float>{1, 2, 3, 4});
    // 28x28, k=3, stride 2 -> 13x13
    const Tensor img = Tensor::zeros({1, 1, 28, 28});
    CHECK(ops::conv2d(tape, img, Tensor::zeros({4, 1, 3, 3}), Tensor::zeros({4}), {2, 0, 0}).shape() ==
          Shape{1, 4, 13, 13});
    CHECK_THROWS_AS(ops::conv2d(tape, Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1})),
                    ShapeError);
    CHECK_THROWS_AS(ops::conv2d(tape, Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1})),
                    ShapeError);
  }

  TEST_CASE("conv1d matches the nested-loop oracle") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t n = pick(rng, 1, 3), c = pick(rng, 1, 4), o = pick(rng, 1, 4), k = pick(rng, 1, 3);
      const std::size_t s = pick(rng, 1, 2), p = pick(rng, 0, 1), l = pick(rng, k, 8);
      const Tensor x = random_tensor(rng, {n, c, l});
      const Tensor wt = random_tensor(rng, {o, c, k});
      const Tensor b = random_tensor(rng, {o});
      Tape tape(Tape::Mode::inference);
      const Tensor y = ops::conv1d(tape, x, wt, b, {s, p, 0});
      std::size_t ol;
      const auto ref = test::direct_conv1d(x, wt, b, s, p, ol);
      REQUIRE(y.shape() == Shape{n, o, ol});
      CHECK(test::max_abs_diff(y.data(), ref) < 1e-5);
    }
  }

  TEST_CASE("transposed convolutions match the scatter oracle") {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 4), o = pick(rng, 1, 4), k = pick(rng, 1, 3);
      const std::size_t s = pick(rng, 1, 2), p = pick(rng, 0, (k - 1) / 2), op = pick(rng, 0, s - 1);
      const std::size_t h = pick(rng, 1, 8), w = pick(rng, 1, 8);
      Tape tape(Tape::Mode::inference);
      {
        const Tensor x = random_tensor(rng, {n, c, h, w});
        const Tensor wt = random_tensor(rng, {c, o, k, k});
        const Tensor b = random_tensor(rng, {o});
        const Tensor y = ops::conv_transpose2d(tape, x, wt, b, {s, p, op});
        std::size_t oh, ow;
        const auto ref = test::direct_conv_transpose2d(x, wt, b, s, p, op, oh, ow);
        REQUIRE(y.shape() == Shape{n, o, oh, ow});
        CHECK(test::max_abs_diff(y.data(), ref) < 1e-5);
      }
      {
        const Tensor x = random_tensor(rng, {n, c, w});
        const Tensor wt = random_tensor(rng, {c, o, k});
        const Tensor b = random_tensor(rng, {o});
        const Tensor y = ops::conv_transpose1d(tape, x, wt, b, {s, p, op});
        std::size_t ol;
        const auto ref = test::direct_conv_transpose1d(x, wt, b, s, p, op, ol);
        REQUIRE(y.shape() == Shape{n, o, ol});
        CHECK(test::max_abs_diff(y.data(), ref) < 1e-5);
      }
    }
  }

  TEST_CASE("transposed convolution inverts encoder extents with output padding") {
    CHECK(ops::conv_transpose_out_extent(6, 3, {2, 0, 0}) == 13);
    CHECK(ops::conv_transpose_out_extent(13, 3, {2, 0, 1}) == 28);
    Tape tape(Tape::Mode::inference);
    CHECK_THROWS_AS(ops::conv_transpose2d(tape, Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3}),
                                          Tensor::zeros({1}), {2, 0, 2}),
                    ShapeError);
  }

  TEST_CASE("activations") {
    Tape tape(Tape::Mode::inference);
    const Tensor x(Shape{3}, {-1.0f, 0.0f, 2.0f});
    const Tensor e = ops::elu(tape, x);
    CHECK(e[0] == doctest::Approx(std::expm1(-1.0)));
    CHECK(e[1] == 0.0f);
    CHECK(e[2] == 2.0f);
    const Tensor s = ops::sigmoid(tape, x);
    CHECK(s[1] == 0.5f);
    CHECK(s[2] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));
    const Tensor r = ops::relu(tape, x);
    CHECK(r[0] == 0.0f);
    CHECK(r[2] == 2.0f);
    // large negative inputs stay finite
    const Tensor big(Shape{2}, {-100.0f, 100.0f});
    const Tensor sb = ops::sigmoid(tape, big);
    CHECK(std::isfinite(sb[0]));
    CHECK(sb[1] == doctest::Approx(1.0));
  }

  TEST_CASE("adaptive average pooling matches the window oracle") {
    Rng rng(14);
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t h = pick(rng, 1, 8), w = pick(rng, 1, 8);
      const std::size_t th = pick(rng, 1, h), tw = pick(rng, 1, w);
      const Tensor x = random_tensor(rng, {2, 3, h, w});
      Tape tape(Tape::Mode::inference);
      const Tensor y = ops::adaptive_avg_pool(tape, x, {th, tw});
      REQUIRE(y.shape() == Shape{2, 3, th, tw});
      CHECK(test::max_abs_diff(y.data(), test::direct_adaptive_avg2d(x, th, tw)) < 1e-6);
    }
  }

  TEST_CASE("adaptive pooling to the input size is the identity") {
    Rng rng(15);
    const Tensor x = random_tensor(rng, {1, 2, 5, 3});
    Tape tape(Tape::Mode::inference);
    const Tensor a = ops::adaptive_avg_pool(tape, x, {5, 3});
    const Tensor m = ops::adaptive_max_pool(tape, x, {5, 3});
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(a[i] == x[i]);
      CHECK(m[i] == x[i]);
    }
    CHECK_THROWS_AS(ops::adaptive_avg_pool(tape, x, {6, 3}), ShapeError);
    CHECK_THROWS_AS(ops::adaptive_avg_pool(tape, x, {2}), ShapeError);
  }

  TEST_CASE("adaptive max pooling picks window maxima") {
    const Tensor x(Shape{1, 1, 4}, {1, 5, 2, 3});
    Tape tape(Tape::Mode::inference);
    const Tensor y = ops::adaptive_max_pool(tape, x, {2});
    CHECK(y[0] == 5.0f);
    CHECK(y[1] == 3.0f);
  }

  TEST_CASE("concat and slice channels are inverse") {
    Rng rng(16);
    const Tensor a = random_tensor(rng, {2, 3, 4});
    const Tensor b = random_tensor(rng, {2, 1, 4});
    Tape tape(Tape::Mode::inference);
    const Tensor c = ops::concat_channels(tape, std::vector<Tensor>{a, b});
    CHECK(c.shape() == Shape{2, 4, 4});
    const Tensor a2 = ops::slice_channels(tape, c, 0, 3);
    const Tensor b2 = ops::slice_channels(tape, c, 3, 4);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a2[i] == a[i]);
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(b2[i] == b[i]);
    CHECK_THROWS_AS(ops::concat_channels(tape, std::vector<Tensor>{a, random_tensor(rng, {2, 1, 5})}), ShapeError);
    CHECK_THROWS_AS(ops::slice_channels(tape, c, 2, 2), ShapeError);
  }

  TEST_CASE("split_stack lays rows out in order") {
    const Tensor x(Shape{1, 6}, {0, 1, 2, 3, 4, 5});
    Tape tape(Tape::Mode::inference);
    const Tensor y = ops::split_stack(tape, x, 3);
    CHECK(y.shape() == Shape{1, 3, 2});
    for (std::size_t i = 0; i < 6; ++i) CHECK(y[i] == static_cast<float>(i));
    CHECK_THROWS_AS(ops::split_stack(tape, x, 4), ShapeError);
  }

  TEST_CASE("losses") {
    Tape tape(Tape::Mode::inference);
    const Tensor x(Shape{2, 2}, {0, 0, 1, 1});
    const Tensor xh(Shape{2, 2}, {1, 1, 1, 3});
    CHECK(ops::mse(tape, x, xh).item() == doctest::Approx(1.5));
    const Tensor per = ops::per_sample_mse(tape, x, xh);
    CHECK(per[0] == 1.0f);
    CHECK(per[1] == 2.0f);

    const Tensor y(Shape{2}, {0, 1});
    const Tensor p(Shape{2}, {0.2f, 0.9f});
    const double expected = -(std::log(0.8) + std::log(0.9)) / 2;
    CHECK(ops::bce(tape, y, p).item() == doctest::Approx(expected).epsilon(1e-6));
    const double weighted = -(std::log(0.8) + 3 * std::log(0.9)) / 2;
    CHECK(ops::bce(tape, y, p, 3.0f).item() == doctest::Approx(weighted).epsilon(1e-6));
    CHECK_THROWS_AS(ops::bce(tape, Tensor(Shape{2}, {0, 0.5f}), p), DataError);
  }

  TEST_CASE("bce clamps saturated predictions") {
    Tape tape;
    const Tensor y(Shape{2}, {1, 0});
    const Tensor p(Shape{2}, {0.0f, 1.0f}, true);
    const Tensor loss = ops::bce(tape, y, p);
    CHECK(std::isfinite(loss.item()));
    const float lo = 1e-7f, hi = 1.0f - 1e-7f;
    const double expected = -(std::log(static_cast<double>(lo)) + std::log(1.0 - hi)) / 2;
    CHECK(loss.item() == doctest::Approx(expected).epsilon(1e-5));
    tape.backward(loss);
    CHECK(p.grad()[0] == 0.0f);
    CHECK(p.grad()[1] == 0.0f);
  }

  TEST_CASE("elementwise binary ops require matching shapes") {
    Tape tape(Tape::Mode::inference);
    CHECK_THROWS_AS(ops::add(tape, Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
    CHECK_THROWS_AS(ops::linear(tape, Tensor::zeros({2, 3}), Tensor::zeros({4, 2}), Tensor::zeros({2})), ShapeError);
  }
}
