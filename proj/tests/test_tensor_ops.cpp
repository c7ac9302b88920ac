#include <cmath>
#include <vector>

#include "doctest.h"
#include "lsat/ops.hpp"
#include "lsat/random.hpp"
#include "lsat/tensor.hpp"
#include "oracles.hpp"

using namespace lsat;

namespace {

Tensor<double> arange(Shape shape) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

}  // namespace

TEST_SUITE("tensor_ops") {

TEST_CASE("tensor construction and invariants") {
  auto t = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.at({1, 2}) == 6);
  CHECK_THROWS_AS(Tensor<double>::from({2, 3}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<double>::from({0, 3}, {}), std::invalid_argument);
  CHECK_THROWS_AS(t.at({2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(t.item(), std::invalid_argument);
  CHECK(Tensor<double>::scalar(4.5).item() == 4.5);
}

TEST_CASE("conv2d identity kernel per channel") {
  RandomSource rng(7);
  auto x = randn<double>({2, 3, 5, 5}, rng);
  auto w = Tensor<double>::full({3, 1, 1, 1}, 1.0);  // depthwise identity
  auto y = conv2d(x, w, {}, 1, 0, 3);
  CHECK(oracle::max_abs_diff(y, x) == 0.0);
}

TEST_CASE("conv2d zero kernel gives zeros") {
  RandomSource rng(8);
  auto x = randn<double>({1, 4, 6, 6}, rng);
  auto w = Tensor<double>::zeros({2, 4, 3, 3});
  auto y = conv2d(x, w, {}, 1, 1, 1);
  for (double v : y.elems()) CHECK(v == 0.0);
}

TEST_CASE("conv2d matches nested-loop oracle") {
  auto x = arange({1, 2, 3, 3});
  RandomSource rng(11);
  auto w = randn<double>({2, 2, 3, 3}, rng);
  auto y = conv2d(x, w);
  auto ref = oracle::conv2d(oracle::to_vec(x), 1, 2, 3, 3, oracle::to_vec(w), 2, 3, 3, nullptr,
                            1, 0, 1);
  CHECK(y.shape() == Shape{1, 2, 1, 1});
  CHECK(oracle::max_abs_diff(y, ref) < 1e-10);

  // strided, padded, grouped, biased case
  auto x2 = randn<double>({2, 4, 7, 7}, rng);
  auto w2 = randn<double>({6, 2, 3, 3}, rng);
  auto b2 = randn<double>({6}, rng);
  auto y2 = conv2d(x2, w2, std::optional<Tensor<double>>(b2), 2, 1, 2);
  auto b2v = oracle::to_vec(b2);
  auto ref2 = oracle::conv2d(oracle::to_vec(x2), 2, 4, 7, 7, oracle::to_vec(w2), 6, 3, 3, &b2v,
                             2, 1, 2);
  CHECK(y2.shape() == Shape{2, 6, 4, 4});
  CHECK(oracle::max_abs_diff(y2, ref2) < 1e-10);
}

TEST_CASE("conv2d rejects bad geometry") {
  auto x = Tensor<double>::zeros({1, 4, 5, 5});
  // wrong weight input-channel axis
  CHECK_THROWS_WITH_AS(conv2d(x, Tensor<double>::zeros({2, 3, 3, 3})),
                       doctest::Contains("input-channel axis"), std::invalid_argument);
  // channels not divisible by groups
  CHECK_THROWS_AS(conv2d(x, Tensor<double>::zeros({3, 1, 3, 3}), {}, 1, 0, 3),
                  std::invalid_argument);
  // non-integer output size: (5 - 2) / 2 is not integral
  CHECK_THROWS_AS(conv2d(x, Tensor<double>::zeros({2, 4, 2, 2}), {}, 2, 0, 1),
                  std::invalid_argument);
}

TEST_CASE("matmul_batched identity and hand-checked") {
  RandomSource rng(3);
  auto b = randn<double>({1, 3, 4}, rng);
  auto eye = Tensor<double>::from({1, 3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(oracle::max_abs_diff(matmul_batched(eye, b), b) == 0.0);

  auto a = Tensor<double>::from({1, 2, 2}, {1, 2, 3, 4});
  auto m = Tensor<double>::from({1, 2, 2}, {5, 6, 7, 8});
  auto y = matmul_batched(a, m);
  CHECK(oracle::to_vec(y) == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("matmul_batched matches triple-loop oracle") {
  RandomSource rng(4);
  auto a = randn<double>({2, 4, 5}, rng);
  auto b = randn<double>({2, 5, 3}, rng);
  auto y = matmul_batched(a, b);
  CHECK(oracle::max_abs_diff(y, oracle::matmul(oracle::to_vec(a), oracle::to_vec(b), 2, 4, 5, 3)) <
        1e-12);
  CHECK_THROWS_AS(matmul_batched(a, randn<double>({2, 4, 3}, rng)), std::invalid_argument);
  CHECK_THROWS_AS(matmul_batched(a, randn<double>({1, 5, 3}, rng)), std::invalid_argument);
}

TEST_CASE("softmax basics") {
  auto c = softmax_lastdim(Tensor<double>::from({3}, {2.5, 2.5, 2.5}));
  for (double v : c.elems()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  auto y = softmax_lastdim(Tensor<double>::from({2}, {0.0, std::log(2.0)}));
  CHECK(y.at({0}) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(y.at({1}) == doctest::Approx(2.0 / 3).epsilon(1e-12));

  CHECK_THROWS_AS(softmax_lastdim(Tensor<double>::from({2}, {std::nan(""), 1.0})),
                  std::invalid_argument);
}

TEST_CASE("softmax rows sum to one, match oracle, shift-invariant") {
  RandomSource rng(5);
  auto x = randn<double>({4, 7}, rng, 2.0);
  auto s = softmax_lastdim(x);
  auto ref = oracle::softmax_rows(oracle::to_vec(x), 4, 7);
  CHECK(oracle::max_abs_diff(s, ref) < 1e-12);
  for (Index r = 0; r < 4; ++r) {
    double sum = 0;
    for (Index cix = 0; cix < 7; ++cix) sum += s.at({r, cix});
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  auto shifted = softmax_lastdim(add_scalar(x, 13.5));
  CHECK(oracle::max_abs_diff(shifted, oracle::to_vec(s)) < 1e-6);
}

TEST_CASE("elementwise basics") {
  RandomSource rng(6);
  auto x = randn<double>({2, 3, 2, 2}, rng);
  auto zero = abs(sub(x, x));
  for (double v : zero.elems()) CHECK(v == 0.0);
  CHECK(sigmoid(Tensor<double>::scalar(0.0)).item() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("broadcast add matches loop oracle and rejects bad shapes") {
  RandomSource rng(9);
  auto gate = randn<double>({1, 3, 1, 1}, rng);
  auto map = randn<double>({1, 3, 4, 4}, rng);
  auto y = add(gate, map);
  for (Index c = 0; c < 3; ++c)
    for (Index h = 0; h < 4; ++h)
      for (Index w = 0; w < 4; ++w)
        CHECK(y.at({0, c, h, w}) ==
              doctest::Approx(gate.at({0, c, 0, 0}) + map.at({0, c, h, w})).epsilon(1e-15));
  CHECK_THROWS_WITH_AS(add(randn<double>({2, 3}, rng), randn<double>({3, 2}, rng)),
                       doctest::Contains("broadcast"), std::invalid_argument);
}

TEST_CASE("permute identity, involution, index oracle") {
  auto x = arange({2, 3, 4, 5});
  auto same = permute(x, {0, 1, 2, 3});
  CHECK(oracle::max_abs_diff(same, x) == 0.0);

  auto there = permute(x, {0, 3, 1, 2});  // BCHW -> BWCH
  auto back = permute(there, {0, 2, 3, 1});
  CHECK(oracle::to_vec(back) == oracle::to_vec(x));  // bit-exact round trip

  CHECK(there.shape() == Shape{2, 5, 3, 4});
  for (Index b = 0; b < 2; ++b)
    for (Index w = 0; w < 5; ++w)
      for (Index c = 0; c < 3; ++c)
        for (Index h = 0; h < 4; ++h) CHECK(there.at({b, w, c, h}) == x.at({b, c, h, w}));
  CHECK(oracle::to_vec(there) == oracle::permute(oracle::to_vec(x), x.shape(), {0, 3, 1, 2}));

  CHECK_THROWS_AS(permute(x, {0, 1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(permute(x, {0, 1, 2, 2}), std::invalid_argument);
}

TEST_CASE("reshape round-trips bit-exact and validates") {
  auto x = arange({3, 4});
  auto r = reshape(reshape(x, {2, 6}), {3, 4});
  CHECK(oracle::to_vec(r) == oracle::to_vec(x));
  CHECK_THROWS_AS(reshape(x, {5, 2}), std::invalid_argument);
}

TEST_CASE("pool_over_axis") {
  auto one = arange({2, 1, 3});
  CHECK(oracle::to_vec(pool_over_axis(one, 1, PoolKind::Max)) == oracle::to_vec(one));
  CHECK(oracle::to_vec(pool_over_axis(one, 1, PoolKind::Avg)) == oracle::to_vec(one));

  auto v = Tensor<double>::from({4}, {1, 2, 3, 6});
  CHECK(pool_over_axis(v, 0, PoolKind::Avg).item() == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(pool_over_axis(v, 0, PoolKind::Max).item() == 6.0);

  RandomSource rng(10);
  auto x = randn<double>({2, 5, 3}, rng);
  auto mx = pool_over_axis(x, 1, PoolKind::Max);
  auto av = pool_over_axis(x, 1, PoolKind::Avg);
  for (Index b = 0; b < 2; ++b)
    for (Index j = 0; j < 3; ++j) {
      double best = -1e30, acc = 0;
      for (Index k = 0; k < 5; ++k) {
        best = std::max(best, x.at({b, k, j}));
        acc += x.at({b, k, j});
      }
      CHECK(mx.at({b, 0, j}) == best);
      CHECK(av.at({b, 0, j}) == doctest::Approx(acc / 5).epsilon(1e-12));
    }
}

TEST_CASE("concat and narrow") {
  RandomSource rng(12);
  auto x = randn<double>({2, 3, 4}, rng);
  CHECK(oracle::to_vec(concat<double>({x}, 1)) == oracle::to_vec(x));

  auto z = Tensor<double>::zeros({2, 2, 4});
  auto cat = concat<double>({x, z}, 1);
  CHECK(cat.shape() == Shape{2, 5, 4});
  CHECK(oracle::to_vec(narrow(cat, 1, 0, 3)) == oracle::to_vec(x));

  auto y = randn<double>({2, 2, 4}, rng);
  auto both = concat<double>({x, y}, 1);
  CHECK(oracle::to_vec(narrow(both, 1, 0, 3)) == oracle::to_vec(x));
  CHECK(oracle::to_vec(narrow(both, 1, 3, 2)) == oracle::to_vec(y));

  CHECK_THROWS_WITH_AS(concat<double>({x, randn<double>({2, 2, 5}, rng)}, 1),
                       doctest::Contains("non-concat axis"), std::invalid_argument);
  CHECK_THROWS_AS(narrow(x, 1, 2, 5), std::invalid_argument);
}

TEST_CASE("upsample_bilinear2x convention") {
  auto c = Tensor<double>::full({1, 2, 3, 3}, 0.7);
  auto cu = upsample_bilinear2x(c);
  CHECK(cu.shape() == Shape{1, 2, 6, 6});
  for (double v : cu.elems()) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));

  // closed-form bilinear weights for a [0, 1] row under align_corners=false
  auto x = Tensor<double>::from({1, 1, 1, 2}, {0.0, 1.0});
  auto y = upsample_bilinear2x(x);
  CHECK(y.shape() == Shape{1, 1, 2, 4});
  const std::vector<double> want = {0.0, 0.25, 0.75, 1.0};
  for (Index r = 0; r < 2; ++r)
    for (Index i = 0; i < 4; ++i)
      CHECK(y.at({0, 0, r, i}) == doctest::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("layer_norm_channels") {
  auto gamma = Tensor<double>::full({3}, 1.0);
  auto beta = Tensor<double>::zeros({3});

  // constant over channels -> zeros
  auto x = Tensor<double>::full({1, 3, 2, 2}, 4.2);
  auto y = layer_norm_channels(x, gamma, beta);
  for (double v : y.elems()) CHECK(std::fabs(v) < 1e-9);

  // single position, two channels [1, 3] -> [-1, 1] up to eps
  auto g2 = Tensor<double>::full({2}, 1.0);
  auto b2 = Tensor<double>::zeros({2});
  auto x2 = Tensor<double>::from({1, 2, 1, 1}, {1.0, 3.0});
  auto y2 = layer_norm_channels(x2, g2, b2);
  CHECK(y2.at({0, 0, 0, 0}) == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y2.at({0, 1, 0, 0}) == doctest::Approx(1.0).epsilon(1e-4));

  // random input against a direct per-position computation
  RandomSource rng(13);
  auto xr = randn<double>({2, 5, 3, 2}, rng);
  auto gr = randn<double>({5}, rng);
  auto br = randn<double>({5}, rng);
  auto yr = layer_norm_channels(xr, gr, br, 1e-5);
  for (Index b = 0; b < 2; ++b)
    for (Index h = 0; h < 3; ++h)
      for (Index w = 0; w < 2; ++w) {
        double mean = 0, var = 0;
        for (Index c = 0; c < 5; ++c) mean += xr.at({b, c, h, w});
        mean /= 5;
        for (Index c = 0; c < 5; ++c) {
          double d = xr.at({b, c, h, w}) - mean;
          var += d * d;
        }
        var /= 5;
        for (Index c = 0; c < 5; ++c) {
          double want = (xr.at({b, c, h, w}) - mean) / std::sqrt(var + 1e-5) * gr.at({c}) +
                        br.at({c});
          CHECK(yr.at({b, c, h, w}) == doctest::Approx(want).epsilon(1e-10));
        }
        // normalized pre-affine slice has zero mean / unit variance
        double m2 = 0, v2 = 0;
        for (Index c = 0; c < 5; ++c) {
          double xh = (xr.at({b, c, h, w}) - mean) / std::sqrt(var + 1e-5);
          m2 += xh;
          v2 += xh * xh;
        }
        CHECK(std::fabs(m2 / 5) < 1e-5);
        CHECK(v2 / 5 == doctest::Approx(1.0).epsilon(1e-4));
      }
  CHECK_THROWS_AS(layer_norm_channels(xr, gr, br, 0.0), std::invalid_argument);
}

}  // TEST_SUITE
