#include <cmath>
#include <vector>

#include "counting_scalar.hpp"
#include "doctest.h"
#include "lsat/cisa.hpp"
#include "lsat/gradcheck.hpp"
#include "oracles.hpp"

using namespace lsat;
using counting::CountingScalar;

namespace {

CisaConfig tiny_cfg(Index c) {
  CisaConfig cfg;
  cfg.channels = c;
  return cfg;
}

// Branch oracles in raw BCHW index terms, independent of the op stack.
std::vector<double> a1_oracle(const std::vector<double>& q, const std::vector<double>& k,
                              const std::vector<double>& v, Index B, Index C, Index H, Index W,
                              double a) {
  const Index N = H * W;
  std::vector<double> out(static_cast<std::size_t>(B * C * N), 0.0);
  for (Index b = 0; b < B; ++b) {
    std::vector<double> logits(static_cast<std::size_t>(C * C), 0.0);
    for (Index c1 = 0; c1 < C; ++c1)
      for (Index c2 = 0; c2 < C; ++c2) {
        double acc = 0;
        for (Index n = 0; n < N; ++n)
          acc += q[static_cast<std::size_t>((b * C + c1) * N + n)] *
                 k[static_cast<std::size_t>((b * C + c2) * N + n)];
        logits[static_cast<std::size_t>(c1 * C + c2)] = acc / a;
      }
    auto m = oracle::softmax_rows(logits, C, C);
    for (Index c1 = 0; c1 < C; ++c1)
      for (Index n = 0; n < N; ++n) {
        double acc = 0;
        for (Index c2 = 0; c2 < C; ++c2)
          acc += m[static_cast<std::size_t>(c1 * C + c2)] *
                 v[static_cast<std::size_t>((b * C + c2) * N + n)];
        out[static_cast<std::size_t>((b * C + c1) * N + n)] = acc;
      }
  }
  return out;
}

std::vector<double> a2_oracle(const std::vector<double>& x, Index B, Index C, Index H, Index W,
                              double w_max, double w_avg, double bias) {
  std::vector<double> out(x.size());
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c)
      for (Index h = 0; h < H; ++h) {
        double mx = -1e300, av = 0;
        for (Index w = 0; w < W; ++w) {
          double v = x[static_cast<std::size_t>(((b * C + c) * H + h) * W + w)];
          mx = std::max(mx, v);
          av += v;
        }
        av /= static_cast<double>(W);
        const double gate = 1.0 / (1.0 + std::exp(-(w_max * mx + w_avg * av + bias)));
        for (Index w = 0; w < W; ++w)
          out[static_cast<std::size_t>(((b * C + c) * H + h) * W + w)] =
              gate * x[static_cast<std::size_t>(((b * C + c) * H + h) * W + w)];
      }
  return out;
}

std::vector<double> a3_oracle(const std::vector<double>& x, Index B, Index C, Index H, Index W,
                              double w_max, double w_avg, double bias) {
  std::vector<double> out(x.size());
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c)
      for (Index w = 0; w < W; ++w) {
        double mx = -1e300, av = 0;
        for (Index h = 0; h < H; ++h) {
          double v = x[static_cast<std::size_t>(((b * C + c) * H + h) * W + w)];
          mx = std::max(mx, v);
          av += v;
        }
        av /= static_cast<double>(H);
        const double gate = 1.0 / (1.0 + std::exp(-(w_max * mx + w_avg * av + bias)));
        for (Index h = 0; h < H; ++h)
          out[static_cast<std::size_t>(((b * C + c) * H + h) * W + w)] =
              gate * x[static_cast<std::size_t>(((b * C + c) * H + h) * W + w)];
      }
  return out;
}

}  // namespace

TEST_SUITE("cisa") {

TEST_CASE("dws_project: centered delta + identity pointwise is the identity") {
  const Index C = 3;
  RandomSource rng(31);
  auto x = randn<double>({2, C, 4, 5}, rng);
  DwsProjection<double> p = make_dws_projection<double>(rng, "p", C, 3);
  // depthwise delta at the kernel center
  std::vector<double> dw(static_cast<std::size_t>(C * 9), 0.0);
  for (Index c = 0; c < C; ++c) dw[static_cast<std::size_t>(c * 9 + 4)] = 1.0;
  p.depthwise = Parameter<double>(Tensor<double>::from({C, 1, 3, 3}, std::move(dw)), "p.depthwise");
  std::vector<double> pw(static_cast<std::size_t>(C * C), 0.0);
  for (Index c = 0; c < C; ++c) pw[static_cast<std::size_t>(c * C + c)] = 1.0;
  p.pointwise = Parameter<double>(Tensor<double>::from({C, C, 1, 1}, std::move(pw)), "p.pointwise");
  p.bias = Parameter<double>(Tensor<double>::zeros({C}), "p.bias");
  CHECK(oracle::max_abs_diff(dws_project(x, p, nullptr), x) == 0.0);

  // zero pointwise, zero bias -> zeros
  p.pointwise = Parameter<double>(Tensor<double>::zeros({C, C, 1, 1}), "p.pointwise");
  auto z = dws_project(x, p, nullptr);
  for (double v : z.elems()) CHECK(v == 0.0);
}

TEST_CASE("dws_project matches composed conv oracle") {
  const Index C = 4;
  RandomSource rng(32);
  auto x = randn<double>({1, C, 5, 5}, rng);
  auto p = make_dws_projection<double>(rng, "p", C, 3);
  auto y = dws_project(x, p, nullptr);
  auto mid = oracle::conv2d(oracle::to_vec(x), 1, C, 5, 5, oracle::to_vec(p.depthwise.value), C,
                            3, 3, nullptr, 1, 1, C);
  auto bias = oracle::to_vec(p.bias.value);
  auto ref = oracle::conv2d(mid, 1, C, 5, 5, oracle::to_vec(p.pointwise.value), C, 1, 1, &bias,
                            1, 0, 1);
  CHECK(oracle::max_abs_diff(y, ref) < 1e-12);
}

TEST_CASE("branch_a1 zero keys give the uniform map") {
  const Index C = 4, H = 3, W = 2;
  RandomSource rng(33);
  auto q = randn<double>({1, C, H, W}, rng);
  auto k = Tensor<double>::zeros({1, C, H, W});
  auto v = randn<double>({1, C, H, W}, rng);
  auto a = Tensor<double>::scalar(1.0);
  auto map = channel_attention_map(q, k, a);
  for (double m : map.elems()) CHECK(m == doctest::Approx(1.0 / C).epsilon(1e-12));
  auto y = branch_a1(q, k, v, a);
  for (Index h = 0; h < H; ++h)
    for (Index w = 0; w < W; ++w) {
      double mean = 0;
      for (Index c = 0; c < C; ++c) mean += v.at({0, c, h, w});
      mean /= C;
      for (Index c = 0; c < C; ++c)
        CHECK(y.at({0, c, h, w}) == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("branch_a1 with a single channel returns V exactly") {
  RandomSource rng(34);
  auto q = randn<double>({2, 1, 3, 3}, rng);
  auto k = randn<double>({2, 1, 3, 3}, rng);
  auto v = randn<double>({2, 1, 3, 3}, rng);
  auto y = branch_a1(q, k, v, Tensor<double>::scalar(1.0));
  CHECK(oracle::max_abs_diff(y, v) == 0.0);
}

TEST_CASE("branch_a1 matches the loop oracle") {
  const Index C = 3, H = 2, W = 2;
  RandomSource rng(35);
  auto q = randn<double>({1, C, H, W}, rng);
  auto k = randn<double>({1, C, H, W}, rng);
  auto v = randn<double>({1, C, H, W}, rng);
  auto y = branch_a1(q, k, v, Tensor<double>::scalar(1.0));
  auto ref = a1_oracle(oracle::to_vec(q), oracle::to_vec(k), oracle::to_vec(v), 1, C, H, W, 1.0);
  CHECK(oracle::max_abs_diff(y, ref) < 1e-12);
}

TEST_CASE("attention map is CxC with unit row sums across spatial sizes") {
  const Index C = 5;
  RandomSource rng(36);
  const Index sides[5][2] = {{2, 3}, {4, 4}, {3, 7}, {8, 2}, {5, 5}};
  for (auto [h, w] : sides) {
    auto q = randn<double>({1, C, h, w}, rng);
    auto k = randn<double>({1, C, h, w}, rng);
    auto map = channel_attention_map(q, k, Tensor<double>::scalar(1.0));
    CHECK(map.shape() == Shape{1, C, C});
    for (Index r = 0; r < C; ++r) {
      double sum = 0;
      for (Index c = 0; c < C; ++c) sum += map.at({0, r, c});
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("large temperature drives the map to uniform") {
  const Index C = 6;
  RandomSource rng(37);
  auto q = randn<double>({1, C, 4, 4}, rng);
  auto k = randn<double>({1, C, 4, 4}, rng);
  auto map = channel_attention_map(q, k, Tensor<double>::scalar(1e6));
  for (double m : map.elems()) CHECK(std::fabs(m - 1.0 / C) < 1e-4);
}

TEST_CASE("branch_a2 gate degenerate cases") {
  RandomSource rng(38);
  auto x = randn<double>({2, 3, 4, 5}, rng);
  auto zero_w = Tensor<double>::zeros({1, 2, 1, 1});
  auto zero_b = Tensor<double>::zeros({1});
  auto halved = branch_a2(x, zero_w, zero_b);
  CHECK(oracle::max_abs_diff(halved, scale(x, 0.5)) < 1e-15);

  // constant input: max pool equals avg pool, gate is one sigmoid value
  auto xc = Tensor<double>::full({1, 2, 3, 3}, 0.8);
  auto gw = Tensor<double>::from({1, 2, 1, 1}, {0.7, -0.2});
  auto gb = Tensor<double>::from({1}, {0.1});
  const double logit = 0.7 * 0.8 - 0.2 * 0.8 + 0.1;
  const double gate = 1.0 / (1.0 + std::exp(-logit));
  auto y = branch_a2(xc, gw, gb);
  for (double v : y.elems()) CHECK(v == doctest::Approx(gate * 0.8).epsilon(1e-12));
}

TEST_CASE("branch_a2 and branch_a3 match their loop oracles") {
  RandomSource rng(39);
  auto x = randn<double>({2, 3, 4, 5}, rng);
  auto gw = randn<double>({1, 2, 1, 1}, rng);
  auto gb = randn<double>({1}, rng);
  const double wm = gw.at({0, 0, 0, 0}), wa = gw.at({0, 1, 0, 0}), bb = gb.at({0});
  CHECK(oracle::max_abs_diff(branch_a2(x, gw, gb),
                             a2_oracle(oracle::to_vec(x), 2, 3, 4, 5, wm, wa, bb)) < 1e-12);
  CHECK(oracle::max_abs_diff(branch_a3(x, gw, gb),
                             a3_oracle(oracle::to_vec(x), 2, 3, 4, 5, wm, wa, bb)) < 1e-12);
}

TEST_CASE("cisa_forward lambda selector and paper ratio") {
  const Index C = 4;
  RandomSource rng(40);
  auto cfg = tiny_cfg(C);
  auto w = make_cisa_weights<double>(cfg, rng, "cisa");
  auto x = randn<double>({1, C, 3, 3}, rng);

  auto q = dws_project(x, w.q_proj, nullptr);
  auto k = dws_project(x, w.k_proj, nullptr);
  auto v = dws_project(x, w.v_proj, nullptr);
  auto temp = lsat::exp(Tensor<double>(w.log_temperature.value));
  auto a1 = branch_a1(q, k, v, temp);
  auto a2 = branch_a2(x, w.gate_h_weight.value, w.gate_h_bias.value);
  auto a3 = branch_a3(x, w.gate_w_weight.value, w.gate_w_bias.value);
  auto project = [&](const Tensor<double>& t) {
    return conv2d(t, w.out_weight.value, std::optional<Tensor<double>>(w.out_bias.value), 1, 0, 1);
  };

  CisaConfig sel = cfg;
  sel.lambda_ratio = {1.0, 0.0, 0.0};
  CHECK(oracle::max_abs_diff(cisa_forward(x, w, sel, nullptr), project(a1)) == 0.0);

  CisaConfig ratio = cfg;  // default 2:1:1, normalized
  auto want = project(add(add(scale(a1, 0.5), scale(a2, 0.25)), scale(a3, 0.25)));
  CHECK(oracle::max_abs_diff(cisa_forward(x, w, ratio, nullptr), want) < 1e-15);
}

TEST_CASE("cisa_forward matches the composition of branch oracles") {
  const Index C = 4, H = 3, W = 3;
  RandomSource rng(41);
  auto cfg = tiny_cfg(C);
  auto w = make_cisa_weights<double>(cfg, rng, "cisa");
  auto x = randn<double>({1, C, H, W}, rng);

  auto conv_oracle = [&](const std::vector<double>& in, const Parameter<double>& weight,
                         const Parameter<double>* bias, Index groups, Index pad) {
    std::vector<double> b;
    if (bias) b = oracle::to_vec(bias->value);
    return oracle::conv2d(in, 1, weight.value.dim(1) * groups, H, W, oracle::to_vec(weight.value),
                          weight.value.dim(0), weight.value.dim(2), weight.value.dim(3),
                          bias ? &b : nullptr, 1, pad, groups);
  };
  auto dws_oracle = [&](const DwsProjection<double>& p) {
    auto mid = conv_oracle(oracle::to_vec(x), p.depthwise, nullptr, C, 1);
    return conv_oracle(mid, p.pointwise, &p.bias, 1, 0);
  };
  auto q = dws_oracle(w.q_proj);
  auto k = dws_oracle(w.k_proj);
  auto v = dws_oracle(w.v_proj);
  auto a1 = a1_oracle(q, k, v, 1, C, H, W, 1.0);
  auto a2 = a2_oracle(oracle::to_vec(x), 1, C, H, W, w.gate_h_weight.value.at({0, 0, 0, 0}),
                      w.gate_h_weight.value.at({0, 1, 0, 0}), w.gate_h_bias.value.at({0}));
  auto a3 = a3_oracle(oracle::to_vec(x), 1, C, H, W, w.gate_w_weight.value.at({0, 0, 0, 0}),
                      w.gate_w_weight.value.at({0, 1, 0, 0}), w.gate_w_bias.value.at({0}));
  std::vector<double> mixed(a1.size());
  for (std::size_t i = 0; i < a1.size(); ++i)
    mixed[i] = 0.5 * a1[i] + 0.25 * a2[i] + 0.25 * a3[i];
  auto ref = conv_oracle(mixed, w.out_weight, &w.out_bias, 1, 0);
  CHECK(oracle::max_abs_diff(cisa_forward(x, w, cfg, nullptr), ref) < 1e-12);
}

TEST_CASE("lambda mixing is affine before the zero-bias output projection") {
  const Index C = 3;
  RandomSource rng(42);
  auto cfg = tiny_cfg(C);
  cfg.normalize_lambdas = false;
  auto w = make_cisa_weights<double>(cfg, rng, "cisa");
  w.out_bias = Parameter<double>(Tensor<double>::zeros({C}), "cisa.out.bias");
  auto x = randn<double>({2, C, 4, 4}, rng);

  auto with_lambda = [&](double l1, double l2, double l3) {
    CisaConfig c = cfg;
    c.lambda_ratio = {l1, l2, l3};
    return cisa_forward(x, w, c, nullptr);
  };
  auto sum = add(add(with_lambda(1, 0, 0), with_lambda(0, 1, 0)), with_lambda(0, 0, 1));
  CHECK(oracle::max_abs_diff(sum, with_lambda(1, 1, 1)) < 1e-5);
}

TEST_CASE("cisa_forward preserves shape over random configurations") {
  RandomSource rng(43);
  for (int trial = 0; trial < 5; ++trial) {
    const Index C = 1 + rng.uniform_int(1, 6);
    const Index H = rng.uniform_int(2, 7), W = rng.uniform_int(2, 7);
    const Index B = rng.uniform_int(1, 2);
    auto cfg = tiny_cfg(C);
    auto w = make_cisa_weights<double>(cfg, rng, "cisa");
    auto x = randn<double>({B, C, H, W}, rng);
    CHECK(cisa_forward(x, w, cfg, nullptr).shape() == x.shape());
  }
  auto cfg = tiny_cfg(4);
  auto w = make_cisa_weights<double>(cfg, rng, "cisa");
  CHECK_THROWS_AS(cisa_forward(randn<double>({1, 3, 4, 4}, rng), w, cfg, nullptr),
                  std::invalid_argument);
}

TEST_CASE("block_forward hand-computable 1x1x1x1 case and shapes") {
  RandomSource rng(44);
  auto cfg = tiny_cfg(1);
  auto w = make_block_weights<double>(cfg, rng, "block");
  // zero every kernel, then set two biases by hand
  w.for_each_param([](Parameter<double>& p) {
    if (p.name.find("gamma") == std::string::npos)
      p.value = Tensor<double>::zeros(p.value.shape());
  });
  w.cisa.out_bias = Parameter<double>(Tensor<double>::from({1}, {0.3}), "block.cisa.out.bias");
  w.ffn_reduce.bias = Parameter<double>(Tensor<double>::from({1}, {-0.1}), "block.ffn.reduce.bias");
  auto x = Tensor<double>::from({1, 1, 1, 1}, {2.0});
  auto z = block_forward(x, w, nullptr);
  // attention input normalizes to zero, so the sublayer passes only its
  // output bias; the ffn likewise passes its reduce bias
  CHECK(z.item() == doctest::Approx(2.0 + 0.3 - 0.1).epsilon(1e-12));

  for (int trial = 0; trial < 5; ++trial) {
    const Index C = rng.uniform_int(2, 6);
    auto cfg2 = tiny_cfg(C);
    auto w2 = make_block_weights<double>(cfg2, rng, "block");
    auto x2 = randn<double>({rng.uniform_int(1, 2), C, rng.uniform_int(2, 5), rng.uniform_int(2, 5)},
                            rng);
    CHECK(block_forward(x2, w2, nullptr).shape() == x2.shape());
  }
}

TEST_CASE("block_forward gradients match finite differences") {
  RandomSource rng(45);
  auto cfg = tiny_cfg(3);
  auto w = make_block_weights<double>(cfg, rng, "block");
  auto x = randn<double>({1, 3, 4, 4}, rng, 0.5);
  auto wsum = randn<double>({1, 3, 4, 4}, rng);
  std::vector<Parameter<double>*> params;
  w.for_each_param([&](Parameter<double>& p) { params.push_back(&p); });
  auto loss_fn = [&](Tape<double>* tape) {
    return sum_all(mul(block_forward(x, w, tape), wsum));
  };
  auto report = check_param_gradients(loss_fn, params, 40, 7);
  INFO(report.note, " rel err ", report.max_rel_err);
  CHECK(report.pass);
  CHECK(report.max_rel_err < 1e-4);

  // and through the input
  auto rin = finite_diff_check(
      [&](const Tensor<double>& t) { return sum_all(mul(block_forward(t, w, t.tape()), wsum)); },
      x, 1e-5, 1e-4);
  CHECK(rin.pass);
}

TEST_CASE("vanilla attention degenerate and oracle cases") {
  RandomSource rng(46);
  const Index C = 3;
  auto w = make_vanilla_weights<double>(C, rng, "vanilla");
  // identity output projection isolates the attention result
  std::vector<double> eye(static_cast<std::size_t>(C * C), 0.0);
  for (Index c = 0; c < C; ++c) eye[static_cast<std::size_t>(c * C + c)] = 1.0;
  w.out.weight = Parameter<double>(Tensor<double>::from({C, C, 1, 1}, std::move(eye)), "w");
  w.out.bias = Parameter<double>(Tensor<double>::zeros({C}), "b");

  // single spatial position: the map is 1x1 and the output equals V
  auto x1 = randn<double>({1, C, 1, 1}, rng);
  auto v1 = w.v.apply(x1, nullptr);
  CHECK(oracle::max_abs_diff(vanilla_attention(x1, w, nullptr), v1) < 1e-15);

  // constant K (zero k weights, constant bias): uniform attention -> spatial mean of V
  auto wk = w;
  wk.k.weight = Parameter<double>(Tensor<double>::zeros({C, C, 1, 1}), "kw");
  wk.k.bias = Parameter<double>(Tensor<double>::full({C}, 0.37), "kb");
  auto x = randn<double>({1, C, 3, 3}, rng);
  auto v = wk.v.apply(x, nullptr);
  auto y = vanilla_attention(x, wk, nullptr);
  for (Index c = 0; c < C; ++c) {
    double mean = 0;
    for (Index h = 0; h < 3; ++h)
      for (Index ww = 0; ww < 3; ++ww) mean += v.at({0, c, h, ww});
    mean /= 9;
    for (Index h = 0; h < 3; ++h)
      for (Index ww = 0; ww < 3; ++ww)
        CHECK(y.at({0, c, h, ww}) == doctest::Approx(mean).epsilon(1e-10));
  }

  // random instance against an explicit loop oracle
  auto w2 = make_vanilla_weights<double>(C, rng, "vanilla2");
  auto xr = randn<double>({1, C, 2, 3}, rng);
  const Index H = 2, W = 3, N = 6;
  auto proj = [&](Conv2dLayer<double>& layer) {
    auto b = oracle::to_vec(layer.bias->value);
    return oracle::conv2d(oracle::to_vec(xr), 1, C, H, W, oracle::to_vec(layer.weight.value), C,
                          1, 1, &b, 1, 0, 1);
  };
  auto q = proj(w2.q), k = proj(w2.k), v2 = proj(w2.v);
  std::vector<double> logits(static_cast<std::size_t>(N * N));
  for (Index i = 0; i < N; ++i)
    for (Index j = 0; j < N; ++j) {
      double acc = 0;
      for (Index c = 0; c < C; ++c)
        acc += q[static_cast<std::size_t>(c * N + i)] * k[static_cast<std::size_t>(c * N + j)];
      logits[static_cast<std::size_t>(i * N + j)] = acc / std::sqrt(double(C));
    }
  auto attn = oracle::softmax_rows(logits, N, N);
  std::vector<double> merged(static_cast<std::size_t>(C * N));
  for (Index c = 0; c < C; ++c)
    for (Index i = 0; i < N; ++i) {
      double acc = 0;
      for (Index j = 0; j < N; ++j)
        acc += attn[static_cast<std::size_t>(i * N + j)] * v2[static_cast<std::size_t>(c * N + j)];
      merged[static_cast<std::size_t>(c * N + i)] = acc;
    }
  auto ob = oracle::to_vec(w2.out.bias->value);
  auto ref = oracle::conv2d(merged, 1, C, H, W, oracle::to_vec(w2.out.weight.value), C, 1, 1, &ob,
                            1, 0, 1);
  CHECK(oracle::max_abs_diff(vanilla_attention(xr, w2, nullptr), ref) < 1e-12);
}

TEST_CASE("mac count scaling identities") {
  // vanilla attention-core quadratic identity: x16 when N goes x4
  auto v1 = count_attention_macs(AttentionKind::Vanilla, 8, 16, 16);
  auto v2 = count_attention_macs(AttentionKind::Vanilla, 8, 32, 32);
  CHECK(v2.macs_attention_core == 16 * v1.macs_attention_core);

  // cisa A1-term linear identity: x4 when N goes x4
  auto c1 = count_attention_macs(AttentionKind::Cisa, 8, 16, 16);
  auto c2 = count_attention_macs(AttentionKind::Cisa, 8, 32, 32);
  auto a1_term = [](const AttentionCost& c, Index C, Index H, Index W) {
    const std::int64_t N = H * W;
    return c.macs_attention_core - (3 * C * H + C * N) - (3 * C * W + C * N) - 3 * C * N;
  };
  CHECK(a1_term(c2, 8, 32, 32) == 4 * a1_term(c1, 8, 16, 16));
}

TEST_CASE("mac counts equal the instrumented-multiply trace") {
  const Index C = 4, H = 4, W = 4;
  RandomSource rng(47);
  CisaConfig cfg;
  cfg.channels = C;
  auto w = make_cisa_weights<CountingScalar>(cfg, rng, "cisa");
  auto x = randn<CountingScalar>({1, C, H, W}, rng);
  CountingScalar::reset();
  cisa_forward(x, w, cfg, nullptr);
  const auto counted_cisa = CountingScalar::multiplies;
  CHECK(counted_cisa == static_cast<std::uint64_t>(
                            count_attention_macs(AttentionKind::Cisa, C, H, W).macs_total));

  auto vw = make_vanilla_weights<CountingScalar>(C, rng, "vanilla");
  auto xv = randn<CountingScalar>({1, C, H, W}, rng);
  CountingScalar::reset();
  vanilla_attention(xv, vw, nullptr);
  CHECK(CountingScalar::multiplies ==
        static_cast<std::uint64_t>(
            count_attention_macs(AttentionKind::Vanilla, C, H, W).macs_total));
}

TEST_CASE("log-log scaling slopes over N") {
  auto slope = [](const std::vector<std::pair<double, double>>& pts) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (auto [x, y] : pts) {
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    const double n = static_cast<double>(pts.size());
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
  };
  std::vector<std::pair<double, double>> cisa_pts, vanilla_pts;
  for (Index side : {8, 16, 32, 64}) {
    const double n = static_cast<double>(side * side);
    cisa_pts.push_back({std::log(n),
                        std::log(static_cast<double>(
                            count_attention_macs(AttentionKind::Cisa, 32, side, side)
                                .macs_attention_core))});
    vanilla_pts.push_back({std::log(n),
                           std::log(static_cast<double>(
                               count_attention_macs(AttentionKind::Vanilla, 32, side, side)
                                   .macs_attention_core))});
  }
  CHECK(std::fabs(slope(cisa_pts) - 1.0) < 0.05);
  CHECK(std::fabs(slope(vanilla_pts) - 2.0) < 0.05);
}

}  // TEST_SUITE
