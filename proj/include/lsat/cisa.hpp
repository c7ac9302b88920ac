// Cross-dimension interactive self-attention: a channel-channel transposed
// attention branch plus two gated channel/spatial interaction branches,
// mixed by a weighted sum. Cost is linear in H*W at fixed channel count,
// against the quadratic spatial self-attention kept here as the baseline.
#pragma once

#include <array>
#include <type_traits>
#include <cmath>
#include <cstdint>
#include <string>

#include "lsat/layers.hpp"
#include "lsat/ops.hpp"
#include "lsat/random.hpp"
#include "lsat/tape.hpp"

namespace lsat {

struct CisaConfig {
  Index channels = 0;
  std::array<double, 3> lambda_ratio{2.0, 1.0, 1.0};  // branch mix, default 2:1:1
  bool normalize_lambdas = true;
  double temperature_init = 1.0;
  Index qkv_kernel = 3;
  Index heads = 1;  // reserved; only 1 is implemented

  void validate() const {
    if (channels < 1) throw std::invalid_argument("CisaConfig: channels must be >= 1");
    double sum = 0;
    for (double l : lambda_ratio) {
      if (l < 0) throw std::invalid_argument("CisaConfig: lambda weights must be non-negative");
      sum += l;
    }
    if (sum <= 0) throw std::invalid_argument("CisaConfig: lambda weights must not all be zero");
    if (!(temperature_init > 0))
      throw std::invalid_argument("CisaConfig: temperature_init must be positive");
    if (qkv_kernel < 1 || qkv_kernel % 2 == 0)
      throw std::invalid_argument("CisaConfig: qkv_kernel must be odd");
    if (heads != 1) throw std::invalid_argument("CisaConfig: only a single head is implemented");
  }

  std::array<double, 3> mix_weights() const {
    if (!normalize_lambdas) return lambda_ratio;
    const double sum = lambda_ratio[0] + lambda_ratio[1] + lambda_ratio[2];
    return {lambda_ratio[0] / sum, lambda_ratio[1] / sum, lambda_ratio[2] / sum};
  }
};

// Depthwise k x k followed by pointwise 1 x 1 (bias on the pointwise stage).
template <typename S>
struct DwsProjection {
  Parameter<S> depthwise;  // C,1,k,k
  Parameter<S> pointwise;  // C,C,1,1
  Parameter<S> bias;       // C

  template <typename F>
  void for_each_param(F&& f) {
    f(depthwise);
    f(pointwise);
    f(bias);
  }
};

template <typename S>
struct CisaWeights {
  DwsProjection<S> q_proj, k_proj, v_proj;
  Parameter<S> log_temperature;  // divisor a stored as its log; a > 0 by construction
  Parameter<S> gate_h_weight;    // 1,2,1,1 over the pooled (max, avg) stack
  Parameter<S> gate_h_bias;      // 1
  Parameter<S> gate_w_weight;
  Parameter<S> gate_w_bias;
  Parameter<S> out_weight;  // C,C,1,1
  Parameter<S> out_bias;    // C

  template <typename F>
  void for_each_param(F&& f) {
    q_proj.for_each_param(f);
    k_proj.for_each_param(f);
    v_proj.for_each_param(f);
    f(log_temperature);
    f(gate_h_weight);
    f(gate_h_bias);
    f(gate_w_weight);
    f(gate_w_bias);
    f(out_weight);
    f(out_bias);
  }
};

template <typename S>
DwsProjection<S> make_dws_projection(RandomSource& rng, const std::string& name, Index channels,
                                     Index k) {
  DwsProjection<S> p;
  p.depthwise = Parameter<S>(
      randn<S>({channels, 1, k, k}, rng, std::sqrt(1.0 / static_cast<double>(k * k))),
      name + ".depthwise");
  p.pointwise = Parameter<S>(
      randn<S>({channels, channels, 1, 1}, rng, std::sqrt(1.0 / static_cast<double>(channels))),
      name + ".pointwise");
  p.bias = Parameter<S>(Tensor<S>::zeros({channels}), name + ".bias");
  return p;
}

template <typename S>
CisaWeights<S> make_cisa_weights(const CisaConfig& cfg, RandomSource& rng,
                                 const std::string& name) {
  cfg.validate();
  const Index c = cfg.channels;
  CisaWeights<S> w;
  w.q_proj = make_dws_projection<S>(rng, name + ".q_proj", c, cfg.qkv_kernel);
  w.k_proj = make_dws_projection<S>(rng, name + ".k_proj", c, cfg.qkv_kernel);
  w.v_proj = make_dws_projection<S>(rng, name + ".v_proj", c, cfg.qkv_kernel);
  w.log_temperature =
      Parameter<S>(Tensor<S>::scalar(S(std::log(cfg.temperature_init))), name + ".log_temperature");
  const double gate_std = std::sqrt(1.0 / 2.0);
  w.gate_h_weight = Parameter<S>(randn<S>({1, 2, 1, 1}, rng, gate_std), name + ".gate_h.weight");
  w.gate_h_bias = Parameter<S>(Tensor<S>::zeros({1}), name + ".gate_h.bias");
  w.gate_w_weight = Parameter<S>(randn<S>({1, 2, 1, 1}, rng, gate_std), name + ".gate_w.weight");
  w.gate_w_bias = Parameter<S>(Tensor<S>::zeros({1}), name + ".gate_w.bias");
  w.out_weight = Parameter<S>(
      randn<S>({c, c, 1, 1}, rng, std::sqrt(1.0 / static_cast<double>(c))), name + ".out.weight");
  w.out_bias = Parameter<S>(Tensor<S>::zeros({c}), name + ".out.bias");
  return w;
}

// Depthwise k x k (padding preserves H, W) then pointwise 1 x 1.
template <typename S>
Tensor<S> dws_project(const Tensor<S>& x, DwsProjection<S>& p, Tape<std::type_identity_t<S>>* tape) {
  const Index c = x.dim(1);
  if (p.depthwise.value.dim(0) != c)
    throw std::invalid_argument("dws_project: projection built for " +
                                std::to_string(p.depthwise.value.dim(0)) + " channels, input has " +
                                std::to_string(c));
  const Index k = p.depthwise.value.dim(2);
  auto dw = conv2d(x, use(tape, p.depthwise), std::optional<Tensor<S>>{}, 1, (k - 1) / 2, c);
  return conv2d(dw, use(tape, p.pointwise), std::optional<Tensor<S>>(use(tape, p.bias)), 1, 0, 1);
}

// Channel-channel branch: softmax((Q Kt) / a) V over flattened spatial
// positions. The attention map is C x C; its rows sum to 1.
template <typename S>
Tensor<S> branch_a1(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                    const Tensor<S>& temperature) {
  if (q.shape() != k.shape() || q.shape() != v.shape())
    throw std::invalid_argument("branch_a1: q/k/v shapes must match");
  const Index B = q.dim(0), C = q.dim(1), H = q.dim(2), W = q.dim(3);
  const Index N = H * W;
  auto qf = reshape(q, {B, C, N});
  auto kt = permute(reshape(k, {B, C, N}), {0, 2, 1});
  auto logits = div(matmul_batched(qf, kt), temperature);  // B,C,C
  auto attn = softmax_lastdim(logits);
  auto out = matmul_batched(attn, reshape(v, {B, C, N}));
  return reshape(out, {B, C, H, W});
}

// Exposes the C x C map itself (shared path with branch_a1) for inspection
// and tests.
template <typename S>
Tensor<S> channel_attention_map(const Tensor<S>& q, const Tensor<S>& k,
                                const Tensor<S>& temperature) {
  const Index B = q.dim(0), C = q.dim(1), N = q.dim(2) * q.dim(3);
  auto qf = reshape(q, {B, C, N});
  auto kt = permute(reshape(k, {B, C, N}), {0, 2, 1});
  return softmax_lastdim(div(matmul_batched(qf, kt), temperature));
}

// Channel-height branch: permute to B,W,C,H, pool over W with max and avg in
// parallel, 1x1 gate over the 2-channel stack, sigmoid, multiply back onto
// the permuted input, undo the permutation.
template <typename S>
Tensor<S> branch_a2(const Tensor<S>& x, const Tensor<S>& gate_weight,
                    const Tensor<S>& gate_bias) {
  auto xp = permute(x, {0, 3, 1, 2});  // B,W,C,H
  auto mx = pool_over_axis(xp, 1, PoolKind::Max);
  auto av = pool_over_axis(xp, 1, PoolKind::Avg);
  auto stacked = concat<S>({mx, av}, 1);  // B,2,C,H
  auto gate =
      sigmoid(conv2d(stacked, gate_weight, std::optional<Tensor<S>>(gate_bias), 1, 0, 1));
  return permute(mul(xp, gate), {0, 2, 3, 1});
}

// Channel-width branch: mirror of branch_a2 with the H-leading permutation.
template <typename S>
Tensor<S> branch_a3(const Tensor<S>& x, const Tensor<S>& gate_weight,
                    const Tensor<S>& gate_bias) {
  auto xp = permute(x, {0, 2, 1, 3});  // B,H,C,W
  auto mx = pool_over_axis(xp, 1, PoolKind::Max);
  auto av = pool_over_axis(xp, 1, PoolKind::Avg);
  auto stacked = concat<S>({mx, av}, 1);  // B,2,C,W
  auto gate =
      sigmoid(conv2d(stacked, gate_weight, std::optional<Tensor<S>>(gate_bias), 1, 0, 1));
  return permute(mul(xp, gate), {0, 2, 1, 3});
}

// Weighted branch sum followed by a 1x1 output projection.
template <typename S>
Tensor<S> cisa_forward(const Tensor<S>& x, CisaWeights<S>& w, const CisaConfig& cfg,
                       Tape<std::type_identity_t<S>>* tape) {
  if (x.rank() != 4)
    throw std::invalid_argument("cisa_forward: input must be BCHW, got " + shape_str(x.shape()));
  if (x.dim(1) != cfg.channels)
    throw std::invalid_argument("cisa_forward: input has " + std::to_string(x.dim(1)) +
                                " channels, config expects " + std::to_string(cfg.channels));
  auto q = dws_project(x, w.q_proj, tape);
  auto k = dws_project(x, w.k_proj, tape);
  auto v = dws_project(x, w.v_proj, tape);
  auto temperature = lsat::exp(use(tape, w.log_temperature));
  auto a1 = branch_a1(q, k, v, temperature);
  auto a2 = branch_a2(x, use(tape, w.gate_h_weight), use(tape, w.gate_h_bias));
  auto a3 = branch_a3(x, use(tape, w.gate_w_weight), use(tape, w.gate_w_bias));
  const auto mix = cfg.mix_weights();
  auto mixed = add(add(scale(a1, mix[0]), scale(a2, mix[1])), scale(a3, mix[2]));
  return conv2d(mixed, use(tape, w.out_weight), std::optional<Tensor<S>>(use(tape, w.out_bias)),
                1, 0, 1);
}

// Pre-norm residual transformer block: attention sublayer then a 2x GELU
// feed-forward of 1x1 convolutions.
template <typename S>
struct BlockWeights {
  LayerNormLayer<S> norm1, norm2;
  CisaWeights<S> cisa;
  Conv2dLayer<S> ffn_expand, ffn_reduce;
  CisaConfig config;

  template <typename F>
  void for_each_param(F&& f) {
    norm1.for_each_param(f);
    cisa.for_each_param(f);
    norm2.for_each_param(f);
    ffn_expand.for_each_param(f);
    ffn_reduce.for_each_param(f);
  }
};

template <typename S>
BlockWeights<S> make_block_weights(const CisaConfig& cfg, RandomSource& rng,
                                   const std::string& name) {
  cfg.validate();
  const Index c = cfg.channels;
  BlockWeights<S> w;
  w.norm1 = make_layer_norm<S>(name + ".norm1", c);
  w.norm2 = make_layer_norm<S>(name + ".norm2", c);
  w.cisa = make_cisa_weights<S>(cfg, rng, name + ".cisa");
  w.ffn_expand = make_conv<S>(rng, name + ".ffn.expand", 2 * c, c, 1, 1, 0, 1, true);
  w.ffn_reduce = make_conv<S>(rng, name + ".ffn.reduce", c, 2 * c, 1, 1, 0, 1, true);
  w.config = cfg;
  return w;
}

template <typename S>
Tensor<S> block_forward(const Tensor<S>& x, BlockWeights<S>& w, Tape<std::type_identity_t<S>>* tape) {
  auto y = add(x, cisa_forward(w.norm1.apply(x, tape), w.cisa, w.config, tape));
  auto h = w.ffn_reduce.apply(gelu(w.ffn_expand.apply(w.norm2.apply(y, tape), tape)), tape);
  return add(y, h);
}

// Baseline: standard spatial self-attention over HW tokens with an HWxHW
// map, 1x1 projections and 1/sqrt(C) scaling. Kept for the cost comparison.
template <typename S>
struct VanillaAttentionWeights {
  Conv2dLayer<S> q, k, v, out;

  template <typename F>
  void for_each_param(F&& f) {
    q.for_each_param(f);
    k.for_each_param(f);
    v.for_each_param(f);
    out.for_each_param(f);
  }
};

template <typename S>
VanillaAttentionWeights<S> make_vanilla_weights(Index channels, RandomSource& rng,
                                                const std::string& name) {
  VanillaAttentionWeights<S> w;
  w.q = make_conv<S>(rng, name + ".q", channels, channels, 1, 1, 0, 1, true);
  w.k = make_conv<S>(rng, name + ".k", channels, channels, 1, 1, 0, 1, true);
  w.v = make_conv<S>(rng, name + ".v", channels, channels, 1, 1, 0, 1, true);
  w.out = make_conv<S>(rng, name + ".out", channels, channels, 1, 1, 0, 1, true);
  return w;
}

template <typename S>
Tensor<S> vanilla_attention(const Tensor<S>& x, VanillaAttentionWeights<S>& w,
                            Tape<std::type_identity_t<S>>* tape) {
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index N = H * W;
  auto q = w.q.apply(x, tape);
  auto k = w.k.apply(x, tape);
  auto v = w.v.apply(x, tape);
  auto qt = permute(reshape(q, {B, C, N}), {0, 2, 1});  // B,N,C
  auto kf = reshape(k, {B, C, N});
  auto attn = softmax_lastdim(scale(matmul_batched(qt, kf), 1.0 / std::sqrt(double(C))));
  auto vt = permute(reshape(v, {B, C, N}), {0, 2, 1});
  auto o = matmul_batched(attn, vt);  // B,N,C
  auto merged = reshape(permute(o, {0, 2, 1}), {B, C, H, W});
  return w.out.apply(merged, tape);
}

// ---------------------------------------------------------------------------
// MAC accounting
// ---------------------------------------------------------------------------

enum class AttentionKind { Cisa, Vanilla };

struct AttentionCost {
  std::int64_t macs_total = 0;
  std::int64_t macs_attention_core = 0;
  std::int64_t params = 0;
};

// Closed-form multiply counts for one B=1 forward pass, term by term from
// the implementations above.
//
// CISA (k = qkv kernel, N = H*W):
//   projections  3 * (C*k^2*N + C^2*N)   depthwise then pointwise, x3
//   core: QKt    C^2*N                   B,C,N x B,N,C
//         /a     0                       division
//         softmax 0
//         MV     C^2*N
//         A2     C*H (avg pool) + 2*C*H (gate conv) + C*N (gated multiply)
//         A3     C*W + 2*C*W + C*N
//         mix    3*C*N                   three scale-by-lambda ops
//   out_proj     C^2*N
// Vanilla:
//   projections  3*C^2*N
//   core: QtK    C*N^2, scale N^2, softmax 0, AV  C*N^2
//   out_proj     C^2*N
inline AttentionCost count_attention_macs(AttentionKind kind, Index C, Index H, Index W,
                                          Index qkv_kernel = 3) {
  if (C < 1 || H < 1 || W < 1) throw std::invalid_argument("count_attention_macs: bad dims");
  const std::int64_t N = H * W;
  AttentionCost cost;
  if (kind == AttentionKind::Cisa) {
    const std::int64_t k2 = qkv_kernel * qkv_kernel;
    const std::int64_t projections = 3 * (C * k2 * N + C * C * N);
    const std::int64_t a1_core = 2 * C * C * N;
    const std::int64_t a2 = 3 * C * H + C * N;
    const std::int64_t a3 = 3 * C * W + C * N;
    const std::int64_t mix = 3 * C * N;
    const std::int64_t out_proj = C * C * N;
    cost.macs_attention_core = a1_core + a2 + a3 + mix;
    cost.macs_total = projections + cost.macs_attention_core + out_proj;
    cost.params = 3 * (C * k2 + C * C + C)  // dws projections
                  + 1                       // log temperature
                  + 2 * (2 + 1)             // two 1x1 gates with bias
                  + C * C + C;              // out projection
  } else {
    const std::int64_t projections = 3 * C * C * N;
    cost.macs_attention_core = 2 * C * N * N + N * N;
    cost.macs_total = projections + cost.macs_attention_core + C * C * N;
    cost.params = 4 * (C * C + C);
  }
  return cost;
}

}  // namespace lsat
