// Structure-aware enhancement between encoder and decoder: a difference
// refinement branch and a detail aggregation branch, both built on the
// parameter-free SimAM attention, plus the attention-based fusion applied to
// the deepest bi-temporal features.
//
// The shared 3x3 pre-convolution is applied identically to both temporal
// streams; that is what makes diff_refine symmetric under swapping its
// inputs and exactly zero on identical inputs.
#pragma once

#include <string>
#include <type_traits>

#include "lsat/layers.hpp"
#include "lsat/ops.hpp"
#include "lsat/random.hpp"
#include "lsat/tape.hpp"

namespace lsat {

struct SimamParams {
  double lambda_s = 1e-4;

  void validate() const {
    if (!(lambda_s > 0)) throw std::invalid_argument("SimamParams: lambda_s must be positive");
  }
};

// Per-channel energy weights: sigmoid((x - mu)^2 / (4 (v + lambda)) + 1/2)
// with mu the spatial mean and v the spatial variance over n = HW - 1.
template <typename S>
Tensor<S> simam_attention(const Tensor<S>& x, const SimamParams& p) {
  p.validate();
  if (x.rank() != 4)
    throw std::invalid_argument("simam: input must be BCHW, got " + shape_str(x.shape()));
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index N = H * W;
  if (N < 2)
    throw std::invalid_argument("simam: spatial size must be at least 2, got " +
                                shape_str(x.shape()));
  auto flat = reshape(x, {B, C, N});
  auto mu = reshape(pool_over_axis(flat, 2, PoolKind::Avg), {B, C, 1, 1});
  auto d = sub(x, mu);
  auto d2 = mul(d, d);
  auto var = scale(pool_over_axis(reshape(d2, {B, C, N}), 2, PoolKind::Avg),
                   static_cast<double>(N) / static_cast<double>(N - 1));
  auto denom = scale(add_scalar(reshape(var, {B, C, 1, 1}), p.lambda_s), 4.0);
  return sigmoid(add_scalar(div(d2, denom), 0.5));
}

template <typename S>
Tensor<S> simam(const Tensor<S>& x, const SimamParams& p) {
  return mul(simam_attention(x, p), x);
}

template <typename S>
struct SaemWeights {
  Conv2dLayer<S> pre_conv;       // 3x3 C->C, shared by both temporal inputs
  Conv2dLayer<S> reduce_1x1;     // 1x1 C->C closing the additive pathway
  Conv2dLayer<S> concat_reduce;  // 1x1 2C->C ahead of attention on the concat pathway

  template <typename F>
  void for_each_param(F&& f) {
    pre_conv.for_each_param(f);
    reduce_1x1.for_each_param(f);
    concat_reduce.for_each_param(f);
  }

  Index param_count() const {
    return pre_conv.param_count() + reduce_1x1.param_count() + concat_reduce.param_count();
  }
};

template <typename S>
SaemWeights<S> make_saem_weights(Index channels, RandomSource& rng, const std::string& name) {
  SaemWeights<S> w;
  w.pre_conv = make_conv<S>(rng, name + ".pre_conv", channels, channels, 3, 1, 1, 1, true);
  w.reduce_1x1 = make_conv<S>(rng, name + ".reduce_1x1", channels, channels, 1, 1, 0, 1, true);
  w.concat_reduce =
      make_conv<S>(rng, name + ".concat_reduce", channels, 2 * channels, 1, 1, 0, 1, true);
  return w;
}

namespace detail {

template <typename S>
void check_pair(const Tensor<S>& f1, const Tensor<S>& f2, const char* op) {
  if (f1.shape() != f2.shape())
    throw std::invalid_argument(std::string(op) + ": temporal inputs disagree, " +
                                shape_str(f1.shape()) + " vs " + shape_str(f2.shape()));
}

// Difference refinement on pre-convolved features.
template <typename S>
Tensor<S> diff_refine_pre(const Tensor<S>& c1, const Tensor<S>& c2, const SimamParams& p) {
  return simam(lsat::abs(sub(simam(c1, p), simam(c2, p))), p);
}

}  // namespace detail

template <typename S>
Tensor<S> diff_refine(const Tensor<S>& f1, const Tensor<S>& f2, SaemWeights<S>& w,
                      const SimamParams& p, Tape<std::type_identity_t<S>>* tape) {
  detail::check_pair(f1, f2, "diff_refine");
  return detail::diff_refine_pre(w.pre_conv.apply(f1, tape), w.pre_conv.apply(f2, tape), p);
}

template <typename S>
Tensor<S> aggr_path_add(const Tensor<S>& f1, const Tensor<S>& f2, SaemWeights<S>& w,
                        Tape<std::type_identity_t<S>>* tape) {
  detail::check_pair(f1, f2, "aggr_path_add");
  return w.reduce_1x1.apply(add(w.pre_conv.apply(f1, tape), w.pre_conv.apply(f2, tape)), tape);
}

template <typename S>
Tensor<S> aggr_path_concat(const Tensor<S>& f1, const Tensor<S>& f2, SaemWeights<S>& w,
                           const SimamParams& p, Tape<std::type_identity_t<S>>* tape) {
  detail::check_pair(f1, f2, "aggr_path_concat");
  auto stacked = concat<S>({w.pre_conv.apply(f1, tape), w.pre_conv.apply(f2, tape)}, 1);
  return simam(w.concat_reduce.apply(stacked, tape), p);
}

template <typename S>
Tensor<S> detail_aggregate(const Tensor<S>& f_a1, const Tensor<S>& f_a2, const SimamParams& p) {
  detail::check_pair(f_a1, f_a2, "detail_aggregate");
  return simam(add(f_a1, simam(f_a2, p)), p);
}

// Both branches over one shared pair of pre-convolutions, summed.
template <typename S>
Tensor<S> saem_forward(const Tensor<S>& f1, const Tensor<S>& f2, SaemWeights<S>& w,
                       const SimamParams& p, Tape<std::type_identity_t<S>>* tape) {
  detail::check_pair(f1, f2, "saem_forward");
  auto c1 = w.pre_conv.apply(f1, tape);
  auto c2 = w.pre_conv.apply(f2, tape);
  auto f_diff = detail::diff_refine_pre(c1, c2, p);
  auto f_a1 = w.reduce_1x1.apply(add(c1, c2), tape);
  auto f_a2 = simam(w.concat_reduce.apply(concat<S>({c1, c2}, 1), tape), p);
  auto f_aggr = simam(add(f_a1, simam(f_a2, p)), p);
  return add(f_diff, f_aggr);
}

// ---------------------------------------------------------------------------
// Attention-based fusion of the deepest bi-temporal features
// ---------------------------------------------------------------------------

template <typename S>
struct AfmWeights {
  Conv2dLayer<S> fuse_reduce;   // 1x1 2C->C
  Conv2dLayer<S> gate_down;     // 1x1 C->C/r on the pooled descriptor
  Conv2dLayer<S> gate_up;       // 1x1 C/r->C
  Conv2dLayer<S> spatial_gate;  // 1x1 2->1 over stacked channel max/avg maps

  template <typename F>
  void for_each_param(F&& f) {
    fuse_reduce.for_each_param(f);
    gate_down.for_each_param(f);
    gate_up.for_each_param(f);
    spatial_gate.for_each_param(f);
  }
};

template <typename S>
AfmWeights<S> make_afm_weights(Index channels, RandomSource& rng, const std::string& name,
                               Index reduction = 4) {
  if (channels % reduction != 0)
    throw std::invalid_argument("make_afm_weights: channel count " + std::to_string(channels) +
                                " not divisible by reduction " + std::to_string(reduction));
  AfmWeights<S> w;
  w.fuse_reduce = make_conv<S>(rng, name + ".fuse_reduce", channels, 2 * channels, 1, 1, 0, 1, true);
  w.gate_down =
      make_conv<S>(rng, name + ".gate_down", channels / reduction, channels, 1, 1, 0, 1, true);
  w.gate_up =
      make_conv<S>(rng, name + ".gate_up", channels, channels / reduction, 1, 1, 0, 1, true);
  w.spatial_gate = make_conv<S>(rng, name + ".spatial_gate", 1, 2, 1, 1, 0, 1, true);
  return w;
}

// g = fuse([f1;f2]); output = g * channel gate * spatial gate, both gates
// computed from g itself.
template <typename S>
Tensor<S> afm_forward(const Tensor<S>& f1, const Tensor<S>& f2, AfmWeights<S>& w,
                      Tape<std::type_identity_t<S>>* tape) {
  detail::check_pair(f1, f2, "afm_forward");
  auto g = w.fuse_reduce.apply(concat<S>({f1, f2}, 1), tape);
  auto desc = pool_over_axis(pool_over_axis(g, 2, PoolKind::Avg), 3, PoolKind::Avg);
  auto channel_gate = sigmoid(w.gate_up.apply(relu(w.gate_down.apply(desc, tape)), tape));
  auto ch_max = pool_over_axis(g, 1, PoolKind::Max);
  auto ch_avg = pool_over_axis(g, 1, PoolKind::Avg);
  auto spatial_gate = sigmoid(w.spatial_gate.apply(concat<S>({ch_max, ch_avg}, 1), tape));
  return mul(mul(g, channel_gate), spatial_gate);
}

}  // namespace lsat
