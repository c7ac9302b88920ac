// Small reusable weight bundles. Kernels are initialized from a fan-in
// scaled normal (std = sqrt(1/fan_in)), biases and norm offsets at zero.
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>

#include "lsat/ops.hpp"
#include "lsat/random.hpp"
#include "lsat/tape.hpp"

namespace lsat {

template <typename S>
struct Conv2dLayer {
  Parameter<S> weight;                 // O, I, Kh, Kw
  std::optional<Parameter<S>> bias;    // O
  Index stride = 1;
  Index pad = 0;
  Index groups = 1;

  Tensor<S> apply(const Tensor<S>& x, Tape<S>* tape) {
    auto w = use(tape, weight);
    if (bias)
      return conv2d(x, w, std::optional<Tensor<S>>(use(tape, *bias)), stride, pad, groups);
    return conv2d(x, w, std::optional<Tensor<S>>{}, stride, pad, groups);
  }

  template <typename F>
  void for_each_param(F&& f) {
    f(weight);
    if (bias) f(*bias);
  }

  Index param_count() const { return weight.value.size() + (bias ? bias->value.size() : 0); }
};

template <typename S>
Conv2dLayer<S> make_conv(RandomSource& rng, const std::string& name, Index out_c, Index in_c,
                         Index k, Index stride, Index pad, Index groups, bool with_bias) {
  Conv2dLayer<S> layer;
  const Index in_per_group = in_c / groups;
  const double std = std::sqrt(1.0 / static_cast<double>(in_per_group * k * k));
  layer.weight = Parameter<S>(randn<S>({out_c, in_per_group, k, k}, rng, std), name + ".weight");
  if (with_bias) layer.bias = Parameter<S>(Tensor<S>::zeros({out_c}), name + ".bias");
  layer.stride = stride;
  layer.pad = pad;
  layer.groups = groups;
  return layer;
}

template <typename S>
struct LayerNormLayer {
  Parameter<S> gamma;
  Parameter<S> beta;
  double eps = 1e-5;

  Tensor<S> apply(const Tensor<S>& x, Tape<S>* tape) {
    return layer_norm_channels(x, use(tape, gamma), use(tape, beta), eps);
  }

  template <typename F>
  void for_each_param(F&& f) {
    f(gamma);
    f(beta);
  }
};

template <typename S>
LayerNormLayer<S> make_layer_norm(const std::string& name, Index channels) {
  LayerNormLayer<S> layer;
  layer.gamma = Parameter<S>(Tensor<S>::full({channels}, S(1)), name + ".gamma");
  layer.beta = Parameter<S>(Tensor<S>::zeros({channels}), name + ".beta");
  return layer;
}

}  // namespace lsat
