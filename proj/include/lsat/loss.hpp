// Segmentation losses over logits and strictly binary targets.
#pragma once

#include <cmath>
#include <string>
#include <type_traits>

#include "lsat/ops.hpp"
#include "lsat/tape.hpp"

namespace lsat {

struct LossConfig {
  double bce_weight = 1.0;
  double dice_weight = 1.0;
  double dice_smooth = 1.0;

  void validate() const {
    if (bce_weight < 0 || dice_weight < 0)
      throw std::invalid_argument("LossConfig: loss weights must be non-negative");
    if (bce_weight == 0 && dice_weight == 0)
      throw std::invalid_argument("LossConfig: at least one loss weight must be positive");
    if (!(dice_smooth > 0)) throw std::invalid_argument("LossConfig: dice_smooth must be positive");
  }
};

template <typename S>
void require_binary(const Tensor<S>& target, const char* op) {
  const S* t = target.data();
  for (Index i = 0; i < target.size(); ++i)
    if (t[i] != S(0) && t[i] != S(1))
      throw std::invalid_argument(std::string(op) + ": target must be binary, found " +
                                  std::to_string(static_cast<double>(t[i])) + " at index " +
                                  std::to_string(i));
}

// Mean over pixels of the numerically stable logit form
// max(z,0) - z t + log(1 + exp(-|z|)). Fused forward/backward; the gradient
// is (sigmoid(z) - t) / N.
template <typename S>
Tensor<S> bce_with_logits(const Tensor<S>& logits, const Tensor<S>& target) {
  if (logits.shape() != target.shape())
    throw std::invalid_argument("bce_with_logits: logits " + shape_str(logits.shape()) +
                                " and target " + shape_str(target.shape()) + " differ");
  require_binary(target, "bce_with_logits");
  using std::exp;
  using std::log1p;
  const S* z = logits.data();
  const S* t = target.data();
  const Index n = logits.size();
  S acc(0);
  for (Index i = 0; i < n; ++i) {
    const S zi = z[i];
    const S pos = zi > S(0) ? zi : S(0);
    const S azi = zi < S(0) ? -zi : zi;
    acc += pos - zi * t[i] + S(log1p(static_cast<double>(exp(-azi))));
  }
  Tensor<S> out = Tensor<S>::scalar(acc * S(1.0 / static_cast<double>(n)));
  if (Tape<S>* tp = same_tape<S>({&logits})) {
    Index nz = logits.node();
    Tensor<S> zv = logits, tv = target;
    Index node = tp->append("bce_with_logits", out.shape(),
                            [nz, zv, tv, n](Tape<S>& tape, std::span<const S> g) {
                              using std::exp;
                              const S* z = zv.data();
                              const S* t = tv.data();
                              const S inv_n = S(1.0 / static_cast<double>(n));
                              std::vector<S> dz(static_cast<std::size_t>(n));
                              for (Index i = 0; i < n; ++i) {
                                const S s = S(1) / (S(1) + exp(-z[i]));
                                dz[static_cast<std::size_t>(i)] = g[0] * (s - t[i]) * inv_n;
                              }
                              tape.accumulate(nz, std::move(dz));
                            });
    out.attach_record(tp, node);
  }
  return out;
}

// Soft Dice: per batch element 1 - (2 sum(p t) + eps) / (sum p + sum t + eps)
// with p = sigmoid(logits), averaged over the batch. Built from primitives,
// so the gradient comes from the tape.
template <typename S>
Tensor<S> dice_loss(const Tensor<S>& logits, const Tensor<S>& target, double smooth = 1.0) {
  if (logits.shape() != target.shape())
    throw std::invalid_argument("dice_loss: logits " + shape_str(logits.shape()) +
                                " and target " + shape_str(target.shape()) + " differ");
  require_binary(target, "dice_loss");
  if (!(smooth > 0)) throw std::invalid_argument("dice_loss: smooth must be positive");
  const Index B = logits.dim(0);
  const Index n = logits.size() / B;
  auto p = sigmoid(reshape(logits, {B, n}));
  auto t = reshape(target, {B, n});
  auto inter = scale(pool_over_axis(mul(p, t), 1, PoolKind::Avg), static_cast<double>(n));
  auto sum_p = scale(pool_over_axis(p, 1, PoolKind::Avg), static_cast<double>(n));
  auto sum_t = scale(pool_over_axis(t, 1, PoolKind::Avg), static_cast<double>(n));
  auto frac = div(add_scalar(scale(inter, 2.0), smooth), add_scalar(add(sum_p, sum_t), smooth));
  return mean_all(add_scalar(neg(frac), 1.0));
}

template <typename S>
Tensor<S> combined_loss(const Tensor<S>& logits, const Tensor<S>& target,
                        const LossConfig& cfg) {
  cfg.validate();
  if (cfg.dice_weight == 0) return scale(bce_with_logits(logits, target), cfg.bce_weight);
  if (cfg.bce_weight == 0)
    return scale(dice_loss(logits, target, cfg.dice_smooth), cfg.dice_weight);
  return add(scale(bce_with_logits(logits, target), cfg.bce_weight),
             scale(dice_loss(logits, target, cfg.dice_smooth), cfg.dice_weight));
}

}  // namespace lsat
