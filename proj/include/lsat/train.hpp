// Training and evaluation loops over bi-temporal samples.
#pragma once

#include <cstdint>
#include <type_traits>
#include <vector>

#include "lsat/data.hpp"
#include "lsat/loss.hpp"
#include "lsat/metrics.hpp"
#include "lsat/network.hpp"
#include "lsat/optim.hpp"

namespace lsat {

namespace train_detail {

template <typename S>
Tensor<S> stack_chw(const std::vector<const Tensor<float>*>& items) {
  const Index B = static_cast<Index>(items.size());
  const Index C = items[0]->dim(0), H = items[0]->dim(1), W = items[0]->dim(2);
  std::vector<S> buf(static_cast<std::size_t>(B * C * H * W));
  for (Index b = 0; b < B; ++b) {
    const float* src = items[static_cast<std::size_t>(b)]->data();
    S* dst = buf.data() + b * C * H * W;
    for (Index i = 0; i < C * H * W; ++i) dst[i] = static_cast<S>(src[i]);
  }
  return Tensor<S>::from({B, C, H, W}, std::move(buf));
}

template <typename S>
struct Batch {
  Tensor<S> xa, xb, mask;
};

template <typename S>
Batch<S> make_batch(const std::vector<BiTemporalSample>& samples,
                    const std::vector<Index>& order, Index begin, Index end) {
  std::vector<const Tensor<float>*> a, b, m;
  for (Index i = begin; i < end; ++i) {
    const auto& s = samples[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    a.push_back(&s.image_a);
    b.push_back(&s.image_b);
    m.push_back(&s.mask);
  }
  return {stack_chw<S>(a), stack_chw<S>(b), stack_chw<S>(m)};
}

}  // namespace train_detail

// One pass over the dataset in a seed-determined order. When an augmentation
// config is given, each sample gets a fresh seed-derived transform. Returns
// the sample-weighted mean loss.
template <typename S>
double train_epoch(LsatModel<S>& model, const std::vector<BiTemporalSample>& samples,
                   AdamW<S>& optim, const LossConfig& loss_cfg, std::uint64_t seed,
                   Index batch_size = 4, const AugmentationConfig* augment_cfg = nullptr) {
  if (samples.empty()) throw std::invalid_argument("train_epoch: empty dataset");
  if (batch_size < 1) throw std::invalid_argument("train_epoch: batch_size must be >= 1");
  loss_cfg.validate();
  const Index n = static_cast<Index>(samples.size());
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  RandomSource rng(seed);
  for (Index i = n; i > 1; --i)
    std::swap(order[static_cast<std::size_t>(i - 1)],
              order[static_cast<std::size_t>(rng.uniform_int(0, i - 1))]);

  std::vector<BiTemporalSample> augmented;
  const std::vector<BiTemporalSample>* source = &samples;
  if (augment_cfg) {
    augmented.reserve(samples.size());
    for (Index i = 0; i < n; ++i)
      augmented.push_back(augment(samples[static_cast<std::size_t>(i)], *augment_cfg,
                                  derive_seed(seed, 0x517cc1b7ull + static_cast<std::uint64_t>(i))));
    source = &augmented;
  }

  double loss_sum = 0.0;
  for (Index begin = 0; begin < n; begin += batch_size) {
    const Index end = std::min(begin + batch_size, n);
    auto batch = train_detail::make_batch<S>(*source, order, begin, end);
    Tape<S> tape;
    auto logits = lsat_forward(batch.xa, batch.xb, model, &tape);
    auto loss = combined_loss(logits, batch.mask, loss_cfg);
    tape.backward(loss);
    optim.step();
    optim.zero_grad();
    loss_sum += static_cast<double>(loss.item()) * static_cast<double>(end - begin);
  }
  return loss_sum / static_cast<double>(n);
}

// Confusion accumulation over every pixel of every sample at the given
// probability threshold.
template <typename S>
MetricsReport evaluate(LsatModel<S>& model, const std::vector<BiTemporalSample>& samples,
                       double threshold = 0.5, Index batch_size = 8) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const Index n = static_cast<Index>(samples.size());
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  ConfusionCounts counts;
  for (Index begin = 0; begin < n; begin += batch_size) {
    const Index end = std::min(begin + batch_size, n);
    auto batch = train_detail::make_batch<S>(samples, order, begin, end);
    auto logits = lsat_forward(batch.xa, batch.xb, model, static_cast<Tape<S>*>(nullptr));
    accumulate_confusion(counts, logits, batch.mask, threshold);
  }
  return derive_metrics(counts);
}

// Change probability map and thresholded binary mask for one pair.
inline std::pair<Tensor<float>, Tensor<float>> predict_pair(LsatModel<float>& model,
                                                            const BiTemporalSample& sample,
                                                            double threshold = 0.5) {
  std::vector<const Tensor<float>*> a{&sample.image_a}, b{&sample.image_b};
  auto logits = lsat_forward(train_detail::stack_chw<float>(a),
                             train_detail::stack_chw<float>(b), model,
                             static_cast<Tape<float>*>(nullptr));
  auto prob4 = sigmoid(logits);
  auto prob = reshape(prob4, {1, prob4.dim(2), prob4.dim(3)});
  std::vector<float> mask(static_cast<std::size_t>(prob.size()));
  for (Index i = 0; i < prob.size(); ++i)
    mask[static_cast<std::size_t>(i)] = prob.data()[i] >= threshold ? 1.0f : 0.0f;
  return {prob, Tensor<float>::from(prob.shape(), std::move(mask))};
}

}  // namespace lsat
