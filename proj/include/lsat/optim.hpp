// AdamW with decoupled weight decay: the decay shrinks the parameter
// directly, separately from the bias-corrected adaptive step.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsat/tape.hpp"
#include "lsat/tensor.hpp"

namespace lsat {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double weight_decay = 5e-4;
  double eps = 1e-8;

  void validate() const {
    if (!(lr >= 0)) throw std::invalid_argument("AdamWConfig: lr must be non-negative");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      throw std::invalid_argument("AdamWConfig: betas must lie in [0, 1)");
    if (weight_decay < 0) throw std::invalid_argument("AdamWConfig: weight_decay must be >= 0");
    if (!(eps > 0)) throw std::invalid_argument("AdamWConfig: eps must be positive");
  }
};

template <typename S>
class AdamW {
 public:
  AdamW(std::vector<Parameter<S>*> params, AdamWConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto* p : params_) {
      m_.emplace_back(static_cast<std::size_t>(p->value.size()), 0.0);
      v_.emplace_back(static_cast<std::size_t>(p->value.size()), 0.0);
    }
  }

  std::int64_t step_count() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  std::vector<Parameter<S>*>& params() { return params_; }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  // One update from the currently accumulated gradients. A non-finite
  // gradient anywhere rejects the whole step before any state changes.
  void step() {
    for (auto* p : params_)
      for (S g : p->grad.elems())
        if (!std::isfinite(static_cast<double>(g)))
          throw std::runtime_error("AdamW::step rejected: non-finite gradient in " + p->name);
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter<S>* p = params_[i];
      const S* theta = p->value.data();
      const S* grad = p->grad.data();
      std::vector<S> next(static_cast<std::size_t>(p->value.size()));
      for (Index j = 0; j < p->value.size(); ++j) {
        const double g = static_cast<double>(grad[j]);
        double th = static_cast<double>(theta[j]);
        th -= cfg_.lr * cfg_.weight_decay * th;  // decoupled decay
        double& m = m_[i][static_cast<std::size_t>(j)];
        double& v = v_[i][static_cast<std::size_t>(j)];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        th -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        next[static_cast<std::size_t>(j)] = static_cast<S>(th);
      }
      p->value = Tensor<S>::from(p->value.shape(), std::move(next));
    }
  }

 private:
  std::vector<Parameter<S>*> params_;
  AdamWConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;  // first and second moments
};

}  // namespace lsat
