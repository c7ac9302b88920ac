// Central finite-difference gradient checking. Everything runs at 64-bit;
// the relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lsat/ops.hpp"
#include "lsat/random.hpp"
#include "lsat/tape.hpp"
#include "lsat/tensor.hpp"

namespace lsat {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  Index worst_index = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::string note;
};

inline double rel_err(double analytic, double numeric) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
  return std::fabs(analytic - numeric) / denom;
}

// f maps a tensor to a scalar tensor; when the argument is recorded, the
// whole computation must record on its tape. Checks d f / d x at x0 by
// central differences, optionally restricted to a coordinate subset.
template <typename F>
GradCheckReport finite_diff_check(F&& f, const Tensor<double>& x0, double h = 1e-5,
                                  double tol = 1e-6, std::span<const Index> coords = {}) {
  GradCheckReport report;
  Tape<double> tape;
  Tensor<double> xw = tape.watch(x0);
  Tensor<double> loss = f(xw);
  if (loss.size() != 1) {
    report.note = "function is not scalar-valued";
    return report;
  }
  tape.backward(loss);
  Tensor<double> analytic = tape.grad(xw);

  std::vector<Index> all;
  if (coords.empty()) {
    all.resize(static_cast<std::size_t>(x0.size()));
    for (Index i = 0; i < x0.size(); ++i) all[static_cast<std::size_t>(i)] = i;
    coords = all;
  }
  report.pass = true;
  for (Index i : coords) {
    const double base = x0.data()[i];
    const double fp = f(with_value_at(x0, i, base + h)).item();
    const double fm = f(with_value_at(x0, i, base - h)).item();
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      report.pass = false;
      report.worst_index = i;
      report.note = "non-finite value at coordinate " + std::to_string(i);
      return report;
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic.data()[i];
    const double e = rel_err(a, numeric);
    if (e > report.max_rel_err) {
      report.max_rel_err = e;
      report.worst_index = i;
      report.analytic_at_worst = a;
      report.numeric_at_worst = numeric;
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

// Checks a loss over a set of parameters: one analytic backward pass, then
// central differences on sampled (parameter, coordinate) pairs obtained by
// temporarily swapping the parameter value.
//
// loss_fn(tape) must rebuild the forward from current parameter values,
// watching parameters on the tape when one is given.
// With richardson set, the central difference is evaluated at h and h/2 and
// extrapolated ((4 D(h/2) - D(h)) / 3), cancelling the h^2 truncation term;
// useful for deep compositions whose sampled coordinates can carry very
// small gradients.
template <typename LossFn>
GradCheckReport check_param_gradients(LossFn&& loss_fn,
                                      const std::vector<Parameter<double>*>& params,
                                      Index sample_count, std::uint64_t seed, double h = 1e-5,
                                      double tol = 1e-4, bool richardson = false) {
  GradCheckReport report;
  zero_grads(params);
  {
    Tape<double> tape;
    Tensor<double> loss = loss_fn(&tape);
    if (loss.size() != 1) {
      report.note = "loss is not scalar";
      return report;
    }
    tape.backward(loss);
  }

  Index total = 0;
  for (auto* p : params) total += p->value.size();
  if (total == 0) {
    report.note = "no parameters";
    return report;
  }
  RandomSource rng(seed);
  report.pass = true;
  for (Index s = 0; s < sample_count; ++s) {
    Index flat = rng.uniform_int(0, total - 1);
    Parameter<double>* p = nullptr;
    for (auto* cand : params) {
      if (flat < cand->value.size()) {
        p = cand;
        break;
      }
      flat -= cand->value.size();
    }
    const Tensor<double> saved = p->value;
    const double base = saved.data()[flat];
    auto central = [&](double step) {
      p->value = with_value_at(saved, flat, base + step);
      const double fp = loss_fn(static_cast<Tape<double>*>(nullptr)).item();
      p->value = with_value_at(saved, flat, base - step);
      const double fm = loss_fn(static_cast<Tape<double>*>(nullptr)).item();
      return (fp - fm) / (2.0 * step);
    };
    const double d_h = central(h);
    const double numeric = richardson ? (4.0 * central(h / 2.0) - d_h) / 3.0 : d_h;
    p->value = saved;
    if (!std::isfinite(numeric)) {
      report.pass = false;
      report.worst_index = flat;
      report.note = "non-finite loss while perturbing " + p->name;
      return report;
    }
    const double analytic = p->grad.data()[flat];
    const double e = rel_err(analytic, numeric);
    if (e > report.max_rel_err) {
      report.max_rel_err = e;
      report.worst_index = flat;
      report.analytic_at_worst = analytic;
      report.numeric_at_worst = numeric;
      report.note = p->name + "[" + std::to_string(flat) + "]";
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace lsat
