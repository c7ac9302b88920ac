// The named gradient-check sweep behind the CLI and the acceptance gate.
// Primitive ops run on small random inputs against the 1e-6 budget
// (softmax composites get 1e-4, per the op tolerances); module and model
// checks sample parameter coordinates against 1e-4. Everything runs at
// 64-bit.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lsat/cisa.hpp"
#include "lsat/gradcheck.hpp"
#include "lsat/loss.hpp"
#include "lsat/network.hpp"
#include "lsat/saem.hpp"

namespace lsat {

struct NamedCheck {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

namespace gradcheck_detail {

inline Tensor<double> away_from_zero(Shape shape, RandomSource& rng, double margin = 0.25) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& e : v) {
    double x = rng.normal();
    if (std::fabs(x) < margin) x = x < 0 ? x - margin : x + margin;
    e = x;
  }
  return Tensor<double>::from(std::move(shape), std::move(v));
}

template <typename F>
NamedCheck run_input_check(const std::string& name, F&& f, const Tensor<double>& x0, double tol) {
  auto report = finite_diff_check(std::forward<F>(f), x0, 1e-5, tol);
  return {name, report.max_rel_err, tol, report.pass};
}

}  // namespace gradcheck_detail

inline std::vector<NamedCheck> gradient_checks_ops(std::uint64_t seed) {
  using gradcheck_detail::away_from_zero;
  using gradcheck_detail::run_input_check;
  RandomSource rng(seed);
  std::vector<NamedCheck> out;
  const double tol = 1e-6;

  auto weighted = [&](Shape shape) {
    return randn<double>(std::move(shape), rng);
  };

  {
    auto x = randn<double>({1, 4, 5, 5}, rng);
    auto w = randn<double>({6, 2, 3, 3}, rng, 0.5);
    auto b = randn<double>({6}, rng);
    auto ws = weighted({1, 6, 3, 3});
    auto loss = [&](const Tensor<double>& xx, const Tensor<double>& ww, const Tensor<double>& bb) {
      return sum_all(mul(conv2d(xx, ww, std::optional<Tensor<double>>(bb), 2, 1, 2), ws));
    };
    out.push_back(run_input_check("conv2d/input",
                                  [&](const Tensor<double>& t) { return loss(t, w, b); }, x, tol));
    out.push_back(run_input_check("conv2d/weight",
                                  [&](const Tensor<double>& t) { return loss(x, t, b); }, w, tol));
    out.push_back(run_input_check("conv2d/bias",
                                  [&](const Tensor<double>& t) { return loss(x, w, t); }, b, tol));
  }
  {
    auto a = randn<double>({2, 3, 4}, rng);
    auto b = randn<double>({2, 4, 2}, rng);
    auto ws = weighted({2, 3, 2});
    out.push_back(run_input_check(
        "matmul_batched/a",
        [&](const Tensor<double>& t) { return sum_all(mul(matmul_batched(t, b), ws)); }, a, tol));
    out.push_back(run_input_check(
        "matmul_batched/b",
        [&](const Tensor<double>& t) { return sum_all(mul(matmul_batched(a, t), ws)); }, b, tol));
  }
  {
    auto x = randn<double>({3, 5}, rng);
    auto ws = weighted({3, 5});
    out.push_back(run_input_check(
        "softmax_lastdim",
        [&](const Tensor<double>& t) { return sum_all(mul(softmax_lastdim(t), ws)); }, x, 1e-4));
  }
  {
    auto x = randn<double>({2, 4, 3, 3}, rng);
    auto g = randn<double>({4}, rng);
    auto b = randn<double>({4}, rng);
    auto ws = weighted({2, 4, 3, 3});
    out.push_back(run_input_check(
        "layer_norm_channels/input",
        [&](const Tensor<double>& t) { return sum_all(mul(layer_norm_channels(t, g, b), ws)); },
        x, 1e-5));
    out.push_back(run_input_check(
        "layer_norm_channels/gamma",
        [&](const Tensor<double>& t) { return sum_all(mul(layer_norm_channels(x, t, b), ws)); },
        g, tol));
  }
  {
    auto x = randn<double>({1, 2, 3, 3}, rng);
    auto ws = weighted({1, 2, 6, 6});
    out.push_back(run_input_check(
        "upsample_bilinear2x",
        [&](const Tensor<double>& t) { return sum_all(mul(upsample_bilinear2x(t), ws)); }, x,
        tol));
  }
  {
    auto x = randn<double>({2, 5, 3}, rng);
    auto ws = weighted({2, 1, 3});
    out.push_back(run_input_check(
        "pool_over_axis/max",
        [&](const Tensor<double>& t) {
          return sum_all(mul(pool_over_axis(t, 1, PoolKind::Max), ws));
        },
        x, tol));
    out.push_back(run_input_check(
        "pool_over_axis/avg",
        [&](const Tensor<double>& t) {
          return sum_all(mul(pool_over_axis(t, 1, PoolKind::Avg), ws));
        },
        x, tol));
  }
  {
    auto x = randn<double>({2, 3, 4}, rng);
    auto other = randn<double>({2, 2, 4}, rng);
    auto ws = weighted({2, 5, 4});
    out.push_back(run_input_check(
        "concat",
        [&](const Tensor<double>& t) { return sum_all(mul(concat<double>({t, other}, 1), ws)); },
        x, tol));
  }
  {
    auto x = randn<double>({3, 4}, rng);
    auto ws = weighted({3, 4});
    auto unary = [&](const char* name, auto op, const Tensor<double>& at) {
      out.push_back(run_input_check(
          name, [&](const Tensor<double>& t) { return sum_all(mul(op(t), ws)); }, at, tol));
    };
    unary("sigmoid", [](const Tensor<double>& t) { return sigmoid(t); }, x);
    unary("gelu", [](const Tensor<double>& t) { return gelu(t); }, x);
    unary("exp", [](const Tensor<double>& t) { return lsat::exp(t); }, x);
    unary("scale", [](const Tensor<double>& t) { return scale(t, -1.7); }, x);
    unary("abs", [](const Tensor<double>& t) { return lsat::abs(t); },
          away_from_zero({3, 4}, rng));
    unary("relu", [](const Tensor<double>& t) { return relu(t); }, away_from_zero({3, 4}, rng));
    auto y = randn<double>({1, 4}, rng);  // broadcast partner
    out.push_back(run_input_check(
        "add/broadcast",
        [&](const Tensor<double>& t) { return sum_all(mul(add(t, y), ws)); }, x, tol));
    out.push_back(run_input_check(
        "mul/broadcast",
        [&](const Tensor<double>& t) { return sum_all(mul(mul(t, y), ws)); }, x, tol));
    auto denom = away_from_zero({3, 4}, rng, 0.5);
    out.push_back(run_input_check(
        "div", [&](const Tensor<double>& t) { return sum_all(mul(div(t, denom), ws)); }, x, tol));
  }
  return out;
}

inline std::vector<NamedCheck> gradient_checks_modules(std::uint64_t seed) {
  RandomSource rng(seed);
  std::vector<NamedCheck> out;
  const double tol = 1e-4;
  {
    CisaConfig cfg;
    cfg.channels = 3;
    auto w = make_block_weights<double>(cfg, rng, "block");
    auto x = randn<double>({1, 3, 4, 4}, rng, 0.5);
    auto ws = randn<double>({1, 3, 4, 4}, rng);
    std::vector<Parameter<double>*> ps;
    w.for_each_param([&](Parameter<double>& p) { ps.push_back(&p); });
    auto report = check_param_gradients(
        [&](Tape<double>* tape) { return sum_all(mul(block_forward(x, w, tape), ws)); }, ps, 40,
        derive_seed(seed, 1), 1e-5, tol);
    out.push_back({"cisa_block", report.max_rel_err, tol, report.pass});
  }
  {
    auto w = make_saem_weights<double>(3, rng, "saem");
    SimamParams p;
    auto f1 = randn<double>({1, 3, 4, 4}, rng);
    auto f2 = randn<double>({1, 3, 4, 4}, rng);
    auto ws = randn<double>({1, 3, 4, 4}, rng);
    std::vector<Parameter<double>*> ps;
    w.for_each_param([&](Parameter<double>& q) { ps.push_back(&q); });
    auto report = check_param_gradients(
        [&](Tape<double>* tape) { return sum_all(mul(saem_forward(f1, f2, w, p, tape), ws)); },
        ps, 40, derive_seed(seed, 2), 1e-5, tol);
    out.push_back({"saem", report.max_rel_err, tol, report.pass});
  }
  {
    auto w = make_afm_weights<double>(4, rng, "afm");
    auto f1 = randn<double>({1, 4, 3, 3}, rng);
    auto f2 = randn<double>({1, 4, 3, 3}, rng);
    auto ws = randn<double>({1, 4, 3, 3}, rng);
    std::vector<Parameter<double>*> ps;
    w.for_each_param([&](Parameter<double>& q) { ps.push_back(&q); });
    auto report = check_param_gradients(
        [&](Tape<double>* tape) { return sum_all(mul(afm_forward(f1, f2, w, tape), ws)); }, ps,
        40, derive_seed(seed, 3), 1e-5, tol);
    out.push_back({"afm", report.max_rel_err, tol, report.pass});
  }
  return out;
}

// Sampled-coordinate check of the full model loss at tile 32. Uses a 1e-4
// step with Richardson extrapolation: tiny steps leave small-gradient
// coordinates dominated by double roundoff in the O(1) loss, while wide
// steps risk straddling a max-pool argmax flip; 1e-4 plus extrapolated
// central differences keeps both failure modes below the budget.
inline std::vector<NamedCheck> gradient_checks_model(std::uint64_t seed) {
  const double tol = 1e-4;
  LsatConfig cfg;
  cfg.stage_channels = {4, 8, 16, 32};
  cfg.stage_depths = {1, 1, 1, 1};
  cfg.tile = 32;
  auto model = make_lsat_model<double>(cfg, derive_seed(seed, 11));
  RandomSource rng(derive_seed(seed, 12));
  auto xa = rand_uniform<double>({1, 3, 32, 32}, rng);
  auto xb = rand_uniform<double>({1, 3, 32, 32}, rng);
  std::vector<double> mask(32 * 32);
  for (auto& v : mask) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
  auto target = Tensor<double>::from({1, 1, 32, 32}, std::move(mask));
  LossConfig loss_cfg;
  auto report = check_param_gradients(
      [&](Tape<double>* tape) {
        return combined_loss(lsat_forward(xa, xb, model, tape), target, loss_cfg);
      },
      model.parameters(), 20, derive_seed(seed, 13), 1e-4, tol, /*richardson=*/true);
  return {{"lsat_loss/sampled_20_coords", report.max_rel_err, tol, report.pass}};
}

inline std::vector<NamedCheck> run_gradient_checks(const std::string& scope, std::uint64_t seed) {
  std::vector<NamedCheck> out;
  if (scope == "op" || scope == "all") {
    auto v = gradient_checks_ops(seed);
    out.insert(out.end(), v.begin(), v.end());
  }
  if (scope == "module" || scope == "all") {
    auto v = gradient_checks_modules(seed);
    out.insert(out.end(), v.begin(), v.end());
  }
  if (scope == "model" || scope == "all") {
    auto v = gradient_checks_model(seed);
    out.insert(out.end(), v.begin(), v.end());
  }
  if (out.empty()) throw std::invalid_argument("run_gradient_checks: unknown scope " + scope);
  return out;
}

}  // namespace lsat
