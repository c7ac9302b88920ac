// Differentiable tensor primitives. Every op validates its inputs, computes
// the forward value, and (when any input is recorded) appends a backward
// closure to the shared tape.
//
// Multiply accounting contract: the static cost profiler mirrors these
// implementations, so each op performs a fixed, documented number of scalar
// multiplications. Contractions (conv2d, matmul) multiply padded zeros like
// their GEMM formulation; divisions and transcendental calls are not
// multiplies. The generic loop path is the reference semantics; float/double
// route contractions through Eigen, which computes the same products.
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "lsat/tape.hpp"
#include "lsat/tensor.hpp"

namespace lsat {

namespace detail {

template <typename S>
constexpr bool kUseEigen = std::is_same_v<S, float> || std::is_same_v<S, double>;

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Shape pad_left(const Shape& s, std::size_t rank) {
  Shape out(rank, 1);
  std::copy(s.begin(), s.end(), out.begin() + (rank - s.size()));
  return out;
}

// Standard trailing-axis broadcasting.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  std::size_t rank = std::max(a.size(), b.size());
  Shape pa = pad_left(a, rank), pb = pad_left(b, rank), out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i] || pa[i] == 1 || pb[i] == 1) {
      out[i] = std::max(pa[i], pb[i]);
    } else {
      throw std::invalid_argument("shapes " + shape_str(a) + " and " + shape_str(b) +
                                  " are not broadcast-compatible on axis " + std::to_string(i));
    }
  }
  return out;
}

// Strides of `from` viewed through `out` (0 on broadcast axes).
inline std::vector<Index> broadcast_strides(const Shape& from, const Shape& out) {
  Shape pf = pad_left(from, out.size());
  auto strides = row_major_strides(pf);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (pf[i] == 1 && out[i] != 1) strides[i] = 0;
  return strides;
}

// Walks the output index space with an odometer, exposing the flat offsets
// of both operands.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<Index>& sa,
                        const std::vector<Index>& sb, F&& f) {
  const Index n = numel(out);
  const std::size_t rank = out.size();
  std::vector<Index> idx(rank, 0);
  Index offa = 0, offb = 0;
  for (Index i = 0; i < n; ++i) {
    f(i, offa, offb);
    for (std::size_t r = rank; r-- > 0;) {
      ++idx[r];
      offa += sa[r];
      offb += sb[r];
      if (idx[r] < out[r]) break;
      offa -= sa[r] * out[r];
      offb -= sb[r] * out[r];
      idx[r] = 0;
    }
  }
}

// Sums `g` (laid out as g_shape) down to target_shape. Inverse of broadcast.
template <typename S>
std::vector<S> reduce_to_shape(std::span<const S> g, const Shape& g_shape,
                               const Shape& target_shape) {
  std::vector<S> out(static_cast<std::size_t>(numel(target_shape)), S(0));
  auto st = broadcast_strides(target_shape, g_shape);
  auto sg = row_major_strides(g_shape);
  for_each_broadcast(g_shape, st, sg,
                     [&](Index, Index t_off, Index g_off) { out[t_off] += g[g_off]; });
  return out;
}

template <typename S>
void require_finite_free_of_nan(const Tensor<S>& x, const char* op) {
  for (const S& v : x.elems())
    if (v != v) throw std::invalid_argument(std::string(op) + ": NaN input rejected");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Structure ops
// ---------------------------------------------------------------------------

// Zero-copy: shares the buffer. 0 multiplies.
template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape) {
  check_shape_valid(new_shape);
  if (numel(new_shape) != x.size())
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                shape_str(new_shape));
  Tensor<S> out = Tensor<S>::from_buffer(new_shape, x.buffer());
  if (Tape<S>* tp = same_tape<S>({&x})) {
    Index nx = x.node();
    Index node = tp->append("reshape", out.shape(), [nx](Tape<S>& t, std::span<const S> g) {
      t.accumulate(nx, g);
    });
    out.attach_record(tp, node);
  }
  return out;
}

namespace detail {
template <typename S>
std::vector<S> permute_buffer(std::span<const S> src, const Shape& in_shape,
                              const std::vector<Index>& axes, Shape& out_shape) {
  out_shape.resize(in_shape.size());
  for (std::size_t i = 0; i < axes.size(); ++i)
    out_shape[i] = in_shape[static_cast<std::size_t>(axes[i])];
  auto in_strides = row_major_strides(in_shape);
  std::vector<Index> gather(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i)
    gather[i] = in_strides[static_cast<std::size_t>(axes[i])];
  std::vector<S> out(src.size());
  std::vector<Index> idx(out_shape.size(), 0);
  Index off = 0;
  const Index n = numel(out_shape);
  for (Index i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = src[static_cast<std::size_t>(off)];
    for (std::size_t r = out_shape.size(); r-- > 0;) {
      ++idx[r];
      off += gather[r];
      if (idx[r] < out_shape[r]) break;
      off -= gather[r] * out_shape[r];
      idx[r] = 0;
    }
  }
  return out;
}
}  // namespace detail

// Logical transposition; gradient is the inverse permutation. 0 multiplies.
template <typename S>
Tensor<S> permute(const Tensor<S>& x, const std::vector<Index>& axes) {
  const std::size_t rank = x.shape().size();
  if (axes.size() != rank)
    throw std::invalid_argument("permute: axes rank " + std::to_string(axes.size()) +
                                " does not match tensor rank " + std::to_string(rank));
  std::vector<bool> seen(rank, false);
  for (Index a : axes) {
    if (a < 0 || a >= static_cast<Index>(rank) || seen[static_cast<std::size_t>(a)])
      throw std::invalid_argument("permute: axes are not a permutation of 0.." +
                                  std::to_string(rank - 1));
    seen[static_cast<std::size_t>(a)] = true;
  }
  Shape out_shape;
  auto buf = detail::permute_buffer<S>(x.elems(), x.shape(), axes, out_shape);
  Tensor<S> out = Tensor<S>::from(out_shape, std::move(buf));
  if (Tape<S>* tp = same_tape<S>({&x})) {
    Index nx = x.node();
    std::vector<Index> inverse(rank);
    for (std::size_t i = 0; i < rank; ++i) inverse[static_cast<std::size_t>(axes[i])] = i;
    Shape g_shape = out.shape();
    Index node = tp->append("permute", out.shape(),
                            [nx, inverse, g_shape](Tape<S>& t, std::span<const S> g) {
                              Shape back_shape;
                              auto dx = detail::permute_buffer<S>(g, g_shape, inverse, back_shape);
                              t.accumulate(nx, std::move(dx));
                            });
    out.attach_record(tp, node);
  }
  return out;
}

// Contiguous sub-range along one axis. 0 multiplies.
template <typename S>
Tensor<S> narrow(const Tensor<S>& x, Index axis, Index start, Index len) {
  if (axis < 0 || axis >= x.rank())
    throw std::invalid_argument("narrow: axis out of range for " + shape_str(x.shape()));
  const Index d = x.dim(axis);
  if (start < 0 || len <= 0 || start + len > d)
    throw std::invalid_argument("narrow: range [" + std::to_string(start) + ", " +
                                std::to_string(start + len) + ") out of bounds for axis size " +
                                std::to_string(d));
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= x.dim(i);
  for (Index i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  std::vector<S> buf(static_cast<std::size_t>(numel(out_shape)));
  const S* src = x.data();
  for (Index o = 0; o < outer; ++o)
    std::copy_n(src + (o * d + start) * inner, len * inner, buf.data() + o * len * inner);
  Tensor<S> out = Tensor<S>::from(out_shape, std::move(buf));
  if (Tape<S>* tp = same_tape<S>({&x})) {
    Index nx = x.node();
    Index x_numel = x.size();
    Index node = tp->append(
        "narrow", out.shape(),
        [nx, outer, inner, d, start, len, x_numel](Tape<S>& t, std::span<const S> g) {
          std::vector<S> dx(static_cast<std::size_t>(x_numel), S(0));
          for (Index o = 0; o < outer; ++o)
            for (Index j = 0; j < len * inner; ++j)
              dx[static_cast<std::size_t>((o * d + start) * inner + j)] =
                  g[static_cast<std::size_t>(o * len * inner + j)];
          t.accumulate(nx, std::move(dx));
        });
    out.attach_record(tp, node);
  }
  return out;
}

// Concatenation along one axis; gradient splits by the same offsets.
// 0 multiplies.
template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& xs, Index axis) {
  if (xs.empty()) throw std::invalid_argument("concat: empty input list");
  const Index rank = xs[0].rank();
  if (axis < 0 || axis >= rank)
    throw std::invalid_argument("concat: axis out of range for " + shape_str(xs[0].shape()));
  Shape out_shape = xs[0].shape();
  Index axis_total = 0;
  for (const auto& t : xs) {
    if (t.rank() != rank)
      throw std::invalid_argument("concat: rank mismatch between inputs");
    for (Index i = 0; i < rank; ++i)
      if (i != axis && t.dim(i) != out_shape[static_cast<std::size_t>(i)])
        throw std::invalid_argument("concat: inputs disagree on non-concat axis " +
                                    std::to_string(i) + ": " + shape_str(out_shape) + " vs " +
                                    shape_str(t.shape()));
    axis_total += t.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = axis_total;
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < rank; ++i) inner *= out_shape[static_cast<std::size_t>(i)];
  std::vector<S> buf(static_cast<std::size_t>(numel(out_shape)));
  Index offset = 0;
  for (const auto& t : xs) {
    const Index block = t.dim(axis) * inner;
    for (Index o = 0; o < outer; ++o)
      std::copy_n(t.data() + o * block, block, buf.data() + o * axis_total * inner + offset * inner);
    offset += t.dim(axis);
  }
  Tensor<S> out = Tensor<S>::from(out_shape, std::move(buf));
  Tape<S>* tp = nullptr;
  for (const auto& t : xs) {
    Tape<S>* tt = same_tape<S>({&t});
    if (tt && tp && tt != tp) throw std::logic_error("concat: inputs on different tapes");
    if (tt) tp = tt;
  }
  if (tp) {
    struct Part {
      Index node, dim;
    };
    std::vector<Part> parts;
    parts.reserve(xs.size());
    for (const auto& t : xs) parts.push_back({t.recorded() ? t.node() : -1, t.dim(axis)});
    Index node = tp->append(
        "concat", out.shape(),
        [parts, outer, inner, axis_total](Tape<S>& t, std::span<const S> g) {
          Index offset = 0;
          for (const auto& p : parts) {
            if (p.node >= 0) {
              std::vector<S> dx(static_cast<std::size_t>(outer * p.dim * inner));
              for (Index o = 0; o < outer; ++o)
                std::copy_n(g.data() + o * axis_total * inner + offset * inner, p.dim * inner,
                            dx.data() + o * p.dim * inner);
              t.accumulate(p.node, std::move(dx));
            }
            offset += p.dim;
          }
        });
    out.attach_record(tp, node);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

// Generic broadcast binary op with fused gradient reduction.
template <typename S, typename FwdF, typename BackF>
Tensor<S> binary_op(const char* name, const Tensor<S>& x, const Tensor<S>& y, FwdF fwd,
                    BackF back) {
  Shape out_shape = broadcast_shape(x.shape(), y.shape());
  auto sx = broadcast_strides(x.shape(), out_shape);
  auto sy = broadcast_strides(y.shape(), out_shape);
  std::vector<S> buf(static_cast<std::size_t>(numel(out_shape)));
  const S* xp = x.data();
  const S* yp = y.data();
  for_each_broadcast(out_shape, sx, sy, [&](Index i, Index ox, Index oy) {
    buf[static_cast<std::size_t>(i)] = fwd(xp[ox], yp[oy]);
  });
  Tensor<S> out = Tensor<S>::from(out_shape, std::move(buf));
  if (Tape<S>* tp = same_tape<S>({&x, &y})) {
    Index nx = x.recorded() ? x.node() : -1;
    Index ny = y.recorded() ? y.node() : -1;
    Tensor<S> xv = x, yv = y;
    Index node = tp->append(
        name, out.shape(), [nx, ny, xv, yv, out_shape, sx, sy, back](Tape<S>& t, std::span<const S> g) {
          std::vector<S> dx, dy;
          if (nx >= 0) dx.assign(static_cast<std::size_t>(xv.size()), S(0));
          if (ny >= 0) dy.assign(static_cast<std::size_t>(yv.size()), S(0));
          const S* xp = xv.data();
          const S* yp = yv.data();
          for_each_broadcast(out_shape, sx, sy, [&](Index i, Index ox, Index oy) {
            auto [gx, gy] = back(g[static_cast<std::size_t>(i)], xp[ox], yp[oy]);
            if (nx >= 0) dx[static_cast<std::size_t>(ox)] += gx;
            if (ny >= 0) dy[static_cast<std::size_t>(oy)] += gy;
          });
          if (nx >= 0) t.accumulate(nx, std::move(dx));
          if (ny >= 0) t.accumulate(ny, std::move(dy));
        });
    out.attach_record(tp, node);
  }
  return out;
}

template <typename S, typename FwdF, typename BackF>
Tensor<S> unary_op(const char* name, const Tensor<S>& x, FwdF fwd, BackF back) {
  std::vector<S> buf(static_cast<std::size_t>(x.size()));
  const S* xp = x.data();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = fwd(xp[i]);
  Tensor<S> out = Tensor<S>::from(x.shape(), std::move(buf));
  if (Tape<S>* tp = same_tape<S>({&x})) {
    Index nx = x.node();
    auto xbuf = x.buffer();
    auto obuf = out.buffer();
    Index node =
        tp->append(name, out.shape(), [nx, xbuf, obuf, back](Tape<S>& t, std::span<const S> g) {
          const auto& xs = *xbuf;
          const auto& os = *obuf;
          std::vector<S> dx(xs.size());
          for (std::size_t i = 0; i < xs.size(); ++i) dx[i] = back(g[i], xs[i], os[i]);
          t.accumulate(nx, std::move(dx));
        });
    out.attach_record(tp, node);
  }
  return out;
}

}  // namespace detail

// add/sub: 0 multiplies each. mul: 1 multiply per output element.
// div: division, 0 multiplies.
template <typename S>
Tensor<S> add(const Tensor<S>& x, const Tensor<S>& y) {
  return detail::binary_op<S>(
      "add", x, y, [](S a, S b) { return a + b; },
      [](S g, S, S) { return std::pair<S, S>(g, g); });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& x, const Tensor<S>& y) {
  return detail::binary_op<S>(
      "sub", x, y, [](S a, S b) { return a - b; },
      [](S g, S, S) { return std::pair<S, S>(g, -g); });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& x, const Tensor<S>& y) {
  return detail::binary_op<S>(
      "mul", x, y, [](S a, S b) { return a * b; },
      [](S g, S a, S b) { return std::pair<S, S>(g * b, g * a); });
}

template <typename S>
Tensor<S> div(const Tensor<S>& x, const Tensor<S>& y) {
  return detail::binary_op<S>(
      "div", x, y, [](S a, S b) { return a / b; },
      [](S g, S a, S b) { return std::pair<S, S>(g / b, -(g * a) / (b * b)); });
}

// neg/abs/relu: 0 multiplies. Subgradient at 0 is 0 for abs and relu.
template <typename S>
Tensor<S> neg(const Tensor<S>& x) {
  return detail::unary_op<S>(
      "neg", x, [](S v) { return -v; }, [](S g, S, S) { return -g; });
}

template <typename S>
Tensor<S> abs(const Tensor<S>& x) {
  return detail::unary_op<S>(
      "abs", x, [](S v) { return v < S(0) ? -v : v; },
      [](S g, S v, S) { return v > S(0) ? g : (v < S(0) ? -g : S(0)); });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return detail::unary_op<S>(
      "relu", x, [](S v) { return v > S(0) ? v : S(0); },
      [](S g, S v, S) { return v > S(0) ? g : S(0); });
}

// sigmoid: computed as 1/(1+exp(-x)); 0 multiplies.
template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  using std::exp;
  return detail::unary_op<S>(
      "sigmoid", x, [](S v) { return S(1) / (S(1) + exp(-v)); },
      [](S g, S, S s) { return g * s * (S(1) - s); });
}

// exp: 0 multiplies.
template <typename S>
Tensor<S> exp(const Tensor<S>& x) {
  using std::exp;
  return detail::unary_op<S>(
      "exp", x, [](S v) { return exp(v); }, [](S g, S, S e) { return g * e; });
}

// Exact GELU via erf: 3 multiplies per element.
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  using std::erf;
  using std::exp;
  const S inv_sqrt2 = S(0.70710678118654752440);
  const S inv_sqrt2pi = S(0.39894228040143267794);
  return detail::unary_op<S>(
      "gelu", x,
      [inv_sqrt2](S v) {
        S e = erf(v * inv_sqrt2);
        return S(0.5) * v * (S(1) + e);
      },
      [inv_sqrt2, inv_sqrt2pi](S g, S v, S) {
        S cdf = S(0.5) * (S(1) + erf(v * inv_sqrt2));
        S pdf = inv_sqrt2pi * exp(S(-0.5) * v * v);
        return g * (cdf + v * pdf);
      });
}

// scale-by-constant: 1 multiply per element.
template <typename S>
Tensor<S> scale(const Tensor<S>& x, double c) {
  const S sc = S(c);
  return detail::unary_op<S>(
      "scale", x, [sc](S v) { return v * sc; }, [sc](S g, S, S) { return g * sc; });
}

// constant offset: 0 multiplies.
template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, double c) {
  const S sc = S(c);
  return detail::unary_op<S>(
      "add_scalar", x, [sc](S v) { return v + sc; }, [](S g, S, S) { return g; });
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& x, const Tensor<S>& y) { return add(x, y); }
template <typename S>
Tensor<S> operator-(const Tensor<S>& x, const Tensor<S>& y) { return sub(x, y); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& x, const Tensor<S>& y) { return mul(x, y); }

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

// 0 multiplies.
template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
  S acc(0);
  for (const S& v : x.elems()) acc += v;
  Tensor<S> out = Tensor<S>::scalar(acc);
  if (Tape<S>* tp = same_tape<S>({&x})) {
    Index nx = x.node();
    Index n = x.size();
    Index node = tp->append("sum_all", out.shape(), [nx, n](Tape<S>& t, std::span<const S> g) {
      t.accumulate(nx, std::vector<S>(static_cast<std::size_t>(n), g[0]));
    });
    out.attach_record(tp, node);
  }
  return out;
}

// 1 multiply (the final scale).
template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

enum class PoolKind { Max, Avg };

// Reduces one axis to size 1. Avg performs exactly one multiply per output
// element (the 1/n scale); Max performs none and routes its gradient to the
// first argmax.
template <typename S>
Tensor<S> pool_over_axis(const Tensor<S>& x, Index axis, PoolKind kind) {
  if (axis < 0 || axis >= x.rank())
    throw std::invalid_argument("pool_over_axis: axis out of range for " + shape_str(x.shape()));
  const Index n = x.dim(axis);
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= x.dim(i);
  for (Index i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = 1;
  std::vector<S> buf(static_cast<std::size_t>(outer * inner));
  std::vector<Index> argmax;
  const S* xp = x.data();
  const S inv_n = S(1.0 / static_cast<double>(n));
  if (kind == PoolKind::Max) argmax.resize(buf.size());
  for (Index o = 0; o < outer; ++o) {
    for (Index j = 0; j < inner; ++j) {
      const Index base = o * n * inner + j;
      if (kind == PoolKind::Max) {
        S best = xp[base];
        Index best_k = 0;
        for (Index k = 1; k < n; ++k) {
          S v = xp[base + k * inner];
          if (v > best) {
            best = v;
            best_k = k;
          }
        }
        buf[static_cast<std::size_t>(o * inner + j)] = best;
        argmax[static_cast<std::size_t>(o * inner + j)] = best_k;
      } else {
        S acc(0);
        for (Index k = 0; k < n; ++k) acc += xp[base + k * inner];
        buf[static_cast<std::size_t>(o * inner + j)] = acc * inv_n;
      }
    }
  }
  Tensor<S> out = Tensor<S>::from(out_shape, std::move(buf));
  if (Tape<S>* tp = same_tape<S>({&x})) {
    Index nx = x.node();
    Index x_numel = x.size();
    Index node = tp->append(
        kind == PoolKind::Max ? "pool_max" : "pool_avg", out.shape(),
        [nx, outer, inner, n, x_numel, kind, inv_n, argmax](Tape<S>& t, std::span<const S> g) {
          std::vector<S> dx(static_cast<std::size_t>(x_numel), S(0));
          for (Index o = 0; o < outer; ++o)
            for (Index j = 0; j < inner; ++j) {
              const Index oi = o * inner + j;
              const Index base = o * n * inner + j;
              if (kind == PoolKind::Max) {
                dx[static_cast<std::size_t>(base + argmax[static_cast<std::size_t>(oi)] * inner)] +=
                    g[static_cast<std::size_t>(oi)];
              } else {
                const S share = g[static_cast<std::size_t>(oi)] * inv_n;
                for (Index k = 0; k < n; ++k) dx[static_cast<std::size_t>(base + k * inner)] += share;
              }
            }
          t.accumulate(nx, std::move(dx));
        });
    out.attach_record(tp, node);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

// Max-subtracted softmax over the last axis; each slice sums to 1.
// 0 multiplies (normalization is a division).
template <typename S>
Tensor<S> softmax_lastdim(const Tensor<S>& x) {
  detail::require_finite_free_of_nan(x, "softmax_lastdim");
  const Index L = x.dim(x.rank() - 1);
  const Index rows = x.size() / L;
  std::vector<S> buf(static_cast<std::size_t>(x.size()));
  const S* xp = x.data();
  using std::exp;
  for (Index r = 0; r < rows; ++r) {
    const S* row = xp + r * L;
    S* orow = buf.data() + r * L;
    S mx = row[0];
    for (Index i = 1; i < L; ++i)
      if (row[i] > mx) mx = row[i];
    S sum(0);
    for (Index i = 0; i < L; ++i) {
      orow[i] = exp(row[i] - mx);
      sum += orow[i];
    }
    for (Index i = 0; i < L; ++i) orow[i] = orow[i] / sum;
  }
  Tensor<S> out = Tensor<S>::from(x.shape(), std::move(buf));
  if (Tape<S>* tp = same_tape<S>({&x})) {
    Index nx = x.node();
    auto obuf = out.buffer();
    Index node = tp->append("softmax_lastdim", out.shape(),
                            [nx, obuf, L, rows](Tape<S>& t, std::span<const S> g) {
                              const auto& s = *obuf;
                              std::vector<S> dx(s.size());
                              for (Index r = 0; r < rows; ++r) {
                                S dot(0);
                                for (Index i = 0; i < L; ++i)
                                  dot += g[static_cast<std::size_t>(r * L + i)] *
                                         s[static_cast<std::size_t>(r * L + i)];
                                for (Index i = 0; i < L; ++i) {
                                  const std::size_t k = static_cast<std::size_t>(r * L + i);
                                  dx[k] = s[k] * (g[k] - dot);
                                }
                              }
                              t.accumulate(nx, std::move(dx));
                            });
    out.attach_record(tp, node);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batched matrix product
// ---------------------------------------------------------------------------

namespace detail {

// C (MxN) += or = A (MxK) * B (KxN), all row-major flat buffers.
template <typename S>
void gemm(const S* a, const S* b, S* c, Index M, Index K, Index N, bool accumulate) {
  if constexpr (kUseEigen<S>) {
    Eigen::Map<const RowMat<S>> A(a, M, K), B(b, K, N);
    Eigen::Map<RowMat<S>> C(c, M, N);
    if (accumulate) C.noalias() += A * B;
    else C.noalias() = A * B;
  } else {
    for (Index i = 0; i < M; ++i)
      for (Index j = 0; j < N; ++j) {
        S acc = accumulate ? c[i * N + j] : S(0);
        for (Index k = 0; k < K; ++k) acc += a[i * K + k] * b[k * N + j];
        c[i * N + j] = acc;
      }
  }
}

// C (MxN) += A^T where A is (KxM), times B (KxN).
template <typename S>
void gemm_at_b(const S* a, const S* b, S* c, Index K, Index M, Index N) {
  if constexpr (kUseEigen<S>) {
    Eigen::Map<const RowMat<S>> A(a, K, M), B(b, K, N);
    Eigen::Map<RowMat<S>> C(c, M, N);
    C.noalias() += A.transpose() * B;
  } else {
    for (Index i = 0; i < M; ++i)
      for (Index j = 0; j < N; ++j) {
        S acc = c[i * N + j];
        for (Index k = 0; k < K; ++k) acc += a[k * M + i] * b[k * N + j];
        c[i * N + j] = acc;
      }
  }
}

// C (MxN) += A (MxK) times B^T where B is (NxK).
template <typename S>
void gemm_a_bt(const S* a, const S* b, S* c, Index M, Index K, Index N) {
  if constexpr (kUseEigen<S>) {
    Eigen::Map<const RowMat<S>> A(a, M, K), B(b, N, K);
    Eigen::Map<RowMat<S>> C(c, M, N);
    C.noalias() += A * B.transpose();
  } else {
    for (Index i = 0; i < M; ++i)
      for (Index j = 0; j < N; ++j) {
        S acc = c[i * N + j];
        for (Index k = 0; k < K; ++k) acc += a[i * K + k] * b[j * K + k];
        c[i * N + j] = acc;
      }
  }
}

}  // namespace detail

// a: BxMxK, b: BxKxN -> BxMxN. B*M*K*N multiplies.
template <typename S>
Tensor<S> matmul_batched(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 3 || b.rank() != 3)
    throw std::invalid_argument("matmul_batched: expects rank-3 tensors, got " +
                                shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const Index B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
  if (b.dim(0) != B)
    throw std::invalid_argument("matmul_batched: batch mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  if (b.dim(1) != K)
    throw std::invalid_argument("matmul_batched: inner dimension mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<S> buf(static_cast<std::size_t>(B * M * N));
  for (Index i = 0; i < B; ++i)
    detail::gemm(a.data() + i * M * K, b.data() + i * K * N, buf.data() + i * M * N, M, K, N,
                 false);
  Tensor<S> out = Tensor<S>::from({B, M, N}, std::move(buf));
  if (Tape<S>* tp = same_tape<S>({&a, &b})) {
    Index na = a.recorded() ? a.node() : -1;
    Index nb = b.recorded() ? b.node() : -1;
    Tensor<S> av = a, bv = b;
    Index node = tp->append(
        "matmul_batched", out.shape(), [na, nb, av, bv, B, M, K, N](Tape<S>& t, std::span<const S> g) {
          if (na >= 0) {
            std::vector<S> da(static_cast<std::size_t>(B * M * K), S(0));
            for (Index i = 0; i < B; ++i)
              detail::gemm_a_bt(g.data() + i * M * N, bv.data() + i * K * N, da.data() + i * M * K,
                                M, N, K);
            t.accumulate(na, std::move(da));
          }
          if (nb >= 0) {
            std::vector<S> db(static_cast<std::size_t>(B * K * N), S(0));
            for (Index i = 0; i < B; ++i)
              detail::gemm_at_b(av.data() + i * M * K, g.data() + i * M * N, db.data() + i * K * N,
                                M, K, N);
            t.accumulate(nb, std::move(db));
          }
        });
    out.attach_record(tp, node);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip)
// ---------------------------------------------------------------------------

namespace detail {

struct ConvDims {
  Index B, C, H, W;      // input
  Index O, I, Kh, Kw;    // weight (I = C / groups)
  Index Ho, Wo;          // output
  Index stride, pad, groups;
};

template <typename S>
ConvDims conv_dims(const Tensor<S>& x, const Tensor<S>& w, Index stride, Index pad,
                   Index groups) {
  if (x.rank() != 4)
    throw std::invalid_argument("conv2d: input must be BCHW, got " + shape_str(x.shape()));
  if (w.rank() != 4)
    throw std::invalid_argument("conv2d: weight must be OIKhKw, got " + shape_str(w.shape()));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
  if (pad < 0) throw std::invalid_argument("conv2d: padding must be non-negative");
  if (groups < 1) throw std::invalid_argument("conv2d: groups must be positive");
  ConvDims d;
  d.B = x.dim(0); d.C = x.dim(1); d.H = x.dim(2); d.W = x.dim(3);
  d.O = w.dim(0); d.I = w.dim(1); d.Kh = w.dim(2); d.Kw = w.dim(3);
  d.stride = stride; d.pad = pad; d.groups = groups;
  if (d.C % groups != 0)
    throw std::invalid_argument("conv2d: channel axis " + std::to_string(d.C) +
                                " not divisible by groups " + std::to_string(groups));
  if (d.O % groups != 0)
    throw std::invalid_argument("conv2d: output-channel axis " + std::to_string(d.O) +
                                " not divisible by groups " + std::to_string(groups));
  if (d.I != d.C / groups)
    throw std::invalid_argument("conv2d: weight input-channel axis is " + std::to_string(d.I) +
                                ", expected " + std::to_string(d.C / groups) +
                                " (= input channels / groups)");
  const Index nh = d.H + 2 * pad - d.Kh;
  const Index nw = d.W + 2 * pad - d.Kw;
  if (nh < 0 || nh % stride != 0 || nw < 0 || nw % stride != 0)
    throw std::invalid_argument("conv2d: output size (" + std::to_string(d.H) + "+2*" +
                                std::to_string(pad) + "-" + std::to_string(d.Kh) + ")/" +
                                std::to_string(stride) + "+1 is not a positive integer");
  d.Ho = nh / stride + 1;
  d.Wo = nw / stride + 1;
  return d;
}

// Gathers one (batch, group) patch matrix: rows I*Kh*Kw, cols Ho*Wo.
// Out-of-bounds taps contribute zeros, which the GEMM multiplies like any
// other value (this is what the multiply accounting assumes).
template <typename S>
void im2col(const S* x, const ConvDims& d, Index b, Index g, std::vector<S>& cols) {
  const Index plane = d.H * d.W;
  const S* base = x + (b * d.C + g * d.I) * plane;
  Index r = 0;
  for (Index ic = 0; ic < d.I; ++ic)
    for (Index kh = 0; kh < d.Kh; ++kh)
      for (Index kw = 0; kw < d.Kw; ++kw, ++r) {
        S* dst = cols.data() + r * d.Ho * d.Wo;
        for (Index oh = 0; oh < d.Ho; ++oh) {
          const Index ih = oh * d.stride - d.pad + kh;
          for (Index ow = 0; ow < d.Wo; ++ow) {
            const Index iw = ow * d.stride - d.pad + kw;
            const bool in = ih >= 0 && ih < d.H && iw >= 0 && iw < d.W;
            dst[oh * d.Wo + ow] = in ? base[ic * plane + ih * d.W + iw] : S(0);
          }
        }
      }
}

// Scatters a patch-matrix gradient back onto the input plane.
template <typename S>
void col2im_add(const std::vector<S>& cols, const ConvDims& d, Index b, Index g, S* dx) {
  const Index plane = d.H * d.W;
  S* base = dx + (b * d.C + g * d.I) * plane;
  Index r = 0;
  for (Index ic = 0; ic < d.I; ++ic)
    for (Index kh = 0; kh < d.Kh; ++kh)
      for (Index kw = 0; kw < d.Kw; ++kw, ++r) {
        const S* src = cols.data() + r * d.Ho * d.Wo;
        for (Index oh = 0; oh < d.Ho; ++oh) {
          const Index ih = oh * d.stride - d.pad + kh;
          if (ih < 0 || ih >= d.H) continue;
          for (Index ow = 0; ow < d.Wo; ++ow) {
            const Index iw = ow * d.stride - d.pad + kw;
            if (iw < 0 || iw >= d.W) continue;
            base[ic * plane + ih * d.W + iw] += src[oh * d.Wo + ow];
          }
        }
      }
}

}  // namespace detail

// Standard cross-correlation. O*(C/groups)*Kh*Kw*Ho*Wo*B multiplies
// (padded zeros included); the bias add contributes none.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w,
                 const std::optional<Tensor<S>>& bias, Index stride, Index padding,
                 Index groups) {
  const auto d = detail::conv_dims(x, w, stride, padding, groups);
  if (bias && (bias->rank() != 1 || bias->dim(0) != d.O))
    throw std::invalid_argument("conv2d: bias must have shape [" + std::to_string(d.O) +
                                "], got " + shape_str(bias->shape()));
  const Index Og = d.O / d.groups;
  const Index patch = d.I * d.Kh * d.Kw;
  const Index area = d.Ho * d.Wo;
  std::vector<S> buf(static_cast<std::size_t>(d.B * d.O * area), S(0));
  std::vector<S> cols(static_cast<std::size_t>(patch * area));
  for (Index b = 0; b < d.B; ++b)
    for (Index g = 0; g < d.groups; ++g) {
      detail::im2col(x.data(), d, b, g, cols);
      detail::gemm(w.data() + g * Og * patch, cols.data(),
                   buf.data() + (b * d.O + g * Og) * area, Og, patch, area, false);
    }
  if (bias) {
    const S* bp = bias->data();
    for (Index b = 0; b < d.B; ++b)
      for (Index o = 0; o < d.O; ++o) {
        S* row = buf.data() + (b * d.O + o) * area;
        for (Index j = 0; j < area; ++j) row[j] += bp[o];
      }
  }
  Tensor<S> out = Tensor<S>::from({d.B, d.O, d.Ho, d.Wo}, std::move(buf));
  const Tensor<S>* bias_ptr = bias ? &*bias : nullptr;
  Tape<S>* tp = bias_ptr ? same_tape<S>({&x, &w, bias_ptr}) : same_tape<S>({&x, &w});
  if (tp) {
    Index nx = x.recorded() ? x.node() : -1;
    Index nw = w.recorded() ? w.node() : -1;
    Index nb = (bias && bias->recorded()) ? bias->node() : -1;
    Tensor<S> xv = x, wv = w;
    Index node = tp->append(
        "conv2d", out.shape(), [nx, nw, nb, xv, wv, d, Og, patch, area](Tape<S>& t,
                                                                        std::span<const S> g) {
          std::vector<S> cols(static_cast<std::size_t>(patch * area));
          std::vector<S> dw, dcols;
          if (nw >= 0) dw.assign(static_cast<std::size_t>(wv.size()), S(0));
          std::vector<S> dx;
          if (nx >= 0) dx.assign(static_cast<std::size_t>(xv.size()), S(0));
          for (Index b = 0; b < d.B; ++b)
            for (Index grp = 0; grp < d.groups; ++grp) {
              const S* gout = g.data() + (b * d.O + grp * Og) * area;
              if (nw >= 0 || nx >= 0) detail::im2col(xv.data(), d, b, grp, cols);
              if (nw >= 0)
                detail::gemm_a_bt(gout, cols.data(), dw.data() + grp * Og * patch, Og, area,
                                  patch);
              if (nx >= 0) {
                dcols.assign(static_cast<std::size_t>(patch * area), S(0));
                detail::gemm_at_b(wv.data() + grp * Og * patch, gout, dcols.data(), Og, patch,
                                  area);
                detail::col2im_add(dcols, d, b, grp, dx.data());
              }
            }
          if (nx >= 0) t.accumulate(nx, std::move(dx));
          if (nw >= 0) t.accumulate(nw, std::move(dw));
          if (nb >= 0) {
            std::vector<S> db(static_cast<std::size_t>(d.O), S(0));
            for (Index b = 0; b < d.B; ++b)
              for (Index o = 0; o < d.O; ++o) {
                const S* row = g.data() + (b * d.O + o) * area;
                for (Index j = 0; j < area; ++j) db[static_cast<std::size_t>(o)] += row[j];
              }
            t.accumulate(nb, std::move(db));
          }
        });
    out.attach_record(tp, node);
  }
  return out;
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, Index stride = 1, Index padding = 0,
                 Index groups = 1) {
  return conv2d(x, w, std::optional<Tensor<S>>{}, stride, padding, groups);
}

// ---------------------------------------------------------------------------
// Channel layer norm
// ---------------------------------------------------------------------------

// Per-position normalization over the channel axis of a BCHW tensor with a
// biased variance. 3C+2 multiplies per spatial position.
template <typename S>
Tensor<S> layer_norm_channels(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                              double eps = 1e-5) {
  if (x.rank() != 4)
    throw std::invalid_argument("layer_norm_channels: input must be BCHW, got " +
                                shape_str(x.shape()));
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C)
    throw std::invalid_argument("layer_norm_channels: gamma/beta must have shape [" +
                                std::to_string(C) + "]");
  if (!(eps > 0)) throw std::invalid_argument("layer_norm_channels: eps must be positive");
  const Index HW = H * W;
  const S inv_c = S(1.0 / static_cast<double>(C));
  const S eps_s = S(eps);
  std::vector<S> buf(static_cast<std::size_t>(x.size()));
  const S* xp = x.data();
  const S* gp = gamma.data();
  const S* bp = beta.data();
  using std::sqrt;
  for (Index b = 0; b < B; ++b)
    for (Index p = 0; p < HW; ++p) {
      const Index base = b * C * HW + p;
      S mean(0);
      for (Index c = 0; c < C; ++c) mean += xp[base + c * HW];
      mean = mean * inv_c;
      S var(0);
      for (Index c = 0; c < C; ++c) {
        const S dv = xp[base + c * HW] - mean;
        var += dv * dv;
      }
      var = var * inv_c;
      const S inv_std = S(1) / sqrt(var + eps_s);
      for (Index c = 0; c < C; ++c) {
        const S xh = (xp[base + c * HW] - mean) * inv_std;
        buf[static_cast<std::size_t>(base + c * HW)] = xh * gp[c] + bp[c];
      }
    }
  Tensor<S> out = Tensor<S>::from(x.shape(), std::move(buf));
  if (Tape<S>* tp = same_tape<S>({&x, &gamma, &beta})) {
    Index nx = x.recorded() ? x.node() : -1;
    Index ng = gamma.recorded() ? gamma.node() : -1;
    Index nb = beta.recorded() ? beta.node() : -1;
    Tensor<S> xv = x, gv = gamma;
    Index node = tp->append(
        "layer_norm_channels", out.shape(),
        [nx, ng, nb, xv, gv, B, C, HW, inv_c, eps_s](Tape<S>& t, std::span<const S> g) {
          using std::sqrt;
          const S* xp = xv.data();
          const S* gp = gv.data();
          std::vector<S> dx, dgamma, dbeta;
          if (nx >= 0) dx.assign(static_cast<std::size_t>(xv.size()), S(0));
          if (ng >= 0) dgamma.assign(static_cast<std::size_t>(C), S(0));
          if (nb >= 0) dbeta.assign(static_cast<std::size_t>(C), S(0));
          std::vector<S> xh(static_cast<std::size_t>(C));
          for (Index b = 0; b < B; ++b)
            for (Index p = 0; p < HW; ++p) {
              const Index base = b * C * HW + p;
              S mean(0);
              for (Index c = 0; c < C; ++c) mean += xp[base + c * HW];
              mean = mean * inv_c;
              S var(0);
              for (Index c = 0; c < C; ++c) {
                const S dv = xp[base + c * HW] - mean;
                var += dv * dv;
              }
              var = var * inv_c;
              const S inv_std = S(1) / sqrt(var + eps_s);
              S m1(0), m2(0);
              for (Index c = 0; c < C; ++c) {
                xh[static_cast<std::size_t>(c)] = (xp[base + c * HW] - mean) * inv_std;
                const S gg = g[static_cast<std::size_t>(base + c * HW)] * gp[c];
                m1 += gg;
                m2 += gg * xh[static_cast<std::size_t>(c)];
              }
              m1 = m1 * inv_c;
              m2 = m2 * inv_c;
              for (Index c = 0; c < C; ++c) {
                const std::size_t k = static_cast<std::size_t>(base + c * HW);
                if (nx >= 0) {
                  const S gg = g[k] * gp[c];
                  dx[k] = inv_std * (gg - m1 - xh[static_cast<std::size_t>(c)] * m2);
                }
                if (ng >= 0) dgamma[static_cast<std::size_t>(c)] += g[k] * xh[static_cast<std::size_t>(c)];
                if (nb >= 0) dbeta[static_cast<std::size_t>(c)] += g[k];
              }
            }
          if (nx >= 0) t.accumulate(nx, std::move(dx));
          if (ng >= 0) t.accumulate(ng, std::move(dgamma));
          if (nb >= 0) t.accumulate(nb, std::move(dbeta));
        });
    out.attach_record(tp, node);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bilinear 2x upsampling
// ---------------------------------------------------------------------------

namespace detail {

struct LerpTap {
  Index lo, hi;
  double frac;
};

// align_corners=false sampling: src = (dst + 0.5)/2 - 0.5, edges clamped.
inline std::vector<LerpTap> bilinear2x_taps(Index in_size) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(2 * in_size));
  for (Index o = 0; o < 2 * in_size; ++o) {
    const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    double lo = std::floor(src);
    LerpTap t;
    t.frac = src - lo;
    t.lo = std::clamp(static_cast<Index>(lo), Index(0), in_size - 1);
    t.hi = std::clamp(static_cast<Index>(lo) + 1, Index(0), in_size - 1);
    taps[static_cast<std::size_t>(o)] = t;
  }
  return taps;
}

}  // namespace detail

// BCHW -> BC(2H)(2W), align_corners=false. 4 multiplies per output element
// (corner weights are index math, not tensor scalars).
template <typename S>
Tensor<S> upsample_bilinear2x(const Tensor<S>& x) {
  if (x.rank() != 4)
    throw std::invalid_argument("upsample_bilinear2x: input must be BCHW, got " +
                                shape_str(x.shape()));
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index Ho = 2 * H, Wo = 2 * W;
  auto th = detail::bilinear2x_taps(H);
  auto tw = detail::bilinear2x_taps(W);
  std::vector<S> buf(static_cast<std::size_t>(B * C * Ho * Wo));
  const S* xp = x.data();
  for (Index bc = 0; bc < B * C; ++bc) {
    const S* plane = xp + bc * H * W;
    S* oplane = buf.data() + bc * Ho * Wo;
    for (Index oh = 0; oh < Ho; ++oh) {
      const auto& h = th[static_cast<std::size_t>(oh)];
      for (Index ow = 0; ow < Wo; ++ow) {
        const auto& w = tw[static_cast<std::size_t>(ow)];
        const S w00 = S((1.0 - h.frac) * (1.0 - w.frac));
        const S w01 = S((1.0 - h.frac) * w.frac);
        const S w10 = S(h.frac * (1.0 - w.frac));
        const S w11 = S(h.frac * w.frac);
        oplane[oh * Wo + ow] = w00 * plane[h.lo * W + w.lo] + w01 * plane[h.lo * W + w.hi] +
                               w10 * plane[h.hi * W + w.lo] + w11 * plane[h.hi * W + w.hi];
      }
    }
  }
  Tensor<S> out = Tensor<S>::from({B, C, Ho, Wo}, std::move(buf));
  if (Tape<S>* tp = same_tape<S>({&x})) {
    Index nx = x.node();
    Index x_numel = x.size();
    Index node = tp->append(
        "upsample_bilinear2x", out.shape(),
        [nx, x_numel, th, tw, B, C, H, W, Ho, Wo](Tape<S>& t, std::span<const S> g) {
          std::vector<S> dx(static_cast<std::size_t>(x_numel), S(0));
          for (Index bc = 0; bc < B * C; ++bc) {
            S* plane = dx.data() + bc * H * W;
            const S* gplane = g.data() + bc * Ho * Wo;
            for (Index oh = 0; oh < Ho; ++oh) {
              const auto& h = th[static_cast<std::size_t>(oh)];
              for (Index ow = 0; ow < Wo; ++ow) {
                const auto& w = tw[static_cast<std::size_t>(ow)];
                const S gv = gplane[oh * Wo + ow];
                plane[h.lo * W + w.lo] += S((1.0 - h.frac) * (1.0 - w.frac)) * gv;
                plane[h.lo * W + w.hi] += S((1.0 - h.frac) * w.frac) * gv;
                plane[h.hi * W + w.lo] += S(h.frac * (1.0 - w.frac)) * gv;
                plane[h.hi * W + w.hi] += S(h.frac * w.frac) * gv;
              }
            }
          }
          t.accumulate(nx, std::move(dx));
        });
    out.attach_record(tp, node);
  }
  return out;
}

}  // namespace lsat
