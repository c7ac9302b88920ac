// Reverse-mode differentiation tape. One tape serves one forward/backward
// episode (define-by-run): ops append nodes in execution order, backward()
// sweeps the list once in reverse. A tape must stay on a single logical
// thread; parallelism happens across tapes.
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lsat/tensor.hpp"

namespace lsat {

template <typename Scalar>
struct Parameter {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  std::string name;

  Parameter() = default;
  Parameter(Tensor<Scalar> v, std::string n)
      : value(std::move(v)), grad(Tensor<Scalar>::zeros(value.shape())), name(std::move(n)) {}

  void zero_grad() { grad = Tensor<Scalar>::zeros(value.shape()); }
};

template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::span<const Scalar>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf entry for a value whose gradient will be queryable after backward.
  Tensor<Scalar> watch(const Tensor<Scalar>& value) {
    if (value.recorded() && value.tape() == this) return value;
    Tensor<Scalar> out = value;
    out.attach_record(this, append("leaf", value.shape(), {}));
    return out;
  }

  // Leaf bound to a parameter: after backward the node gradient is added
  // into p.grad, so multi-use parameters sum their contributions.
  Tensor<Scalar> watch(Parameter<Scalar>& p) {
    Tensor<Scalar> out = watch(p.value);
    bindings_.push_back({out.node(), &p});
    return out;
  }

  Index append(const char* op, Shape out_shape, BackwardFn backward) {
    nodes_.push_back(Node{op, std::move(out_shape), std::move(backward)});
    return static_cast<Index>(nodes_.size()) - 1;
  }

  Index node_count() const { return static_cast<Index>(nodes_.size()); }
  const char* node_op(Index i) const { return nodes_[static_cast<std::size_t>(i)].op; }

  // Adds a gradient contribution for a node's output. First touch moves the
  // buffer in; later touches accumulate elementwise.
  void accumulate(Index node, std::vector<Scalar>&& contrib) {
    auto& slot = grad_slot(node, contrib.size());
    if (slot.empty()) {
      slot = std::move(contrib);
      return;
    }
    for (std::size_t i = 0; i < contrib.size(); ++i) slot[i] += contrib[i];
  }

  void accumulate(Index node, std::span<const Scalar> contrib) {
    auto& slot = grad_slot(node, contrib.size());
    if (slot.empty()) slot.assign(contrib.begin(), contrib.end());
    else
      for (std::size_t i = 0; i < contrib.size(); ++i) slot[i] += contrib[i];
  }

  void backward(const Tensor<Scalar>& loss) {
    if (!loss.recorded() || loss.tape() != this)
      throw std::invalid_argument("backward: loss is not recorded on this tape");
    if (loss.size() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape_str(loss.shape()));
    if (ran_backward_) throw std::logic_error("backward: tape already consumed");
    ran_backward_ = true;
    grads_.assign(nodes_.size(), {});
    grads_[static_cast<std::size_t>(loss.node())] = {Scalar(1)};
    for (Index i = static_cast<Index>(nodes_.size()) - 1; i >= 0; --i) {
      auto& g = grads_[static_cast<std::size_t>(i)];
      if (g.empty()) continue;
      auto& fn = nodes_[static_cast<std::size_t>(i)].backward;
      if (fn) fn(*this, g);
    }
    for (auto& [node, param] : bindings_) {
      const auto& g = grads_[static_cast<std::size_t>(node)];
      if (g.empty()) continue;
      std::vector<Scalar> sum(param->grad.elems().begin(), param->grad.elems().end());
      for (std::size_t i = 0; i < g.size(); ++i) sum[i] += g[i];
      param->grad = Tensor<Scalar>::from(param->grad.shape(), std::move(sum));
    }
  }

  bool ran_backward() const { return ran_backward_; }

  // Gradient of a watched (or any recorded) tensor, valid after backward.
  Tensor<Scalar> grad(const Tensor<Scalar>& t) const {
    if (!ran_backward_) throw std::logic_error("grad: backward has not run");
    if (!t.recorded() || t.tape() != this)
      throw std::invalid_argument("grad: tensor is not recorded on this tape");
    const auto& g = grads_[static_cast<std::size_t>(t.node())];
    if (g.empty()) return Tensor<Scalar>::zeros(t.shape());
    return Tensor<Scalar>::from(t.shape(), std::vector<Scalar>(g.begin(), g.end()));
  }

 private:
  struct Node {
    const char* op;
    Shape shape;
    BackwardFn backward;
  };

  std::vector<Scalar>& grad_slot(Index node, std::size_t expected) {
    if (node < 0 || node >= static_cast<Index>(nodes_.size()))
      throw std::logic_error("accumulate: node index out of range");
    const Index want = numel(nodes_[static_cast<std::size_t>(node)].shape);
    if (static_cast<Index>(expected) != want)
      throw std::logic_error(std::string("accumulate: gradient size mismatch for op ") +
                             nodes_[static_cast<std::size_t>(node)].op);
    return grads_[static_cast<std::size_t>(node)];
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<Scalar>> grads_;
  std::vector<std::pair<Index, Parameter<Scalar>*>> bindings_;
  bool ran_backward_ = false;
};

// Resolves the tape shared by a set of op inputs. Unrecorded inputs are
// constants; recorded inputs must agree on one tape.
template <typename Scalar>
Tape<Scalar>* same_tape(std::initializer_list<const Tensor<Scalar>*> inputs) {
  Tape<Scalar>* tape = nullptr;
  for (const Tensor<Scalar>* t : inputs) {
    if (!t->recorded()) continue;
    if (tape && tape != t->tape())
      throw std::logic_error("op inputs are recorded on different tapes");
    tape = t->tape();
  }
  return tape;
}

// Watches a parameter when a tape is active, otherwise returns the bare value.
template <typename Scalar>
Tensor<Scalar> use(Tape<Scalar>* tape, Parameter<Scalar>& p) {
  return tape ? tape->watch(p) : p.value;
}

template <typename Scalar>
void zero_grads(const std::vector<Parameter<Scalar>*>& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace lsat
