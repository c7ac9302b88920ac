// Dense n-dimensional tensor value type. Shapes are immutable after
// construction; every structural op returns a new Tensor. Buffers are
// shared copy-on-nothing (there is no mutation API), so copies are cheap
// and concurrent reads are safe.
#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lsat {

using Index = std::int64_t;
using Shape = std::vector<Index>;

template <typename Scalar>
class Tape;

inline Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::vector<Index> row_major_strides(const Shape& shape) {
  std::vector<Index> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
    strides[i] = strides[i + 1] * shape[i + 1];
  return strides;
}

inline void check_shape_valid(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must have rank >= 1");
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (shape[i] <= 0)
      throw std::invalid_argument("tensor shape axis " + std::to_string(i) +
                                  " must be positive, got " + std::to_string(shape[i]));
}

template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<Scalar> elems) {
    check_shape_valid(shape);
    if (numel(shape) != static_cast<Index>(elems.size()))
      throw std::invalid_argument("tensor data size " + std::to_string(elems.size()) +
                                  " does not match shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<const std::vector<Scalar>>(std::move(elems));
    return t;
  }

  // Shares an existing buffer (used by reshape; the buffer is immutable).
  static Tensor from_buffer(Shape shape, std::shared_ptr<const std::vector<Scalar>> buf) {
    check_shape_valid(shape);
    if (!buf || numel(shape) != static_cast<Index>(buf->size()))
      throw std::invalid_argument("tensor buffer size does not match shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(buf);
    return t;
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), Scalar(0)); }

  static Tensor full(Shape shape, Scalar value) {
    check_shape_valid(shape);
    std::vector<Scalar> elems(static_cast<std::size_t>(numel(shape)), value);
    return from(std::move(shape), std::move(elems));
  }

  static Tensor scalar(Scalar value) { return from({1}, {value}); }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return defined() ? static_cast<Index>(data_->size()) : 0; }

  Index dim(Index axis) const {
    if (axis < 0 || axis >= rank())
      throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for shape " +
                                  shape_str(shape_));
    return shape_[static_cast<std::size_t>(axis)];
  }

  const Scalar* data() const { return data_->data(); }
  std::span<const Scalar> elems() const { return {data_->data(), data_->size()}; }
  const std::shared_ptr<const std::vector<Scalar>>& buffer() const { return data_; }

  Scalar item() const {
    if (size() != 1)
      throw std::invalid_argument("item() requires a single-element tensor, got " + shape_str(shape_));
    return (*data_)[0];
  }

  Scalar at(std::initializer_list<Index> idx) const {
    if (static_cast<Index>(idx.size()) != rank())
      throw std::invalid_argument("at(): index rank mismatch for shape " + shape_str(shape_));
    auto strides = row_major_strides(shape_);
    Index flat = 0;
    std::size_t i = 0;
    for (Index v : idx) {
      if (v < 0 || v >= shape_[i])
        throw std::invalid_argument("at(): index out of bounds on axis " + std::to_string(i));
      flat += v * strides[i];
      ++i;
    }
    return (*data_)[static_cast<std::size_t>(flat)];
  }

  // Differentiation record. Set by op implementations via attach_record;
  // tensors without a record are constants for backward purposes.
  bool recorded() const { return tape_ != nullptr; }
  Tape<Scalar>* tape() const { return tape_; }
  Index node() const { return node_; }

  // Internal: used by the tape and op implementations only.
  void attach_record(Tape<Scalar>* tape, Index node) {
    tape_ = tape;
    node_ = node;
  }

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<Scalar>> data_;
  Tape<Scalar>* tape_ = nullptr;
  Index node_ = -1;
};

// Copies a tensor's values with one coordinate replaced. Used by the finite
// difference harness and the optimizer tests; the original is untouched.
template <typename Scalar>
Tensor<Scalar> with_value_at(const Tensor<Scalar>& t, Index flat_index, Scalar value) {
  if (flat_index < 0 || flat_index >= t.size())
    throw std::invalid_argument("with_value_at: index out of range");
  std::vector<Scalar> buf(t.elems().begin(), t.elems().end());
  buf[static_cast<std::size_t>(flat_index)] = value;
  return Tensor<Scalar>::from(t.shape(), std::move(buf));
}

template <typename Scalar>
bool same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return a.shape() == b.shape();
}

}  // namespace lsat
