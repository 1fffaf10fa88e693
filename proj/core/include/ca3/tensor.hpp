#pragma once

// Dense row-major tensors with a reverse-mode autodiff tape.
//
// A tensor is a shared handle: copying a BasicTensor aliases the same
// storage. Shape and values are fixed once an op has produced the tensor;
// only the gradient slot changes afterwards (plus in-place parameter
// updates by the optimizer and checkpoint loader through mutable_data()).

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ca3/errors.hpp"

namespace ca3 {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
class BasicTape;

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  T item() const;
  T operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() const { return grad_buffer(); }
  // Sets the gradient slot to zeros (allocating it if absent).
  void zero_grad() const;
  void clear_grad() const { impl_->grad.clear(); }

  // Deep copy of shape and values; the copy does not require grad.
  BasicTensor detach() const;
  // Same values, new shape with identical element count (copy).
  BasicTensor reshaped(Shape shape) const;

  const void* id() const { return impl_.get(); }

  // Gradient buffer, allocated with zeros on first use.
  std::vector<T>& grad_buffer() const;

 private:
  struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

// Ordered record of differentiable operations for one forward pass.
template <typename T>
class BasicTape {
 public:
  enum class Mode { record, inference };

  explicit BasicTape(Mode mode = Mode::record) : mode_(mode) {}
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  bool recording() const { return mode_ == Mode::record; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }
  std::string_view op_at(std::size_t i) const { return nodes_.at(i).op; }

  // True when `output` should be recorded (tape active and any input needs grad).
  bool wants(std::initializer_list<const BasicTensor<T>*> inputs) const;

  void record(std::string op, BasicTensor<T> output, std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and replays recorded nodes in reverse order.
  void backward(const BasicTensor<T>& loss);

 private:
  struct Node {
    std::string op;
    BasicTensor<T> output;
    std::function<void()> backward;
  };
  Mode mode_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
};

using Tensor = BasicTensor<float>;
using Tape = BasicTape<float>;

// Rows `indices` of a [N, ...] tensor, as a new [indices.size(), ...] tensor.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices);

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;
extern template class BasicTape<float>;
extern template class BasicTape<double>;

}  // namespace ca3
