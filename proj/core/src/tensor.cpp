#include "ca3/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace ca3 {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  if (shape.empty()) shape = {1};
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor shape " + to_string(shape) + " has a zero extent");
  }
  if (numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + to_string(shape) + " needs " + std::to_string(numel(shape)) +
                     " values, got " + std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return BasicTensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
T BasicTensor<T>::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + to_string(shape()));
  return impl_->data[0];
}

template <typename T>
void BasicTensor<T>::zero_grad() const {
  impl_->grad.assign(impl_->data.size(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(impl_->shape, impl_->data, false);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  if (numel(shape) != size()) {
    throw ShapeError("cannot reshape " + to_string(this->shape()) + " to " + to_string(shape));
  }
  return BasicTensor(std::move(shape), impl_->data, false);
}

template <typename T>
std::vector<T>& BasicTensor<T>::grad_buffer() const {
  if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
bool BasicTape<T>::wants(std::initializer_list<const BasicTensor<T>*> inputs) const {
  if (!recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const BasicTensor<T>* t) { return t && t->defined() && t->requires_grad(); });
}

template <typename T>
void BasicTape<T>::record(std::string op, BasicTensor<T> output, std::function<void()> backward) {
  if (consumed_) throw NumericError("tape already consumed by backward(); record a new forward pass");
  nodes_.push_back(Node{std::move(op), std::move(output), std::move(backward)});
}

template <typename T>
void BasicTape<T>::backward(const BasicTensor<T>& loss) {
  if (consumed_) throw NumericError("backward() called twice on the same tape");
  if (!loss.defined() || loss.size() != 1) {
    throw NumericError("backward() needs a scalar loss, got " +
                       (loss.defined() ? to_string(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) throw NumericError("loss does not depend on any tensor requiring grad");
  consumed_ = true;
  auto seed = loss;
  seed.grad_buffer()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output.has_grad()) it->backward();
  }
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ShapeError("gather_rows: empty index list");
  const std::size_t width = x.size() / x.dim(0);
  std::vector<float> out(indices.size() * width);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.dim(0)) throw ShapeError("gather_rows: index out of range");
    std::copy_n(x.data().data() + indices[i] * width, width, out.data() + i * width);
  }
  Shape s = x.shape();
  s[0] = indices.size();
  return Tensor(std::move(s), std::move(out));
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class BasicTape<float>;
template class BasicTape<double>;

}  // namespace ca3
