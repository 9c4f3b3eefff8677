#include "kvt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace kvt {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

namespace {

void validate_shape(const Shape& shape) {
  for (auto s : shape) {
    if (s == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  validate_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                     " values but " + std::to_string(data.size()) + " were given");
  }
  for (T v : data) {
    if (std::isnan(v) || v == std::numeric_limits<T>::infinity()) {
      throw NumericError("tensor data contains NaN or +Inf");
    }
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T{0}, requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return BasicTensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::ptrdiff_t axis) const {
  const auto n = static_cast<std::ptrdiff_t>(ndim());
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n) {
    throw IndexError("axis out of range for shape " + shape_str(shape()));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
T BasicTensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != ndim()) throw IndexError("index rank does not match " + shape_str(shape()));
  std::size_t offset = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= node_->shape[axis]) throw IndexError("index out of bounds for " + shape_str(shape()));
    offset = offset * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[offset];
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
  if (node_->grad.empty()) throw AutogradError("tensor has no gradient");
  return node_->grad;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T{0});
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  auto node = std::make_shared<Node>();
  node->shape = node_->shape;
  node->data = node_->data;
  return BasicTensor(std::move(node));
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  return std::all_of(node_->data.begin(), node_->data.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void BasicTape<T>::record(NodePtr output, std::vector<NodePtr> inputs, BackwardFn backward) {
  if (consumed_) throw AutogradError("tape already consumed by backward(); call reset() first");
  output->requires_grad = true;
  output->leaf = false;
  entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
void BasicTape<T>::backward(const BasicTensor<T>& loss) {
  if (consumed_) throw AutogradError("backward() called twice without resetting the tape");
  if (!loss.defined() || loss.numel() != 1) {
    throw AutogradError("backward() requires a scalar loss");
  }
  if (entries_.empty()) throw AutogradError("backward() on an empty tape");
  if (!loss.requires_grad()) throw AutogradError("loss does not depend on any tracked tensor");

  auto& root = *loss.node();
  root.ensure_grad();
  root.grad[0] += T{1};

  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not upstream of the loss
    it->backward(*it->output);
  }

  // Every tracked leaf touched by this tape ends with a populated gradient.
  for (auto& entry : entries_) {
    for (auto& input : entry.inputs) {
      if (input->leaf && input->requires_grad) input->ensure_grad();
    }
  }
  consumed_ = true;
}

template <typename T>
void BasicTape<T>::reset() {
  entries_.clear();
  consumed_ = false;
}

template <typename T>
BasicTape<T>*& active_tape() {
  thread_local BasicTape<T>* tape = nullptr;
  return tape;
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
  auto* tape = active_tape<T>();
  if (tape == nullptr) throw AutogradError("backward() with no active tape");
  tape->backward(loss);
}

template <typename T>
bool record_op(const BasicTensor<T>& output, std::vector<std::shared_ptr<TensorNode<T>>> inputs,
               typename BasicTape<T>::BackwardFn backward_fn) {
  auto* tape = active_tape<T>();
  if (tape == nullptr) return false;
  const bool tracked = std::any_of(inputs.begin(), inputs.end(),
                                   [](const auto& n) { return n->requires_grad; });
  if (!tracked) return false;
  tape->record(output.node(), std::move(inputs), std::move(backward_fn));
  return true;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class BasicTape<float>;
template class BasicTape<double>;
template BasicTape<float>*& active_tape<float>();
template BasicTape<double>*& active_tape<double>();
template void backward<float>(const BasicTensor<float>&);
template void backward<double>(const BasicTensor<double>&);
template bool record_op<float>(const BasicTensor<float>&, std::vector<std::shared_ptr<TensorNode<float>>>,
                               BasicTape<float>::BackwardFn);
template bool record_op<double>(const BasicTensor<double>&,
                                std::vector<std::shared_ptr<TensorNode<double>>>,
                                BasicTape<double>::BackwardFn);

}  // namespace kvt
