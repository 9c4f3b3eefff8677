#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "kvt/errors.hpp"

namespace kvt {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  bool leaf = true;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T{0});
  }
};

/// Dense row-major array with an optional gradient. Copies share the
/// underlying node; ops always produce new nodes.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  BasicTensor() = default;
  /// Rejects NaN and +Inf. -Inf is accepted as the masking sentinel.
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);
  explicit BasicTensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  /// Negative indices count from the back.
  std::size_t dim(std::ptrdiff_t axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  /// Copy of the values with no graph history.
  BasicTensor detach() const;
  bool all_finite() const;

  template <typename U>
  BasicTensor<U> cast(bool requires_grad = false) const {
    std::vector<U> out(node_->data.begin(), node_->data.end());
    return BasicTensor<U>(node_->shape, std::move(out), requires_grad);
  }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Ordered record of differentiable operations. Entries are appended as ops
/// run, so the record is already in topological order; backward walks it in
/// reverse. One tape per thread.
template <typename T>
class BasicTape {
 public:
  using NodePtr = std::shared_ptr<TensorNode<T>>;
  using BackwardFn = std::function<void(TensorNode<T>& output)>;

  struct Entry {
    std::vector<NodePtr> inputs;
    NodePtr output;
    BackwardFn backward;
  };

  void record(NodePtr output, std::vector<NodePtr> inputs, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable leaf.
  /// Leaf gradients accumulate; call reset() before another pass.
  void backward(const BasicTensor<T>& loss);

  void reset();
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

using Tape = BasicTape<float>;
using Tape64 = BasicTape<double>;

template <typename T>
BasicTape<T>*& active_tape();

/// Makes `tape` the active tape of the calling thread for the scope's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(BasicTape<T>& tape) : previous_(active_tape<T>()) { active_tape<T>() = &tape; }
  ~TapeScope() { active_tape<T>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  BasicTape<T>* previous_;
};

/// Disables recording for the scope (evaluation, generation).
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : previous_(active_tape<T>()) { active_tape<T>() = nullptr; }
  ~NoGradScope() { active_tape<T>() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  BasicTape<T>* previous_;
};

/// Backward on the calling thread's active tape.
template <typename T>
void backward(const BasicTensor<T>& loss);

/// Registers `output` as produced from `inputs` when recording is active and
/// any input tracks gradients. Returns true if an entry was recorded.
template <typename T>
bool record_op(const BasicTensor<T>& output, std::vector<std::shared_ptr<TensorNode<T>>> inputs,
               typename BasicTape<T>::BackwardFn backward_fn);

}  // namespace kvt
