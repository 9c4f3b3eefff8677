#pragma once

#include <memory>
#include <vector>

#include "kvt/tensor.hpp"

namespace kvt::detail {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

// Op outputs skip constructor validation: masked scores legitimately hold -inf.
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data) {
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return BasicTensor<T>(std::move(node));
}

}  // namespace kvt::detail
