// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "manager/tensor.hpp"

namespace manager::detail {

// Builds the result node of an operation. The backward rule and input
// references are only kept when grad mode is on and an input needs grads.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward);
Tensor make_result(Shape shape, std::vector<double> value,
                   const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward);

inline bool wants_grad(const std::shared_ptr<Node>& n) { return n->requires_grad; }

}  // namespace manager::detail
