/*
 * Copyright 2026 The athresh Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "athresh/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace athresh {

index_t numel(const Shape& shape) {
  index_t n = 1;
  for (index_t d : shape) n *= d;
  return n;
}

std::vector<index_t> row_major_strides(const Shape& shape) {
  std::vector<index_t> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    strides[i] = strides[i + 1] * shape[i + 1];
  }
  return strides;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

Tensor::Tensor(Shape shape, double fill) {
  for (index_t d : shape) {
    if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(shape));
  }
  node_ = std::make_shared<detail::TensorNode>();
  node_->shape = std::move(shape);
  node_->values.assign(static_cast<std::size_t>(numel(node_->shape)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  for (index_t d : shape) {
    if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(shape));
  }
  if (numel(shape) != static_cast<index_t>(values.size())) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  node_ = std::make_shared<detail::TensorNode>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

index_t Tensor::dim(index_t axis) const {
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

double Tensor::value() const {
  if (size() != 1) {
    throw ContractError("value() requires a one-element tensor, got " + shape_str(shape()));
  }
  return node_->values[0];
}

const std::vector<double>& Tensor::grad() const {
  if (!requires_grad()) throw ContractError("grad() on a tensor without gradient storage");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (requires_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tape::~Tape() {
  for (auto& n : tracked_) {
    if (n->tape == this) n->tape = nullptr;
  }
}

Tensor& Tape::watch(Tensor& t) {
  if (!t.defined()) throw ContractError("watch() on an undefined tensor");
  auto n = t.node();
  if (n->tape != nullptr && n->tape != this) {
    throw ContractError("tensor is already attached to another tape");
  }
  if (!n->requires_grad) {
    n->requires_grad = true;
    n->grad.assign(n->values.size(), 0.0);
  }
  n->leaf = true;
  if (n->tape != this) {
    n->tape = this;
    tracked_.push_back(n);
  }
  return t;
}

void Tape::record(std::vector<std::shared_ptr<detail::TensorNode>> outputs, std::function<void()> pull) {
  for (auto& o : outputs) tracked_.push_back(o);
  ops_.push_back(Op{std::move(outputs), std::move(pull)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (ops_.empty()) throw ContractError("backward() on an empty tape");
  if (!loss.requires_grad() || loss.node()->tape != this) {
    throw ContractError("loss tensor is not a differentiable output of this tape");
  }
  // Non-leaf gradients are re-derived per call; leaves keep accumulating.
  for (auto& op : ops_) {
    for (auto& o : op.outputs) {
      if (!o->leaf) std::fill(o->grad.begin(), o->grad.end(), 0.0);
    }
  }
  loss.node()->grad[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    it->pull();
  }
}

void Tape::zero_grad() {
  for (auto& n : tracked_) {
    if (n->requires_grad) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  }
}

namespace detail {

Tape* tape_for(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->defined()) continue;
    Tape* candidate = t->node()->tape;
    if (candidate == nullptr) continue;
    if (tape != nullptr && tape != candidate) {
      throw ContractError("operation mixes tensors from two different tapes");
    }
    tape = candidate;
  }
  return tape;
}

void attach_output(const Tensor& out, Tape* tape) {
  auto n = out.node();
  n->requires_grad = true;
  n->grad.assign(n->values.size(), 0.0);
  n->leaf = false;
  n->tape = tape;
}

void axpy(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

}  // namespace athresh
