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

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "athresh/error.hpp"

namespace athresh {

using index_t = std::int64_t;

/// Dimension sizes, outermost first. Rank-0 ({}) is a scalar with one
/// element.
using Shape = std::vector<index_t>;

index_t numel(const Shape& shape);
std::vector<index_t> row_major_strides(const Shape& shape);
std::string shape_str(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);

class Tape;

namespace detail {

/// Shared storage behind a Tensor handle. `grad` is sized iff
/// `requires_grad`; `tape` is non-null only while a live Tape is recording
/// operations on this tensor.
struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = false;
  Tape* tape = nullptr;
};

}  // namespace detail

/// Dense row-major tensor of doubles with optional gradient storage.
/// Copying a Tensor copies the handle, not the buffer; ops produce fresh
/// storage, so value semantics hold at the API surface.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  index_t rank() const { return static_cast<index_t>(node_->shape.size()); }
  index_t size() const { return static_cast<index_t>(node_->values.size()); }
  index_t dim(index_t axis) const;

  const std::vector<double>& values() const { return node_->values; }
  /// Direct write access to the value buffer. Intended for leaf tensors
  /// (parameter init, finite-difference probing); mutating an intermediate
  /// of a live tape invalidates recorded gradients.
  std::vector<double>& mutable_values() { return node_->values; }

  /// Sole element of a one-element tensor.
  double value() const;
  double operator[](index_t linear) const { return node_->values[static_cast<std::size_t>(linear)]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::vector<double>& grad() const;
  void zero_grad();

  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

/// Ordered record of executed operations. Ops append themselves in
/// execution order, which is a topological order of the data flow, and
/// backward() replays the record once, in reverse.
///
/// Gradient policy: leaf (watched) tensors accumulate gradient across
/// backward() calls until zero_grad(); gradients of op outputs are
/// re-derived on every call.
class Tape {
 public:
  Tape() = default;
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Marks `t` as a trainable leaf and attaches it to this tape. Existing
  /// gradient content is preserved (accumulation contract).
  Tensor& watch(Tensor& t);

  /// Reverse sweep from a scalar loss. Every requires_grad tensor
  /// reachable from `loss` ends up with a populated gradient.
  void backward(const Tensor& loss);

  /// Zeroes the gradient of every tensor this tape has touched.
  void zero_grad();

  std::size_t num_ops() const { return ops_.size(); }

  /// Appends one executed operation. `pull` reads the gradients of
  /// `outputs` and accumulates into the gradients of the op's inputs.
  void record(std::vector<std::shared_ptr<detail::TensorNode>> outputs, std::function<void()> pull);

 private:
  struct Op {
    std::vector<std::shared_ptr<detail::TensorNode>> outputs;
    std::function<void()> pull;
  };
  std::vector<Op> ops_;
  std::vector<std::shared_ptr<detail::TensorNode>> tracked_;
};

namespace detail {

/// The unique live tape among `inputs`, or nullptr when none is attached.
/// Two distinct tapes in one op is a contract violation.
Tape* tape_for(std::initializer_list<const Tensor*> inputs);

/// Attaches `out` to `tape` as a differentiable intermediate.
void attach_output(const Tensor& out, Tape* tape);

/// Accumulates src into dst (same length).
void axpy(std::vector<double>& dst, const std::vector<double>& src);

}  // namespace detail

}  // namespace athresh
