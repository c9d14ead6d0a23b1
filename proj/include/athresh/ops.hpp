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

#include <vector>

#include "athresh/tensor.hpp"

namespace athresh {

// Differentiable free functions over Tensor. Each op computes its result
// eagerly; when an input is attached to a live Tape the op also records a
// pull-back closure, so the same code path serves both training and
// frozen-weight inference.
//
// Broadcasting is deliberately narrow: equal shapes, or a one-element
// tensor against anything.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, double b);
Tensor sub(double a, const Tensor& b);
Tensor mul(const Tensor& a, double b);
Tensor div(const Tensor& a, double b);
Tensor div(double a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
/// Domain: strictly positive inputs.
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
/// Gradient passes only strictly inside (lo, hi).
Tensor clamp(const Tensor& a, double lo, double hi);

/// a[n x k] * b[k x m] -> [n x m].
Tensor matmul(const Tensor& a, const Tensor& b);
/// 2-D transpose.
Tensor transpose(const Tensor& a);

Tensor reduce_sum(const Tensor& a, std::vector<index_t> axes);
Tensor reduce_mean(const Tensor& a, std::vector<index_t> axes);
/// Ties route gradient to the first maximum in row-major order.
Tensor reduce_max(const Tensor& a, std::vector<index_t> axes);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

/// Max-stabilized softmax along `axis`; slices sum to 1.
Tensor softmax(const Tensor& a, index_t axis);

/// Layer normalization along `axis` with learnable gain/bias of shape
/// [dim(axis)]. Epsilon fixed at 1e-5; axis length must be >= 2.
Tensor layernorm(const Tensor& a, const Tensor& gain, const Tensor& bias, index_t axis);

/// a[B x Ci x H x W] (*) kernel[Co x Ci/groups x k x k], odd square kernel,
/// zero padding. groups == Ci with Ci/groups == 1 gives the depthwise case.
Tensor conv2d(const Tensor& a, const Tensor& kernel, index_t stride, index_t padding,
              index_t groups = 1);

/// Adds b[dim(axis)] along `axis` of a.
Tensor bias_add(const Tensor& a, const Tensor& b, index_t axis);

Tensor concat(const std::vector<Tensor>& parts, index_t axis);
/// sizes must sum to dim(axis); split(concat(xs)) == xs bit-exactly.
std::vector<Tensor> split(const Tensor& a, const std::vector<index_t>& sizes, index_t axis);
Tensor narrow(const Tensor& a, index_t axis, index_t start, index_t len);

Tensor reshape(const Tensor& a, Shape shape);
/// perm[i] = input axis placed at output position i.
Tensor permute(const Tensor& a, const std::vector<index_t>& perm);

/// Bilinear resize of a[B x C x h x w] to [B x C x H x W]; align-corners
/// false, edge-clamped source coordinates:
///   src = clamp((dst + 0.5) * in/out - 0.5, 0, in - 1).
Tensor upsample_bilinear(const Tensor& a, index_t out_h, index_t out_w);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator+(double a, const Tensor& b) { return add(b, a); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, b); }
inline Tensor operator-(double a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }
inline Tensor operator/(const Tensor& a, double b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace athresh
