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

#include "athresh/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace athresh {

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<detail::TensorNode>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class BCast { Same, AScalar, BScalar };

BCast bcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (same_shape(a.shape(), b.shape())) return BCast::Same;
  if (a.size() == 1) return BCast::AScalar;
  if (b.size() == 1) return BCast::BScalar;
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()) + " are neither equal nor scalar-broadcastable");
}

Shape bcast_shape(const Tensor& a, const Tensor& b, BCast k) {
  return k == BCast::AScalar ? b.shape() : a.shape();
}

// index = (outer * len + l) * inner + i
struct AxisView {
  index_t outer;
  index_t len;
  index_t inner;
};

AxisView axis_view(const Shape& s, index_t axis) {
  AxisView v{1, s[static_cast<std::size_t>(axis)], 1};
  for (index_t d = 0; d < axis; ++d) v.outer *= s[static_cast<std::size_t>(d)];
  for (index_t d = axis + 1; d < static_cast<index_t>(s.size()); ++d) {
    v.inner *= s[static_cast<std::size_t>(d)];
  }
  return v;
}

index_t check_axis(const Tensor& a, index_t axis, const char* op) {
  if (axis < 0 || axis >= a.rank()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " +
                     shape_str(a.shape()));
  }
  return axis;
}

// Records `pull` when any input carries a live tape; returns that tape.
template <typename Pull>
void maybe_record(const Tensor& out, std::initializer_list<const Tensor*> inputs, Pull&& pull) {
  Tape* tape = detail::tape_for(inputs);
  if (tape == nullptr) return;
  detail::attach_output(out, tape);
  tape->record({out.node()}, std::forward<Pull>(pull));
}

// Elementwise binary helper. fwd(av, bv) -> value; pull receives the two
// broadcast source indices and the output gradient.
template <typename Fwd, typename PullA, typename PullB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, PullA dfa, PullB dfb) {
  const BCast k = bcast_kind(a, b, name);
  Tensor out(bcast_shape(a, b, k));
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  const auto& bv = b.values();
  const std::size_t n = ov.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = (k == BCast::AScalar) ? av[0] : av[i];
    const double y = (k == BCast::BScalar) ? bv[0] : bv[i];
    ov[i] = fwd(x, y);
  }
  maybe_record(out, {&a, &b}, [an = a.node(), bn = b.node(), on = out.node(), k, dfa, dfb] {
    const auto& g = on->grad;
    const std::size_t n = g.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ia = (k == BCast::AScalar) ? 0 : i;
      const std::size_t ib = (k == BCast::BScalar) ? 0 : i;
      const double x = an->values[ia];
      const double y = bn->values[ib];
      if (an->requires_grad) an->grad[ia] += g[i] * dfa(x, y);
      if (bn->requires_grad) bn->grad[ib] += g[i] * dfb(x, y);
    }
  });
  return out;
}

// Elementwise unary helper; pull gets (x, y, g) where y is the output value.
template <typename Fwd, typename Df>
Tensor unary_op(const Tensor& a, Fwd fwd, Df df) {
  Tensor out(a.shape());
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i]);
  maybe_record(out, {&a}, [an = a.node(), on = out.node(), df] {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < on->grad.size(); ++i) {
      an->grad[i] += on->grad[i] * df(an->values[i], on->values[i]);
    }
  });
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double y : b.values()) {
    if (y == 0.0) throw DomainError("div: division by zero");
  }
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor add(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor sub(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
Tensor sub(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
Tensor mul(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
Tensor div(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }
Tensor div(double a, const Tensor& b) { return div(Tensor::scalar(a), b); }

Tensor neg(const Tensor& a) {
  return unary_op(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& a) {
  return unary_op(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double x : a.values()) {
    if (x <= 0.0) throw DomainError("log: input " + std::to_string(x) + " outside domain (0, inf)");
  }
  return unary_op(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo < hi)) throw ContractError("clamp: lo must be < hi");
  return unary_op(
      a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: expects 2-D operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const index_t n = a.dim(0), k = a.dim(1), k2 = b.dim(0), m = b.dim(1);
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor out(Shape{n, m});
  {
    Eigen::Map<const RowMat> A(a.values().data(), n, k);
    Eigen::Map<const RowMat> B(b.values().data(), k, m);
    Eigen::Map<RowMat> C(out.mutable_values().data(), n, m);
    C.noalias() = A * B;
  }
  maybe_record(out, {&a, &b}, [an = a.node(), bn = b.node(), on = out.node(), n, k, m] {
    Eigen::Map<const RowMat> A(an->values.data(), n, k);
    Eigen::Map<const RowMat> B(bn->values.data(), k, m);
    Eigen::Map<const RowMat> G(on->grad.data(), n, m);
    if (an->requires_grad) {
      Eigen::Map<RowMat> dA(an->grad.data(), n, k);
      dA.noalias() += G * B.transpose();
    }
    if (bn->requires_grad) {
      Eigen::Map<RowMat> dB(bn->grad.data(), k, m);
      dB.noalias() += A.transpose() * G;
    }
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expects a 2-D tensor, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

namespace {

std::vector<index_t> normalize_axes(const Tensor& a, std::vector<index_t> axes, const char* op) {
  if (axes.empty()) throw ShapeError(std::string(op) + ": empty axis list");
  std::sort(axes.begin(), axes.end());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    check_axis(a, axes[i], op);
    if (i > 0 && axes[i] == axes[i - 1]) {
      throw ShapeError(std::string(op) + ": duplicate axis " + std::to_string(axes[i]));
    }
  }
  return axes;
}

struct ReducePlan {
  Shape out_shape;
  std::vector<index_t> out_index;  // per input linear index
  index_t count = 1;               // elements folded into each output cell
};

ReducePlan reduce_plan(const Tensor& a, const std::vector<index_t>& axes) {
  const index_t rank = a.rank();
  std::vector<bool> reduced(static_cast<std::size_t>(rank), false);
  ReducePlan plan;
  for (index_t ax : axes) {
    reduced[static_cast<std::size_t>(ax)] = true;
    plan.count *= a.dim(ax);
  }
  for (index_t d = 0; d < rank; ++d) {
    if (!reduced[static_cast<std::size_t>(d)]) plan.out_shape.push_back(a.dim(d));
  }
  const auto out_strides = row_major_strides(plan.out_shape);
  std::vector<index_t> contrib(static_cast<std::size_t>(rank), 0);
  for (index_t d = 0, o = 0; d < rank; ++d) {
    if (!reduced[static_cast<std::size_t>(d)]) contrib[static_cast<std::size_t>(d)] = out_strides[static_cast<std::size_t>(o++)];
  }
  const index_t n = a.size();
  plan.out_index.resize(static_cast<std::size_t>(n));
  std::vector<index_t> coord(static_cast<std::size_t>(rank), 0);
  index_t out_lin = 0;
  for (index_t i = 0; i < n; ++i) {
    plan.out_index[static_cast<std::size_t>(i)] = out_lin;
    for (index_t d = rank - 1; d >= 0; --d) {
      auto du = static_cast<std::size_t>(d);
      out_lin += contrib[du];
      if (++coord[du] < a.dim(d)) break;
      coord[du] = 0;
      out_lin -= contrib[du] * a.dim(d);
    }
  }
  return plan;
}

}  // namespace

Tensor reduce_sum(const Tensor& a, std::vector<index_t> axes) {
  axes = normalize_axes(a, std::move(axes), "reduce_sum");
  ReducePlan plan = reduce_plan(a, axes);
  Tensor out(plan.out_shape, 0.0);
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[static_cast<std::size_t>(plan.out_index[i])] += av[i];
  maybe_record(out, {&a}, [an = a.node(), on = out.node(), idx = std::move(plan.out_index)] {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < an->grad.size(); ++i) {
      an->grad[i] += on->grad[static_cast<std::size_t>(idx[i])];
    }
  });
  return out;
}

Tensor reduce_mean(const Tensor& a, std::vector<index_t> axes) {
  axes = normalize_axes(a, std::move(axes), "reduce_mean");
  ReducePlan plan = reduce_plan(a, axes);
  const double inv = 1.0 / static_cast<double>(plan.count);
  Tensor out(plan.out_shape, 0.0);
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[static_cast<std::size_t>(plan.out_index[i])] += av[i];
  for (double& v : ov) v *= inv;
  maybe_record(out, {&a}, [an = a.node(), on = out.node(), idx = std::move(plan.out_index), inv] {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < an->grad.size(); ++i) {
      an->grad[i] += on->grad[static_cast<std::size_t>(idx[i])] * inv;
    }
  });
  return out;
}

Tensor reduce_max(const Tensor& a, std::vector<index_t> axes) {
  axes = normalize_axes(a, std::move(axes), "reduce_max");
  ReducePlan plan = reduce_plan(a, axes);
  Tensor out(plan.out_shape, -std::numeric_limits<double>::infinity());
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  std::vector<index_t> argmax(ov.size(), -1);
  for (std::size_t i = 0; i < av.size(); ++i) {
    const auto o = static_cast<std::size_t>(plan.out_index[i]);
    if (av[i] > ov[o]) {  // strict: first maximum wins
      ov[o] = av[i];
      argmax[o] = static_cast<index_t>(i);
    }
  }
  maybe_record(out, {&a}, [an = a.node(), on = out.node(), argmax = std::move(argmax)] {
    if (!an->requires_grad) return;
    for (std::size_t o = 0; o < argmax.size(); ++o) {
      an->grad[static_cast<std::size_t>(argmax[o])] += on->grad[o];
    }
  });
  return out;
}

Tensor sum_all(const Tensor& a) {
  std::vector<index_t> axes(static_cast<std::size_t>(a.rank()));
  for (index_t d = 0; d < a.rank(); ++d) axes[static_cast<std::size_t>(d)] = d;
  if (axes.empty()) return add(a, 0.0);  // rank-0: identity up to graph plumbing
  return reduce_sum(a, std::move(axes));
}

Tensor mean_all(const Tensor& a) {
  std::vector<index_t> axes(static_cast<std::size_t>(a.rank()));
  for (index_t d = 0; d < a.rank(); ++d) axes[static_cast<std::size_t>(d)] = d;
  if (axes.empty()) return add(a, 0.0);
  return reduce_mean(a, std::move(axes));
}

Tensor softmax(const Tensor& a, index_t axis) {
  check_axis(a, axis, "softmax");
  const AxisView v = axis_view(a.shape(), axis);
  Tensor out(a.shape());
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  for (index_t o = 0; o < v.outer; ++o) {
    for (index_t i = 0; i < v.inner; ++i) {
      const index_t base = o * v.len * v.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (index_t l = 0; l < v.len; ++l) mx = std::max(mx, av[static_cast<std::size_t>(base + l * v.inner)]);
      double sum = 0.0;
      for (index_t l = 0; l < v.len; ++l) {
        const auto p = static_cast<std::size_t>(base + l * v.inner);
        ov[p] = std::exp(av[p] - mx);
        sum += ov[p];
      }
      const double inv = 1.0 / sum;
      for (index_t l = 0; l < v.len; ++l) ov[static_cast<std::size_t>(base + l * v.inner)] *= inv;
    }
  }
  maybe_record(out, {&a}, [an = a.node(), on = out.node(), v] {
    if (!an->requires_grad) return;
    for (index_t o = 0; o < v.outer; ++o) {
      for (index_t i = 0; i < v.inner; ++i) {
        const index_t base = o * v.len * v.inner + i;
        double dot = 0.0;
        for (index_t l = 0; l < v.len; ++l) {
          const auto p = static_cast<std::size_t>(base + l * v.inner);
          dot += on->grad[p] * on->values[p];
        }
        for (index_t l = 0; l < v.len; ++l) {
          const auto p = static_cast<std::size_t>(base + l * v.inner);
          an->grad[p] += on->values[p] * (on->grad[p] - dot);
        }
      }
    }
  });
  return out;
}

Tensor layernorm(const Tensor& a, const Tensor& gain, const Tensor& bias, index_t axis) {
  check_axis(a, axis, "layernorm");
  const index_t len = a.dim(axis);
  if (len < 2) {
    throw DegenerateInputError("layernorm: axis length " + std::to_string(len) + " < 2");
  }
  const Shape param_shape{len};
  if (!same_shape(gain.shape(), param_shape) || !same_shape(bias.shape(), param_shape)) {
    throw ShapeError("layernorm: gain/bias must have shape " + shape_str(param_shape) + ", got " +
                     shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  }
  constexpr double kEps = 1e-5;
  const AxisView v = axis_view(a.shape(), axis);
  Tensor out(a.shape());
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  // Per-slice statistics are recomputed in the pull-back from the stored
  // inputs rather than cached; slices are short so this is cheap.
  for (index_t o = 0; o < v.outer; ++o) {
    for (index_t i = 0; i < v.inner; ++i) {
      const index_t base = o * v.len * v.inner + i;
      double mean = 0.0;
      for (index_t l = 0; l < v.len; ++l) mean += av[static_cast<std::size_t>(base + l * v.inner)];
      mean /= static_cast<double>(v.len);
      double var = 0.0;
      for (index_t l = 0; l < v.len; ++l) {
        const double d = av[static_cast<std::size_t>(base + l * v.inner)] - mean;
        var += d * d;
      }
      var /= static_cast<double>(v.len);
      const double inv_std = 1.0 / std::sqrt(var + kEps);
      for (index_t l = 0; l < v.len; ++l) {
        const auto p = static_cast<std::size_t>(base + l * v.inner);
        const double xhat = (av[p] - mean) * inv_std;
        ov[p] = gv[static_cast<std::size_t>(l)] * xhat + bv[static_cast<std::size_t>(l)];
      }
    }
  }
  maybe_record(out, {&a, &gain, &bias},
               [an = a.node(), gn = gain.node(), bn = bias.node(), on = out.node(), v] {
                 const double n = static_cast<double>(v.len);
                 for (index_t o = 0; o < v.outer; ++o) {
                   for (index_t i = 0; i < v.inner; ++i) {
                     const index_t base = o * v.len * v.inner + i;
                     double mean = 0.0;
                     for (index_t l = 0; l < v.len; ++l) mean += an->values[static_cast<std::size_t>(base + l * v.inner)];
                     mean /= n;
                     double var = 0.0;
                     for (index_t l = 0; l < v.len; ++l) {
                       const double d = an->values[static_cast<std::size_t>(base + l * v.inner)] - mean;
                       var += d * d;
                     }
                     var /= n;
                     const double inv_std = 1.0 / std::sqrt(var + 1e-5);
                     // dxhat terms
                     double sum_dxhat = 0.0;
                     double sum_dxhat_xhat = 0.0;
                     for (index_t l = 0; l < v.len; ++l) {
                       const auto p = static_cast<std::size_t>(base + l * v.inner);
                       const double xhat = (an->values[p] - mean) * inv_std;
                       const double dxhat = on->grad[p] * gn->values[static_cast<std::size_t>(l)];
                       sum_dxhat += dxhat;
                       sum_dxhat_xhat += dxhat * xhat;
                       if (gn->requires_grad) gn->grad[static_cast<std::size_t>(l)] += on->grad[p] * xhat;
                       if (bn->requires_grad) bn->grad[static_cast<std::size_t>(l)] += on->grad[p];
                     }
                     if (an->requires_grad) {
                       for (index_t l = 0; l < v.len; ++l) {
                         const auto p = static_cast<std::size_t>(base + l * v.inner);
                         const double xhat = (an->values[p] - mean) * inv_std;
                         const double dxhat = on->grad[p] * gn->values[static_cast<std::size_t>(l)];
                         an->grad[p] += inv_std * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
                       }
                     }
                   }
                 }
               });
  return out;
}

Tensor conv2d(const Tensor& a, const Tensor& kernel, index_t stride, index_t padding, index_t groups) {
  if (a.rank() != 4 || kernel.rank() != 4) {
    throw ShapeError("conv2d: expects input [BxCxHxW] and kernel [Co x Ci/g x k x k], got " +
                     shape_str(a.shape()) + " and " + shape_str(kernel.shape()));
  }
  const index_t batch = a.dim(0), cin = a.dim(1), in_h = a.dim(2), in_w = a.dim(3);
  const index_t cout = kernel.dim(0), kcin = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kh != kw || kh % 2 == 0) {
    throw ShapeError("conv2d: kernel must be odd and square, got " + shape_str(kernel.shape()));
  }
  if (stride < 1 || padding < 0 || groups < 1) throw ConfigError("conv2d: bad stride/padding/groups");
  if (cin % groups != 0 || cout % groups != 0 || kcin != cin / groups) {
    throw ShapeError("conv2d: channel counts incompatible, input " + shape_str(a.shape()) +
                     " kernel " + shape_str(kernel.shape()) + " groups " + std::to_string(groups));
  }
  const index_t out_h = (in_h + 2 * padding - kh) / stride + 1;
  const index_t out_w = (in_w + 2 * padding - kw) / stride + 1;
  if (out_h < 1 || out_w < 1) {
    throw ShapeError("conv2d: output would be empty for input " + shape_str(a.shape()));
  }
  const index_t cpg_out = cout / groups;

  Tensor out(Shape{batch, cout, out_h, out_w});
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  const auto& kv = kernel.values();
  auto in_at = [cin, in_h, in_w](index_t b, index_t c, index_t y, index_t x) {
    return static_cast<std::size_t>(((b * cin + c) * in_h + y) * in_w + x);
  };
  auto k_at = [kcin, kh, kw](index_t oc, index_t c, index_t y, index_t x) {
    return static_cast<std::size_t>(((oc * kcin + c) * kh + y) * kw + x);
  };
  auto out_at = [cout, out_h, out_w](index_t b, index_t oc, index_t y, index_t x) {
    return static_cast<std::size_t>(((b * cout + oc) * out_h + y) * out_w + x);
  };
  for (index_t b = 0; b < batch; ++b) {
    for (index_t oc = 0; oc < cout; ++oc) {
      const index_t ic0 = (oc / cpg_out) * kcin;
      for (index_t oy = 0; oy < out_h; ++oy) {
        for (index_t ox = 0; ox < out_w; ++ox) {
          double acc = 0.0;
          for (index_t c = 0; c < kcin; ++c) {
            for (index_t ky = 0; ky < kh; ++ky) {
              const index_t iy = oy * stride - padding + ky;
              if (iy < 0 || iy >= in_h) continue;
              for (index_t kx = 0; kx < kw; ++kx) {
                const index_t ix = ox * stride - padding + kx;
                if (ix < 0 || ix >= in_w) continue;
                acc += av[in_at(b, ic0 + c, iy, ix)] * kv[k_at(oc, c, ky, kx)];
              }
            }
          }
          ov[out_at(b, oc, oy, ox)] = acc;
        }
      }
    }
  }
  maybe_record(out, {&a, &kernel},
               [an = a.node(), kn = kernel.node(), on = out.node(), batch, cin, in_h, in_w, cout,
                kcin, kh, kw, out_h, out_w, stride, padding, cpg_out, in_at, k_at, out_at] {
                 for (index_t b = 0; b < batch; ++b) {
                   for (index_t oc = 0; oc < cout; ++oc) {
                     const index_t ic0 = (oc / cpg_out) * kcin;
                     for (index_t oy = 0; oy < out_h; ++oy) {
                       for (index_t ox = 0; ox < out_w; ++ox) {
                         const double g = on->grad[out_at(b, oc, oy, ox)];
                         if (g == 0.0) continue;
                         for (index_t c = 0; c < kcin; ++c) {
                           for (index_t ky = 0; ky < kh; ++ky) {
                             const index_t iy = oy * stride - padding + ky;
                             if (iy < 0 || iy >= in_h) continue;
                             for (index_t kx = 0; kx < kw; ++kx) {
                               const index_t ix = ox * stride - padding + kx;
                               if (ix < 0 || ix >= in_w) continue;
                               if (an->requires_grad) {
                                 an->grad[in_at(b, ic0 + c, iy, ix)] += g * kn->values[k_at(oc, c, ky, kx)];
                               }
                               if (kn->requires_grad) {
                                 kn->grad[k_at(oc, c, ky, kx)] += g * an->values[in_at(b, ic0 + c, iy, ix)];
                               }
                             }
                           }
                         }
                       }
                     }
                   }
                 }
               });
  return out;
}

Tensor bias_add(const Tensor& a, const Tensor& b, index_t axis) {
  check_axis(a, axis, "bias_add");
  if (b.rank() != 1 || b.dim(0) != a.dim(axis)) {
    throw ShapeError("bias_add: bias " + shape_str(b.shape()) + " does not match axis " +
                     std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  const AxisView v = axis_view(a.shape(), axis);
  Tensor out(a.shape());
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  const auto& bv = b.values();
  for (index_t o = 0; o < v.outer; ++o) {
    for (index_t l = 0; l < v.len; ++l) {
      const index_t base = (o * v.len + l) * v.inner;
      const double bias = bv[static_cast<std::size_t>(l)];
      for (index_t i = 0; i < v.inner; ++i) {
        ov[static_cast<std::size_t>(base + i)] = av[static_cast<std::size_t>(base + i)] + bias;
      }
    }
  }
  maybe_record(out, {&a, &b}, [an = a.node(), bn = b.node(), on = out.node(), v] {
    if (an->requires_grad) detail::axpy(an->grad, on->grad);
    if (bn->requires_grad) {
      for (index_t o = 0; o < v.outer; ++o) {
        for (index_t l = 0; l < v.len; ++l) {
          const index_t base = (o * v.len + l) * v.inner;
          double s = 0.0;
          for (index_t i = 0; i < v.inner; ++i) s += on->grad[static_cast<std::size_t>(base + i)];
          bn->grad[static_cast<std::size_t>(l)] += s;
        }
      }
    }
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, index_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const index_t rank = parts[0].rank();
  check_axis(parts[0], axis, "concat");
  index_t axis_total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank) {
      throw ShapeError("concat: rank mismatch, " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    for (index_t d = 0; d < rank; ++d) {
      if (d != axis && p.dim(d) != parts[0].dim(d)) {
        throw ShapeError("concat: non-axis dims differ, " + shape_str(parts[0].shape()) + " vs " +
                         shape_str(p.shape()));
      }
    }
    axis_total += p.dim(axis);
  }
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<std::size_t>(axis)] = axis_total;
  Tensor out(out_shape);
  const AxisView ov_view = axis_view(out_shape, axis);
  auto& ov = out.mutable_values();
  index_t offset = 0;
  for (const Tensor& p : parts) {
    const index_t len = p.dim(axis);
    const auto& pv = p.values();
    for (index_t o = 0; o < ov_view.outer; ++o) {
      const index_t dst = (o * axis_total + offset) * ov_view.inner;
      const index_t src = o * len * ov_view.inner;
      std::copy_n(pv.begin() + src, len * ov_view.inner, ov.begin() + dst);
    }
    offset += len;
  }
  std::vector<const Tensor*> input_ptrs;
  input_ptrs.reserve(parts.size());
  for (const Tensor& p : parts) input_ptrs.push_back(&p);
  Tape* tape = nullptr;
  for (const Tensor* p : input_ptrs) {
    Tape* t = detail::tape_for({p});
    if (t != nullptr) {
      if (tape != nullptr && tape != t) throw ContractError("concat: inputs on different tapes");
      tape = t;
    }
  }
  if (tape != nullptr) {
    std::vector<NodePtr> in_nodes;
    in_nodes.reserve(parts.size());
    for (const Tensor& p : parts) in_nodes.push_back(p.node());
    detail::attach_output(out, tape);
    tape->record({out.node()}, [in_nodes, on = out.node(), ov_view, axis_total] {
      index_t offset = 0;
      for (const auto& pn : in_nodes) {
        const index_t part_len =
            static_cast<index_t>(pn->values.size()) / (ov_view.outer * ov_view.inner);
        if (pn->requires_grad) {
          for (index_t o = 0; o < ov_view.outer; ++o) {
            const index_t src = (o * axis_total + offset) * ov_view.inner;
            const index_t dst = o * part_len * ov_view.inner;
            for (index_t j = 0; j < part_len * ov_view.inner; ++j) {
              pn->grad[static_cast<std::size_t>(dst + j)] += on->grad[static_cast<std::size_t>(src + j)];
            }
          }
        }
        offset += part_len;
      }
    });
  }
  return out;
}

std::vector<Tensor> split(const Tensor& a, const std::vector<index_t>& sizes, index_t axis) {
  check_axis(a, axis, "split");
  index_t total = 0;
  for (index_t s : sizes) {
    if (s <= 0) throw ShapeError("split: sizes must be positive");
    total += s;
  }
  if (total != a.dim(axis)) {
    throw ShapeError("split: sizes sum to " + std::to_string(total) + " but axis " +
                     std::to_string(axis) + " of " + shape_str(a.shape()) + " has length " +
                     std::to_string(a.dim(axis)));
  }
  const AxisView v = axis_view(a.shape(), axis);
  const auto& av = a.values();
  std::vector<Tensor> parts;
  parts.reserve(sizes.size());
  index_t offset = 0;
  for (index_t len : sizes) {
    Shape s = a.shape();
    s[static_cast<std::size_t>(axis)] = len;
    Tensor p(s);
    auto& pv = p.mutable_values();
    for (index_t o = 0; o < v.outer; ++o) {
      const index_t src = (o * v.len + offset) * v.inner;
      const index_t dst = o * len * v.inner;
      std::copy_n(av.begin() + src, len * v.inner, pv.begin() + dst);
    }
    parts.push_back(std::move(p));
    offset += len;
  }
  if (Tape* tape = detail::tape_for({&a})) {
    std::vector<NodePtr> out_nodes;
    out_nodes.reserve(parts.size());
    for (Tensor& p : parts) {
      detail::attach_output(p, tape);
      out_nodes.push_back(p.node());
    }
    tape->record(out_nodes, [an = a.node(), out_nodes, sizes, v] {
      if (!an->requires_grad) return;
      index_t offset = 0;
      for (std::size_t k = 0; k < out_nodes.size(); ++k) {
        const index_t len = sizes[k];
        for (index_t o = 0; o < v.outer; ++o) {
          const index_t dst = (o * v.len + offset) * v.inner;
          const index_t src = o * len * v.inner;
          for (index_t j = 0; j < len * v.inner; ++j) {
            an->grad[static_cast<std::size_t>(dst + j)] += out_nodes[k]->grad[static_cast<std::size_t>(src + j)];
          }
        }
        offset += len;
      }
    });
  }
  return parts;
}

Tensor narrow(const Tensor& a, index_t axis, index_t start, index_t len) {
  check_axis(a, axis, "narrow");
  if (start < 0 || len <= 0 || start + len > a.dim(axis)) {
    throw ShapeError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") invalid for axis " + std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  const AxisView v = axis_view(a.shape(), axis);
  Shape s = a.shape();
  s[static_cast<std::size_t>(axis)] = len;
  Tensor out(s);
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  for (index_t o = 0; o < v.outer; ++o) {
    std::copy_n(av.begin() + (o * v.len + start) * v.inner, len * v.inner,
                ov.begin() + o * len * v.inner);
  }
  maybe_record(out, {&a}, [an = a.node(), on = out.node(), v, start, len] {
    if (!an->requires_grad) return;
    for (index_t o = 0; o < v.outer; ++o) {
      const index_t dst = (o * v.len + start) * v.inner;
      const index_t src = o * len * v.inner;
      for (index_t j = 0; j < len * v.inner; ++j) {
        an->grad[static_cast<std::size_t>(dst + j)] += on->grad[static_cast<std::size_t>(src + j)];
      }
    }
  });
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), a.values());
  maybe_record(out, {&a}, [an = a.node(), on = out.node()] {
    if (an->requires_grad) detail::axpy(an->grad, on->grad);
  });
  return out;
}

Tensor permute(const Tensor& a, const std::vector<index_t>& perm) {
  const index_t rank = a.rank();
  if (static_cast<index_t>(perm.size()) != rank) {
    throw ShapeError("permute: perm size " + std::to_string(perm.size()) + " != rank " +
                     std::to_string(rank));
  }
  std::vector<bool> seen(static_cast<std::size_t>(rank), false);
  for (index_t p : perm) {
    if (p < 0 || p >= rank || seen[static_cast<std::size_t>(p)]) {
      throw ShapeError("permute: invalid permutation for rank " + std::to_string(rank));
    }
    seen[static_cast<std::size_t>(p)] = true;
  }
  Shape out_shape(static_cast<std::size_t>(rank));
  for (index_t i = 0; i < rank; ++i) out_shape[static_cast<std::size_t>(i)] = a.dim(perm[static_cast<std::size_t>(i)]);
  const auto out_strides = row_major_strides(out_shape);
  // contrib[d] = stride of input axis d in the output layout
  std::vector<index_t> contrib(static_cast<std::size_t>(rank), 0);
  for (index_t i = 0; i < rank; ++i) {
    contrib[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = out_strides[static_cast<std::size_t>(i)];
  }
  const index_t n = a.size();
  std::vector<index_t> out_index(static_cast<std::size_t>(n));
  std::vector<index_t> coord(static_cast<std::size_t>(rank), 0);
  index_t out_lin = 0;
  for (index_t i = 0; i < n; ++i) {
    out_index[static_cast<std::size_t>(i)] = out_lin;
    for (index_t d = rank - 1; d >= 0; --d) {
      auto du = static_cast<std::size_t>(d);
      out_lin += contrib[du];
      if (++coord[du] < a.dim(d)) break;
      coord[du] = 0;
      out_lin -= contrib[du] * a.dim(d);
    }
  }
  Tensor out(out_shape);
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[static_cast<std::size_t>(out_index[i])] = av[i];
  maybe_record(out, {&a}, [an = a.node(), on = out.node(), out_index = std::move(out_index)] {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < an->grad.size(); ++i) {
      an->grad[i] += on->grad[static_cast<std::size_t>(out_index[i])];
    }
  });
  return out;
}

Tensor upsample_bilinear(const Tensor& a, index_t out_h, index_t out_w) {
  if (a.rank() != 4) {
    throw ShapeError("upsample_bilinear: expects [BxCxHxW], got " + shape_str(a.shape()));
  }
  if (out_h < 1 || out_w < 1) throw ShapeError("upsample_bilinear: bad output size");
  const index_t batch = a.dim(0), ch = a.dim(1), in_h = a.dim(2), in_w = a.dim(3);

  struct Lerp {
    index_t i0, i1;
    double w1;  // weight of i1; i0 gets 1-w1
  };
  auto build = [](index_t in_n, index_t out_n) {
    std::vector<Lerp> m(static_cast<std::size_t>(out_n));
    const double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
    for (index_t o = 0; o < out_n; ++o) {
      double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
      src = std::min(std::max(src, 0.0), static_cast<double>(in_n - 1));
      const auto i0 = static_cast<index_t>(std::floor(src));
      const index_t i1 = std::min(i0 + 1, in_n - 1);
      m[static_cast<std::size_t>(o)] = Lerp{i0, i1, src - static_cast<double>(i0)};
    }
    return m;
  };
  const auto ys = build(in_h, out_h);
  const auto xs = build(in_w, out_w);

  Tensor out(Shape{batch, ch, out_h, out_w});
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  for (index_t b = 0; b < batch; ++b) {
    for (index_t c = 0; c < ch; ++c) {
      const index_t in_base = (b * ch + c) * in_h * in_w;
      const index_t out_base = (b * ch + c) * out_h * out_w;
      for (index_t oy = 0; oy < out_h; ++oy) {
        const Lerp& ly = ys[static_cast<std::size_t>(oy)];
        for (index_t ox = 0; ox < out_w; ++ox) {
          const Lerp& lx = xs[static_cast<std::size_t>(ox)];
          const double v00 = av[static_cast<std::size_t>(in_base + ly.i0 * in_w + lx.i0)];
          const double v01 = av[static_cast<std::size_t>(in_base + ly.i0 * in_w + lx.i1)];
          const double v10 = av[static_cast<std::size_t>(in_base + ly.i1 * in_w + lx.i0)];
          const double v11 = av[static_cast<std::size_t>(in_base + ly.i1 * in_w + lx.i1)];
          const double top = v00 + (v01 - v00) * lx.w1;
          const double bot = v10 + (v11 - v10) * lx.w1;
          ov[static_cast<std::size_t>(out_base + oy * out_w + ox)] = top + (bot - top) * ly.w1;
        }
      }
    }
  }
  maybe_record(out, {&a}, [an = a.node(), on = out.node(), ys, xs, batch, ch, in_h, in_w, out_h, out_w] {
    if (!an->requires_grad) return;
    for (index_t b = 0; b < batch; ++b) {
      for (index_t c = 0; c < ch; ++c) {
        const index_t in_base = (b * ch + c) * in_h * in_w;
        const index_t out_base = (b * ch + c) * out_h * out_w;
        for (index_t oy = 0; oy < out_h; ++oy) {
          const Lerp& ly = ys[static_cast<std::size_t>(oy)];
          for (index_t ox = 0; ox < out_w; ++ox) {
            const Lerp& lx = xs[static_cast<std::size_t>(ox)];
            const double g = on->grad[static_cast<std::size_t>(out_base + oy * out_w + ox)];
            if (g == 0.0) continue;
            an->grad[static_cast<std::size_t>(in_base + ly.i0 * in_w + lx.i0)] += g * (1 - ly.w1) * (1 - lx.w1);
            an->grad[static_cast<std::size_t>(in_base + ly.i0 * in_w + lx.i1)] += g * (1 - ly.w1) * lx.w1;
            an->grad[static_cast<std::size_t>(in_base + ly.i1 * in_w + lx.i0)] += g * ly.w1 * (1 - lx.w1);
            an->grad[static_cast<std::size_t>(in_base + ly.i1 * in_w + lx.i1)] += g * ly.w1 * lx.w1;
          }
        }
      }
    }
  });
  return out;
}

}  // namespace athresh
