// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "manager/tensor.hpp"

namespace manager {

inline constexpr double kLayerNormEps = 1e-5;

// Elementwise arithmetic with broadcasting. Shapes are right-aligned, the
// shorter one is padded with leading size-1 axes, and any size-1 axis is
// repeated to match the other operand. Anything else is a DimensionError.
Shape broadcast_shapes(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor tanh(const Tensor& a);
/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }

/// [m x k] x [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the two axes of a rank-2 tensor.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sums out `axis`, dropping it from the shape.
Tensor sum_axis(const Tensor& a, std::size_t axis);

/// Numerically stable softmax along `axis` (max subtracted per slice).
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor softmax_last(const Tensor& x);
/// softmax(x / tau) along `axis`; tau must be positive.
Tensor softmax_with_temperature(const Tensor& x, double tau, std::size_t axis);
/// Same with a learnable scalar temperature tensor (numel 1).
Tensor softmax_with_temperature(const Tensor& x, const Tensor& tau, std::size_t axis);
/// Row softmax over the last axis of [..., Lq, Lk] where query q may only
/// see keys k <= q + (Lk - Lq). Masked entries are exactly zero.
Tensor causal_softmax(const Tensor& x);

/// Normalizes over the last axis (population variance), then gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEps);

Tensor concat_last(const Tensor& a, const Tensor& b);
Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t count);
/// Concatenation along axis 0; all trailing axes must agree.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);
/// Index `i` of axis 0, dropping that axis.
Tensor select(const Tensor& a, std::size_t index);

/// Row lookup into a [V x D] table.
Tensor embedding(const Tensor& table, std::span<const int> ids);

/// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

}  // namespace manager
