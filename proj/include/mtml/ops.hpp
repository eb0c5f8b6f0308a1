// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "mtml/tensor.hpp"

// Differentiable operations. Each op records itself on the tape of its
// operands when that tape is recording and at least one operand is on it;
// otherwise it returns a constant.
//
// Element-wise binary ops accept equal shapes, or one operand whose shape is a
// suffix of the other's (leading-dimension expansion). Nothing else broadcasts.
namespace mtml::ad {

using IndexList = std::shared_ptr<const std::vector<std::size_t>>;
using Mask = std::shared_ptr<const std::vector<std::uint8_t>>;

[[nodiscard]] IndexList make_indices(std::vector<std::size_t> indices);
[[nodiscard]] Mask make_mask(std::vector<std::uint8_t> mask);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor neg(const Tensor& x);
Tensor pow(const Tensor& x, double exponent);

/// op(a) * op(b) for rank-2 operands, where op transposes when requested.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);
Tensor transpose(const Tensor& x);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);

/// Softmax / log-softmax over the last axis.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

/// Sums leading axes away so the result has shape `target` (a suffix of x's).
Tensor sum_leading(const Tensor& x, const Shape& target);
/// Inverse of sum_leading: repeats x over new leading axes.
Tensor expand_leading(const Tensor& x, const Shape& target);
/// Sum over the last axis, keeping it with extent 1.
Tensor sum_last(const Tensor& x);
/// Repeats an extent-1 last axis `extent` times.
Tensor expand_last(const Tensor& x, std::size_t extent);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Row lookup: result[i] = table[indices[i]]. table is [rows, width].
Tensor gather_rows(const Tensor& table, const IndexList& indices);
/// Adjoint of gather_rows: accumulates rows of x into a [rows, width] result.
Tensor scatter_add_rows(const Tensor& x, const IndexList& indices, std::size_t rows);
/// result[i] = x[i, indices[i]] for x of shape [n, width].
Tensor pick(const Tensor& x, const IndexList& indices);
/// Adjoint of pick: places x[i] at column indices[i] of a zero [n, width] result.
Tensor unpick(const Tensor& x, const IndexList& indices, std::size_t width);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
/// Adjoint of slice: embeds x into zeros of extent `full` along `axis`.
Tensor slice_pad(const Tensor& x, std::size_t axis, std::size_t start, std::size_t full);

/// Replaces elements where mask is nonzero with `value`.
Tensor masked_fill(const Tensor& x, const Mask& mask, double value);
Tensor reshape(const Tensor& x, Shape shape);

/// Layer normalization over the last axis, built from the primitives above.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon = 1e-5);

}  // namespace mtml::ad
