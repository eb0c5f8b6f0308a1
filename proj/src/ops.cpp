// SPDX-License-Identifier: Apache-2.0
#include "mtml/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mtml/error.hpp"

#ifdef MTML_HAVE_CBLAS
#include <cblas.h>
#endif

namespace mtml::ad {
namespace {

std::string describe(std::span<const Tensor> inputs) {
    std::string out;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (i != 0) out += " and ";
        out += to_string(inputs[i].shape());
    }
    return out;
}

[[noreturn]] void shape_error(OpKind kind, std::span<const Tensor> inputs, const std::string& why) {
    throw DimensionError(std::string(op_name(kind)) + ": " + why + " (shapes " + describe(inputs) + ")");
}

void require_all_defined(OpKind kind, std::span<const Tensor> inputs) {
    for (const auto& x : inputs) {
        if (!x.defined()) throw ContractError(std::string(op_name(kind)) + ": undefined operand");
    }
}

template <typename... T>
void require_defined(OpKind kind, const T&... operands) {
    if (!(operands.defined() && ...)) {
        throw ContractError(std::string(op_name(kind)) + ": undefined operand");
    }
}

Tape* common_tape(OpKind kind, std::span<const Tensor> inputs) {
    Tape* tape = nullptr;
    for (const auto& x : inputs) {
        if (x.tape() == nullptr) continue;
        if (tape != nullptr && tape != x.tape()) {
            throw ContractError(std::string(op_name(kind)) + ": operands live on different tapes");
        }
        tape = x.tape();
    }
    return tape;
}

Tensor finish(OpKind kind, Shape shape, std::vector<double> values, std::vector<Tensor> inputs, VjpFn vjp) {
    Tensor out(std::move(shape), std::move(values));
    Tape* tape = common_tape(kind, inputs);
    if (tape == nullptr || !tape->recording()) return out;
    return tape->record(kind, std::move(out), std::move(inputs), std::move(vjp));
}

bool is_suffix(const Shape& part, const Shape& whole) {
    if (part.size() > whole.size()) return false;
    return std::equal(part.begin(), part.end(), whole.end() - static_cast<std::ptrdiff_t>(part.size()));
}

Shape broadcast_shape(OpKind kind, const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return a.shape();
    if (is_suffix(b.shape(), a.shape())) return a.shape();
    if (is_suffix(a.shape(), b.shape())) return b.shape();
    const Tensor both[] = {a, b};
    shape_error(kind, both, "only leading-dimension broadcasting is supported");
}

Tensor reduce_to(const Tensor& grad, const Shape& shape) {
    if (grad.shape() == shape) return grad;
    return sum_leading(grad, shape);
}

template <typename F>
std::vector<double> binary_values(const Tensor& a, const Tensor& b, std::size_t n, F f) {
    std::vector<double> out(n);
    const auto av = a.data();
    const auto bv = b.data();
    const std::size_t na = av.size();
    const std::size_t nb = bv.size();
    if (na == n && nb == n) {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i % na], bv[i % nb]);
    }
    return out;
}

template <typename F>
std::vector<double> unary_values(const Tensor& x, F f) {
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    std::transform(xv.begin(), xv.end(), out.begin(), f);
    return out;
}

std::size_t last_extent(OpKind kind, const Tensor& x) {
    if (x.rank() == 0) {
        const Tensor in[] = {x};
        shape_error(kind, in, "needs rank >= 1");
    }
    return x.shape().back();
}

}  // namespace

IndexList make_indices(std::vector<std::size_t> indices) {
    return std::make_shared<const std::vector<std::size_t>>(std::move(indices));
}

Mask make_mask(std::vector<std::uint8_t> mask) {
    return std::make_shared<const std::vector<std::uint8_t>>(std::move(mask));
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_defined(OpKind::Add, a, b);
    Shape shape = broadcast_shape(OpKind::Add, a, b);
    auto values = binary_values(a, b, numel(shape), [](double x, double y) { return x + y; });
    return finish(OpKind::Add, std::move(shape), std::move(values), {a, b},
                  [](const Tensor& g, const Tensor&, std::span<const Tensor> in) {
                      std::vector<Tensor> grads(2);
                      if (in[0].on_tape()) grads[0] = reduce_to(g, in[0].shape());
                      if (in[1].on_tape()) grads[1] = reduce_to(g, in[1].shape());
                      return grads;
                  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_defined(OpKind::Sub, a, b);
    Shape shape = broadcast_shape(OpKind::Sub, a, b);
    auto values = binary_values(a, b, numel(shape), [](double x, double y) { return x - y; });
    return finish(OpKind::Sub, std::move(shape), std::move(values), {a, b},
                  [](const Tensor& g, const Tensor&, std::span<const Tensor> in) {
                      std::vector<Tensor> grads(2);
                      if (in[0].on_tape()) grads[0] = reduce_to(g, in[0].shape());
                      if (in[1].on_tape()) grads[1] = reduce_to(neg(g), in[1].shape());
                      return grads;
                  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_defined(OpKind::Mul, a, b);
    Shape shape = broadcast_shape(OpKind::Mul, a, b);
    auto values = binary_values(a, b, numel(shape), [](double x, double y) { return x * y; });
    return finish(OpKind::Mul, std::move(shape), std::move(values), {a, b},
                  [](const Tensor& g, const Tensor&, std::span<const Tensor> in) {
                      std::vector<Tensor> grads(2);
                      if (in[0].on_tape()) grads[0] = reduce_to(mul(g, in[1]), in[0].shape());
                      if (in[1].on_tape()) grads[1] = reduce_to(mul(g, in[0]), in[1].shape());
                      return grads;
                  });
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_defined(OpKind::Div, a, b);
    Shape shape = broadcast_shape(OpKind::Div, a, b);
    auto values = binary_values(a, b, numel(shape), [](double x, double y) { return x / y; });
    return finish(OpKind::Div, std::move(shape), std::move(values), {a, b},
                  [](const Tensor& g, const Tensor& out, std::span<const Tensor> in) {
                      std::vector<Tensor> grads(2);
                      if (in[0].on_tape()) grads[0] = reduce_to(div(g, in[1]), in[0].shape());
                      if (in[1].on_tape()) {
                          grads[1] = reduce_to(neg(div(mul(g, out), in[1])), in[1].shape());
                      }
                      return grads;
                  });
}

Tensor scale(const Tensor& x, double factor) {
    require_defined(OpKind::Scale, x);
    auto values = unary_values(x, [factor](double v) { return v * factor; });
    return finish(OpKind::Scale, x.shape(), std::move(values), {x},
                  [factor](const Tensor& g, const Tensor&, std::span<const Tensor>) {
                      return std::vector<Tensor>{scale(g, factor)};
                  });
}

Tensor add_scalar(const Tensor& x, double value) {
    require_defined(OpKind::AddScalar, x);
    auto values = unary_values(x, [value](double v) { return v + value; });
    return finish(OpKind::AddScalar, x.shape(), std::move(values), {x},
                  [](const Tensor& g, const Tensor&, std::span<const Tensor>) {
                      return std::vector<Tensor>{g};
                  });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor pow(const Tensor& x, double exponent) {
    require_defined(OpKind::Pow, x);
    auto values = unary_values(x, [exponent](double v) { return std::pow(v, exponent); });
    return finish(OpKind::Pow, x.shape(), std::move(values), {x},
                  [exponent](const Tensor& g, const Tensor&, std::span<const Tensor> in) {
                      return std::vector<Tensor>{mul(g, scale(pow(in[0], exponent - 1.0), exponent))};
                  });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
    require_defined(OpKind::MatMul, a, b);
    const Tensor both[] = {a, b};
    if (a.rank() != 2 || b.rank() != 2) shape_error(OpKind::MatMul, both, "operands must be rank 2");
    const std::size_t n = transpose_a ? a.dim(1) : a.dim(0);
    const std::size_t k = transpose_a ? a.dim(0) : a.dim(1);
    const std::size_t kb = transpose_b ? b.dim(1) : b.dim(0);
    const std::size_t m = transpose_b ? b.dim(0) : b.dim(1);
    if (k != kb) shape_error(OpKind::MatMul, both, "inner dimensions differ");

    std::vector<double> c(n * m, 0.0);
#ifdef MTML_HAVE_CBLAS
    if (n > 0 && m > 0 && k > 0) {
        cblas_dgemm(CblasRowMajor, transpose_a ? CblasTrans : CblasNoTrans, transpose_b ? CblasTrans : CblasNoTrans,
                    static_cast<int>(n), static_cast<int>(m), static_cast<int>(k), 1.0, a.data().data(),
                    static_cast<int>(a.dim(1)), b.data().data(), static_cast<int>(b.dim(1)), 0.0, c.data(),
                    static_cast<int>(m));
    }
#else
    const auto row_major = [](const Tensor& t, bool transposed) {
        std::vector<double> out;
        if (!transposed) return out;
        const std::size_t r = t.dim(0);
        const std::size_t cols = t.dim(1);
        out.resize(r * cols);
        const double* src = t.data().data();
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < cols; ++j) out[j * r + i] = src[i * cols + j];
        }
        return out;
    };
    const std::vector<double> at = row_major(a, transpose_a);
    const std::vector<double> bt = row_major(b, transpose_b);
    const double* __restrict A = transpose_a ? at.data() : a.data().data();
    const double* __restrict B = transpose_b ? bt.data() : b.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        double* __restrict row = &c[i * m];
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            const double* __restrict brow = &B[p * m];
            for (std::size_t j = 0; j < m; ++j) row[j] += aip * brow[j];
        }
    }
#endif

    return finish(OpKind::MatMul, {n, m}, std::move(c), {a, b},
                  [transpose_a, transpose_b](const Tensor& g, const Tensor&, std::span<const Tensor> in) {
                      std::vector<Tensor> grads(2);
                      const Tensor& A = in[0];
                      const Tensor& B = in[1];
                      if (A.on_tape()) {
                          grads[0] = transpose_a ? matmul(B, g, transpose_b, true)
                                                 : matmul(g, B, false, !transpose_b);
                      }
                      if (B.on_tape()) {
                          grads[1] = transpose_b ? matmul(g, A, true, transpose_a)
                                                 : matmul(A, g, !transpose_a, false);
                      }
                      return grads;
                  });
}

Tensor transpose(const Tensor& x) {
    require_defined(OpKind::Transpose, x);
    if (x.rank() != 2) {
        const Tensor in[] = {x};
        shape_error(OpKind::Transpose, in, "operand must be rank 2");
    }
    const std::size_t r = x.dim(0);
    const std::size_t c = x.dim(1);
    const auto xv = x.data();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
    return finish(OpKind::Transpose, {c, r}, std::move(out), {x},
                  [](const Tensor& g, const Tensor&, std::span<const Tensor>) {
                      return std::vector<Tensor>{transpose(g)};
                  });
}

Tensor exp(const Tensor& x) {
    require_defined(OpKind::Exp, x);
    auto values = unary_values(x, [](double v) { return std::exp(v); });
    return finish(OpKind::Exp, x.shape(), std::move(values), {x},
                  [](const Tensor& g, const Tensor& out, std::span<const Tensor>) {
                      return std::vector<Tensor>{mul(g, out)};
                  });
}

Tensor log(const Tensor& x) {
    require_defined(OpKind::Log, x);
    auto values = unary_values(x, [](double v) { return std::log(v); });
    return finish(OpKind::Log, x.shape(), std::move(values), {x},
                  [](const Tensor& g, const Tensor&, std::span<const Tensor> in) {
                      return std::vector<Tensor>{div(g, in[0])};
                  });
}

Tensor relu(const Tensor& x) {
    require_defined(OpKind::Relu, x);
    auto values = unary_values(x, [](double v) { return v > 0.0 ? v : 0.0; });
    return finish(OpKind::Relu, x.shape(), std::move(values), {x},
                  [](const Tensor& g, const Tensor&, std::span<const Tensor> in) {
                      Tensor gate(in[0].shape(), unary_values(in[0], [](double v) { return v > 0.0 ? 1.0 : 0.0; }));
                      return std::vector<Tensor>{mul(g, gate)};
                  });
}

Tensor softmax(const Tensor& x) {
    require_defined(OpKind::Softmax, x);
    const std::size_t n = last_extent(OpKind::Softmax, x);
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r * n < xv.size(); ++r) {
        const double* row = &xv[r * n];
        const double top = *std::max_element(row, row + n);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out[r * n + j] = std::exp(row[j] - top);
            total += out[r * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] /= total;
    }
    return finish(OpKind::Softmax, x.shape(), std::move(out), {x},
                  [n](const Tensor& g, const Tensor& y, std::span<const Tensor>) {
                      Tensor dot = expand_last(sum_last(mul(g, y)), n);
                      return std::vector<Tensor>{mul(y, sub(g, dot))};
                  });
}

Tensor log_softmax(const Tensor& x) {
    require_defined(OpKind::LogSoftmax, x);
    const std::size_t n = last_extent(OpKind::LogSoftmax, x);
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r * n < xv.size(); ++r) {
        const double* row = &xv[r * n];
        const double top = *std::max_element(row, row + n);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) total += std::exp(row[j] - top);
        const double lse = top + std::log(total);
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = row[j] - lse;
    }
    return finish(OpKind::LogSoftmax, x.shape(), std::move(out), {x},
                  [n](const Tensor& g, const Tensor& y, std::span<const Tensor>) {
                      Tensor total = expand_last(sum_last(g), n);
                      return std::vector<Tensor>{sub(g, mul(exp(y), total))};
                  });
}

Tensor sum_leading(const Tensor& x, const Shape& target) {
    require_defined(OpKind::SumLeading, x);
    if (!is_suffix(target, x.shape())) {
        const Tensor in[] = {x};
        shape_error(OpKind::SumLeading, in, "target " + to_string(target) + " is not a suffix");
    }
    if (target == x.shape()) return x;
    const std::size_t tn = numel(target);
    const auto xv = x.data();
    std::vector<double> out(tn, 0.0);
    for (std::size_t i = 0; i < xv.size(); ++i) out[i % tn] += xv[i];
    return finish(OpKind::SumLeading, target, std::move(out), {x},
                  [](const Tensor& g, const Tensor&, std::span<const Tensor> in) {
                      return std::vector<Tensor>{expand_leading(g, in[0].shape())};
                  });
}

Tensor expand_leading(const Tensor& x, const Shape& target) {
    require_defined(OpKind::ExpandLeading, x);
    if (!is_suffix(x.shape(), target)) {
        const Tensor in[] = {x};
        shape_error(OpKind::ExpandLeading, in, "operand is not a suffix of " + to_string(target));
    }
    if (target == x.shape()) return x;
    const std::size_t n = numel(target);
    const auto xv = x.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = xv[i % xv.size()];
    return finish(OpKind::ExpandLeading, target, std::move(out), {x},
                  [](const Tensor& g, const Tensor&, std::span<const Tensor> in) {
                      return std::vector<Tensor>{sum_leading(g, in[0].shape())};
                  });
}

Tensor sum_last(const Tensor& x) {
    require_defined(OpKind::SumLast, x);
    const std::size_t n = last_extent(OpKind::SumLast, x);
    const auto xv = x.data();
    const std::size_t rows = n == 0 ? 0 : xv.size() / n;
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) out[r] += xv[r * n + j];
    Shape shape = x.shape();
    shape.back() = 1;
    return finish(OpKind::SumLast, std::move(shape), std::move(out), {x},
                  [n](const Tensor& g, const Tensor&, std::span<const Tensor>) {
                      return std::vector<Tensor>{expand_last(g, n)};
                  });
}

Tensor expand_last(const Tensor& x, std::size_t extent) {
    require_defined(OpKind::ExpandLast, x);
    if (last_extent(OpKind::ExpandLast, x) != 1) {
        const Tensor in[] = {x};
        shape_error(OpKind::ExpandLast, in, "last axis must have extent 1");
    }
    const auto xv = x.data();
    std::vector<double> out(xv.size() * extent);
    for (std::size_t r = 0; r < xv.size(); ++r)
        for (std::size_t j = 0; j < extent; ++j) out[r * extent + j] = xv[r];
    Shape shape = x.shape();
    shape.back() = extent;
    return finish(OpKind::ExpandLast, std::move(shape), std::move(out), {x},
                  [](const Tensor& g, const Tensor&, std::span<const Tensor>) {
                      return std::vector<Tensor>{sum_last(g)};
                  });
}

Tensor sum(const Tensor& x) { return sum_leading(x, {}); }

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw ContractError("mean: empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor gather_rows(const Tensor& table, const IndexList& indices) {
    require_defined(OpKind::Gather, table);
    const Tensor in[] = {table};
    if (table.rank() != 2) shape_error(OpKind::Gather, in, "table must be rank 2");
    const std::size_t rows = table.dim(0);
    const std::size_t width = table.dim(1);
    const auto tv = table.data();
    std::vector<double> out(indices->size() * width);
    for (std::size_t i = 0; i < indices->size(); ++i) {
        const std::size_t r = (*indices)[i];
        if (r >= rows) shape_error(OpKind::Gather, in, "row index " + std::to_string(r) + " out of range");
        std::copy_n(&tv[r * width], width, &out[i * width]);
    }
    return finish(OpKind::Gather, {indices->size(), width}, std::move(out), {table},
                  [indices, rows](const Tensor& g, const Tensor&, std::span<const Tensor>) {
                      return std::vector<Tensor>{scatter_add_rows(g, indices, rows)};
                  });
}

Tensor scatter_add_rows(const Tensor& x, const IndexList& indices, std::size_t rows) {
    require_defined(OpKind::ScatterAdd, x);
    const Tensor in[] = {x};
    if (x.rank() != 2 || x.dim(0) != indices->size()) {
        shape_error(OpKind::ScatterAdd, in, "expected [" + std::to_string(indices->size()) + ", width]");
    }
    const std::size_t width = x.dim(1);
    const auto xv = x.data();
    std::vector<double> out(rows * width, 0.0);
    for (std::size_t i = 0; i < indices->size(); ++i) {
        const std::size_t r = (*indices)[i];
        if (r >= rows) shape_error(OpKind::ScatterAdd, in, "row index out of range");
        for (std::size_t j = 0; j < width; ++j) out[r * width + j] += xv[i * width + j];
    }
    return finish(OpKind::ScatterAdd, {rows, width}, std::move(out), {x},
                  [indices](const Tensor& g, const Tensor&, std::span<const Tensor>) {
                      return std::vector<Tensor>{gather_rows(g, indices)};
                  });
}

Tensor pick(const Tensor& x, const IndexList& indices) {
    require_defined(OpKind::Pick, x);
    const Tensor in[] = {x};
    if (x.rank() != 2 || x.dim(0) != indices->size()) {
        shape_error(OpKind::Pick, in, "expected [" + std::to_string(indices->size()) + ", width]");
    }
    const std::size_t width = x.dim(1);
    const auto xv = x.data();
    std::vector<double> out(indices->size());
    for (std::size_t i = 0; i < indices->size(); ++i) {
        const std::size_t c = (*indices)[i];
        if (c >= width) shape_error(OpKind::Pick, in, "column index " + std::to_string(c) + " out of range");
        out[i] = xv[i * width + c];
    }
    return finish(OpKind::Pick, {indices->size()}, std::move(out), {x},
                  [indices, width](const Tensor& g, const Tensor&, std::span<const Tensor>) {
                      return std::vector<Tensor>{unpick(g, indices, width)};
                  });
}

Tensor unpick(const Tensor& x, const IndexList& indices, std::size_t width) {
    require_defined(OpKind::Unpick, x);
    const Tensor in[] = {x};
    if (x.rank() != 1 || x.dim(0) != indices->size()) shape_error(OpKind::Unpick, in, "length mismatch");
    const auto xv = x.data();
    std::vector<double> out(indices->size() * width, 0.0);
    for (std::size_t i = 0; i < indices->size(); ++i) {
        const std::size_t c = (*indices)[i];
        if (c >= width) shape_error(OpKind::Unpick, in, "column index out of range");
        out[i * width + c] = xv[i];
    }
    return finish(OpKind::Unpick, {indices->size(), width}, std::move(out), {x},
                  [indices](const Tensor& g, const Tensor&, std::span<const Tensor>) {
                      return std::vector<Tensor>{pick(g, indices)};
                  });
}

namespace {

// outer = product of extents before axis, inner = product after.
std::pair<std::size_t, std::size_t> split_at(const Shape& shape, std::size_t axis) {
    std::size_t outer = 1;
    std::size_t inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    return {outer, inner};
}

}  // namespace

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: no operands");
    require_all_defined(OpKind::Concat, parts);
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) shape_error(OpKind::Concat, parts, "axis out of range");
    Shape shape = first;
    shape[axis] = 0;
    for (const auto& p : parts) {
        if (p.rank() != first.size()) shape_error(OpKind::Concat, parts, "rank mismatch");
        for (std::size_t d = 0; d < first.size(); ++d) {
            if (d != axis && p.dim(d) != first[d]) shape_error(OpKind::Concat, parts, "extent mismatch");
        }
        shape[axis] += p.dim(axis);
    }
    const auto [outer, inner] = split_at(shape, axis);
    std::vector<double> out(numel(shape));
    std::size_t offset = 0;
    std::vector<std::size_t> starts;
    for (const auto& p : parts) {
        starts.push_back(offset);
        const std::size_t len = p.dim(axis);
        const auto pv = p.data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(&pv[o * len * inner], len * inner, &out[(o * shape[axis] + offset) * inner]);
        }
        offset += len;
    }
    return finish(OpKind::Concat, std::move(shape), std::move(out), parts,
                  [axis, starts](const Tensor& g, const Tensor&, std::span<const Tensor> in) {
                      std::vector<Tensor> grads(in.size());
                      for (std::size_t i = 0; i < in.size(); ++i) {
                          if (in[i].on_tape()) grads[i] = slice(g, axis, starts[i], in[i].dim(axis));
                      }
                      return grads;
                  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
    require_defined(OpKind::Slice, x);
    const Tensor in[] = {x};
    if (axis >= x.rank()) shape_error(OpKind::Slice, in, "axis out of range");
    const std::size_t full = x.dim(axis);
    if (start + length > full) shape_error(OpKind::Slice, in, "range exceeds extent");
    Shape shape = x.shape();
    shape[axis] = length;
    const auto [outer, inner] = split_at(x.shape(), axis);
    const auto xv = x.data();
    std::vector<double> out(numel(shape));
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(&xv[(o * full + start) * inner], length * inner, &out[o * length * inner]);
    }
    return finish(OpKind::Slice, std::move(shape), std::move(out), {x},
                  [axis, start, full](const Tensor& g, const Tensor&, std::span<const Tensor>) {
                      return std::vector<Tensor>{slice_pad(g, axis, start, full)};
                  });
}

Tensor slice_pad(const Tensor& x, std::size_t axis, std::size_t start, std::size_t full) {
    require_defined(OpKind::SlicePad, x);
    const Tensor in[] = {x};
    if (axis >= x.rank()) shape_error(OpKind::SlicePad, in, "axis out of range");
    const std::size_t length = x.dim(axis);
    if (start + length > full) shape_error(OpKind::SlicePad, in, "range exceeds extent");
    Shape shape = x.shape();
    shape[axis] = full;
    const auto [outer, inner] = split_at(x.shape(), axis);
    const auto xv = x.data();
    std::vector<double> out(numel(shape), 0.0);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(&xv[o * length * inner], length * inner, &out[(o * full + start) * inner]);
    }
    return finish(OpKind::SlicePad, std::move(shape), std::move(out), {x},
                  [axis, start, length](const Tensor& g, const Tensor&, std::span<const Tensor>) {
                      return std::vector<Tensor>{slice(g, axis, start, length)};
                  });
}

Tensor masked_fill(const Tensor& x, const Mask& mask, double value) {
    require_defined(OpKind::MaskedFill, x);
    if (mask->size() != x.numel()) {
        const Tensor in[] = {x};
        shape_error(OpKind::MaskedFill, in, "mask holds " + std::to_string(mask->size()) + " entries");
    }
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = (*mask)[i] != 0 ? value : xv[i];
    return finish(OpKind::MaskedFill, x.shape(), std::move(out), {x},
                  [mask](const Tensor& g, const Tensor&, std::span<const Tensor>) {
                      return std::vector<Tensor>{masked_fill(g, mask, 0.0)};
                  });
}

Tensor reshape(const Tensor& x, Shape shape) {
    require_defined(OpKind::Reshape, x);
    if (numel(shape) != x.numel()) {
        const Tensor in[] = {x};
        shape_error(OpKind::Reshape, in, "cannot reshape to " + to_string(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return finish(OpKind::Reshape, std::move(shape), std::move(out), {x},
                  [](const Tensor& g, const Tensor&, std::span<const Tensor> in) {
                      return std::vector<Tensor>{reshape(g, in[0].shape())};
                  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
    const std::size_t n = last_extent(OpKind::SumLast, x);
    const double inv_n = 1.0 / static_cast<double>(n);
    Tensor centered = sub(x, expand_last(scale(sum_last(x), inv_n), n));
    Tensor variance = scale(sum_last(mul(centered, centered)), inv_n);
    Tensor inv_std = pow(add_scalar(variance, epsilon), -0.5);
    Tensor normed = mul(centered, expand_last(inv_std, n));
    return add(mul(normed, gain), bias);
}

}  // namespace mtml::ad
