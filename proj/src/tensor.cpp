// SPDX-License-Identifier: Apache-2.0
#include "mtml/tensor.hpp"

#include <functional>
#include <numeric>
#include <sstream>

#include "mtml/error.hpp"

namespace mtml::ad {

std::size_t numel(const Shape& shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) out << ", ";
        out << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)) {
    if (ad::numel(shape_) != data.size()) {
        throw DimensionError("tensor: shape " + ad::to_string(shape_) + " does not hold " +
                             std::to_string(data.size()) + " values");
    }
    data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
    const std::size_t n = ad::numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

std::span<const double> Tensor::data() const noexcept {
    if (!data_) return {};
    return {data_->data(), data_->size()};
}

double Tensor::item() const {
    if (numel() != 1) {
        throw DimensionError("item: tensor of shape " + ad::to_string(shape_) + " is not a scalar");
    }
    return (*data_)[0];
}

Tensor Tensor::detach() const {
    Tensor out;
    out.shape_ = shape_;
    out.data_ = data_;
    return out;
}

const char* op_name(OpKind kind) noexcept {
    switch (kind) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Div: return "div";
        case OpKind::Scale: return "scale";
        case OpKind::AddScalar: return "add_scalar";
        case OpKind::Pow: return "pow";
        case OpKind::MatMul: return "matmul";
        case OpKind::Transpose: return "transpose";
        case OpKind::Exp: return "exp";
        case OpKind::Log: return "log";
        case OpKind::Relu: return "relu";
        case OpKind::Softmax: return "softmax";
        case OpKind::LogSoftmax: return "log_softmax";
        case OpKind::SumLeading: return "sum_leading";
        case OpKind::ExpandLeading: return "expand_leading";
        case OpKind::SumLast: return "sum_last";
        case OpKind::ExpandLast: return "expand_last";
        case OpKind::Gather: return "gather_rows";
        case OpKind::ScatterAdd: return "scatter_add_rows";
        case OpKind::Pick: return "pick";
        case OpKind::Unpick: return "unpick";
        case OpKind::Concat: return "concat";
        case OpKind::Slice: return "slice";
        case OpKind::SlicePad: return "slice_pad";
        case OpKind::MaskedFill: return "masked_fill";
        case OpKind::Reshape: return "reshape";
    }
    return "unknown";
}

Tensor Tape::watch(const Tensor& value) {
    if (!value.defined()) throw ContractError("watch: undefined tensor");
    return record(OpKind::Leaf, value.detach(), {}, {});
}

Tensor Tape::record(OpKind kind, Tensor value, std::vector<Tensor> inputs, VjpFn vjp) {
    value.tape_ = this;
    value.node_ = nodes_.size();
    nodes_.push_back(TapeNode{kind, std::move(inputs), value, std::move(vjp)});
    return value;
}

}  // namespace mtml::ad
