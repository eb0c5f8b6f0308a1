// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <deque>
#include <vector>

namespace mtml::ad {

using Shape = std::vector<std::size_t>;

[[nodiscard]] std::size_t numel(const Shape& shape) noexcept;
[[nodiscard]] std::string to_string(const Shape& shape);

class Tape;

/// Dense row-major array of doubles, optionally recorded on a Tape.
///
/// Storage is immutable and shared between copies, so a Tensor behaves like a
/// value. A tensor that is not on a tape is a constant: it contributes no
/// gradient. The tape a tensor was recorded on must outlive any op applied to
/// it; `detach()` yields a tape-free copy that can outlive the tape.
class Tensor {
public:
    static constexpr std::size_t kNoNode = std::numeric_limits<std::size_t>::max();

    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    [[nodiscard]] std::size_t numel() const noexcept { return data_ ? data_->size() : 0; }
    [[nodiscard]] bool defined() const noexcept { return data_ != nullptr; }

    [[nodiscard]] std::span<const double> data() const noexcept;
    [[nodiscard]] double at(std::size_t flat_index) const { return data_->at(flat_index); }
    /// Value of a single-element tensor.
    [[nodiscard]] double item() const;

    [[nodiscard]] bool on_tape() const noexcept { return tape_ != nullptr; }
    [[nodiscard]] Tape* tape() const noexcept { return tape_; }
    [[nodiscard]] std::size_t node() const noexcept { return node_; }

    /// Same values, no tape.
    [[nodiscard]] Tensor detach() const;

private:
    friend class Tape;

    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
    Tape* tape_ = nullptr;
    std::size_t node_ = kNoNode;
};

enum class OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Scale,
    AddScalar,
    Pow,
    MatMul,
    Transpose,
    Exp,
    Log,
    Relu,
    Softmax,
    LogSoftmax,
    SumLeading,
    ExpandLeading,
    SumLast,
    ExpandLast,
    Gather,
    ScatterAdd,
    Pick,
    Unpick,
    Concat,
    Slice,
    SlicePad,
    MaskedFill,
    Reshape,
};

[[nodiscard]] const char* op_name(OpKind kind) noexcept;

/// Vector-Jacobian product of one recorded op. Receives the upstream gradient,
/// the op's output and its inputs; returns one gradient per input (an
/// undefined Tensor where none is needed). It is written with ordinary ops,
/// so running it on a recording tape makes the gradient differentiable.
using VjpFn = std::function<std::vector<Tensor>(
    const Tensor& grad_out, const Tensor& output, std::span<const Tensor> inputs)>;

struct TapeNode {
    OpKind kind = OpKind::Leaf;
    std::vector<Tensor> inputs;
    Tensor output;
    VjpFn vjp;
};

/// Append-only record of operations, in topological order by construction.
///
/// While `record_backward_ops()` is on, a backward pass over this tape appends
/// its own operations, which is what makes gradients differentiable.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Registers `value` as a differentiable leaf.
    [[nodiscard]] Tensor watch(const Tensor& value);

    [[nodiscard]] bool recording() const noexcept { return recording_; }
    void set_recording(bool on) noexcept { recording_ = on; }

    [[nodiscard]] bool record_backward_ops() const noexcept { return record_backward_ops_; }
    void set_record_backward_ops(bool on) noexcept { record_backward_ops_ = on; }

    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] const TapeNode& node(std::size_t index) const { return nodes_.at(index); }

    /// Appends an op whose value has already been computed. Used by ops.cpp.
    Tensor record(OpKind kind, Tensor value, std::vector<Tensor> inputs, VjpFn vjp);

private:
    std::deque<TapeNode> nodes_;
    bool recording_ = true;
    bool record_backward_ops_ = false;
};

/// Turns recording off for the lifetime of the guard.
class PauseRecording {
public:
    explicit PauseRecording(Tape& tape) : tape_(tape), previous_(tape.recording()) {
        tape_.set_recording(false);
    }
    ~PauseRecording() { tape_.set_recording(previous_); }
    PauseRecording(const PauseRecording&) = delete;
    PauseRecording& operator=(const PauseRecording&) = delete;

private:
    Tape& tape_;
    bool previous_;
};

}  // namespace mtml::ad
