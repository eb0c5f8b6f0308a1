// SPDX-License-Identifier: Apache-2.0
#include "mtml/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "mtml/error.hpp"
#include "mtml/ops.hpp"

namespace mtml::ad {

void NamedTensors::add(std::string name, Tensor value, bool trainable) {
    if (index_.contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), std::move(value), trainable});
}

bool NamedTensors::contains(std::string_view name) const { return find(name) != nullptr; }

const NamedTensors::Entry* NamedTensors::find(std::string_view name) const {
    const auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &entries_[it->second];
}

const Tensor& NamedTensors::at(std::string_view name) const {
    const Entry* entry = find(name);
    if (entry == nullptr) throw ContractError("no entry named '" + std::string(name) + "'");
    return entry->value;
}

std::size_t NamedTensors::scalar_count() const noexcept {
    std::size_t total = 0;
    for (const auto& e : entries_) total += e.value.numel();
    return total;
}

NamedTensors NamedTensors::detached() const {
    NamedTensors out;
    for (const auto& e : entries_) out.add(e.name, e.value.detach(), e.trainable);
    return out;
}

ParameterSet watch(Tape& tape, const ParameterSet& params) {
    ParameterSet out;
    for (const auto& e : params) {
        out.add(e.name, e.trainable ? tape.watch(e.value) : e.value.detach(), e.trainable);
    }
    return out;
}

namespace {

class BackwardScope {
public:
    BackwardScope(Tape& tape, bool create_graph)
        : tape_(tape), recording_(tape.recording()), record_backward_(tape.record_backward_ops()) {
        tape_.set_record_backward_ops(create_graph);
        tape_.set_recording(create_graph);
    }
    ~BackwardScope() {
        tape_.set_recording(recording_);
        tape_.set_record_backward_ops(record_backward_);
    }
    BackwardScope(const BackwardScope&) = delete;
    BackwardScope& operator=(const BackwardScope&) = delete;

private:
    Tape& tape_;
    bool recording_;
    bool record_backward_;
};

}  // namespace

std::vector<Tensor> gradients(const Tensor& loss, std::span<const Tensor> wrt, bool create_graph) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
    }
    if (!loss.on_tape()) throw DetachedError("backward: loss is not recorded on a tape");

    Tape& tape = *loss.tape();
    const std::size_t top = loss.node();
    const auto on_this_tape = [&](const Tensor& t) { return t.tape() == &tape && t.node() <= top; };

    std::vector<std::uint8_t> is_target(top + 1, 0);
    for (const auto& w : wrt) {
        if (on_this_tape(w)) is_target[w.node()] = 1;
    }
    // needed[i]: node i depends on some target, so its adjoint matters.
    std::vector<std::uint8_t> needed(top + 1, 0);
    for (std::size_t i = 0; i <= top; ++i) {
        if (is_target[i]) {
            needed[i] = 1;
            continue;
        }
        for (const auto& in : tape.node(i).inputs) {
            if (on_this_tape(in) && needed[in.node()]) {
                needed[i] = 1;
                break;
            }
        }
    }

    std::vector<Tensor> adjoint(top + 1);
    if (needed[top]) {
        BackwardScope scope(tape, create_graph);
        adjoint[top] = Tensor::ones(loss.shape());
        for (std::size_t i = top + 1; i-- > 0;) {
            if (!needed[i] || !adjoint[i].defined()) continue;
            const TapeNode& node = tape.node(i);
            if (node.kind == OpKind::Leaf) continue;
            std::vector<Tensor> grads = node.vjp(adjoint[i], node.output, node.inputs);
            for (std::size_t j = 0; j < node.inputs.size(); ++j) {
                const Tensor& in = node.inputs[j];
                if (!on_this_tape(in) || !needed[in.node()] || !grads[j].defined()) continue;
                if (grads[j].shape() != in.shape()) {
                    throw DimensionError(std::string("backward: ") + op_name(node.kind) + " produced gradient " +
                                         to_string(grads[j].shape()) + " for input " + to_string(in.shape()));
                }
                Tensor& slot = adjoint[in.node()];
                slot = slot.defined() ? add(slot, grads[j]) : std::move(grads[j]);
            }
            if (!is_target[i]) adjoint[i] = Tensor();
        }
    }

    std::vector<Tensor> out;
    out.reserve(wrt.size());
    for (const auto& w : wrt) {
        if (on_this_tape(w) && adjoint[w.node()].defined()) {
            out.push_back(adjoint[w.node()]);
        } else {
            out.push_back(Tensor::zeros(w.shape()));
        }
    }
    return out;
}

GradientMap backward(const Tensor& loss, const ParameterSet& wrt, bool create_graph) {
    std::vector<Tensor> targets;
    std::vector<const NamedTensors::Entry*> entries;
    for (const auto& e : wrt) {
        if (!e.trainable) continue;
        targets.push_back(e.value);
        entries.push_back(&e);
    }
    std::vector<Tensor> grads = gradients(loss, targets, create_graph);
    GradientMap out;
    for (std::size_t i = 0; i < entries.size(); ++i) out.add(entries[i]->name, std::move(grads[i]));
    return out;
}

ParameterSet functional_update(const ParameterSet& params, const GradientMap& grads, double lr) {
    if (!(lr >= 0.0)) throw ContractError("functional_update: learning rate must be >= 0");
    ParameterSet out;
    for (const auto& e : params) {
        if (!e.trainable) {
            out.add(e.name, e.value, false);
            continue;
        }
        const auto* g = grads.find(e.name);
        if (g == nullptr) throw ContractError("functional_update: missing gradient for '" + e.name + "'");
        if (g->value.shape() != e.value.shape()) {
            throw DimensionError("functional_update: gradient for '" + e.name + "' has shape " +
                                 to_string(g->value.shape()) + ", parameter has " + to_string(e.value.shape()));
        }
        out.add(e.name, sub(e.value, scale(g->value, lr)), true);
    }
    return out;
}

GradientMap stop_gradient(const GradientMap& grads) { return grads.detached(); }

double global_norm(const GradientMap& grads) {
    double total = 0.0;
    for (const auto& e : grads) {
        for (double v : e.value.data()) total += v * v;
    }
    return std::sqrt(total);
}

GradientCheck finite_difference_check(const ScalarFunction& f, const ParameterSet& at, double epsilon) {
    if (!(epsilon > 0.0)) throw ContractError("finite_difference_check: epsilon must be > 0");

    GradientMap analytic;
    {
        Tape tape;
        const ParameterSet watched = watch(tape, at);
        const Tensor loss = f(watched);
        if (!loss.on_tape()) {
            // The function ignores its parameters; every gradient is zero.
            for (const auto& e : at) {
                if (e.trainable) analytic.add(e.name, Tensor::zeros(e.value.shape()));
            }
        } else {
            analytic = backward(loss, watched, false);
        }
    }

    const ParameterSet base = at.detached();
    const auto evaluate = [&](const std::string& name, std::size_t index, double delta) {
        ParameterSet shifted;
        for (const auto& e : base) {
            if (e.name != name) {
                shifted.add(e.name, e.value, e.trainable);
                continue;
            }
            std::vector<double> values(e.value.data().begin(), e.value.data().end());
            values[index] += delta;
            shifted.add(e.name, Tensor(e.value.shape(), std::move(values)), e.trainable);
        }
        const double v = f(shifted).item();
        if (!std::isfinite(v)) throw NumericError("finite_difference_check: non-finite value for '" + name + "'");
        return v;
    };

    GradientCheck result;
    for (const auto& e : base) {
        if (!e.trainable) continue;
        const Tensor& grad = analytic.at(e.name);
        for (std::size_t k = 0; k < e.value.numel(); ++k) {
            const double numeric = (evaluate(e.name, k, epsilon) - evaluate(e.name, k, -epsilon)) / (2.0 * epsilon);
            const double a = grad.at(k);
            if (!std::isfinite(a)) throw NumericError("finite_difference_check: non-finite gradient for '" + e.name + "'");
            const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
            if (err > result.max_relative_error || result.worst_parameter.empty()) {
                result.max_relative_error = err;
                result.worst_parameter = e.name;
                result.worst_index = k;
            }
        }
    }
    return result;
}

}  // namespace mtml::ad
