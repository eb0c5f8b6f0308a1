// SPDX-License-Identifier: Apache-2.0
#include "mtml/optim.hpp"

#include <cmath>

#include "mtml/error.hpp"

namespace mtml {

using ad::NamedTensors;
using ad::Tensor;

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer_kind(const std::string& text) {
    if (text == "adam") return OptimizerKind::Adam;
    if (text == "sgd") return OptimizerKind::Sgd;
    throw ConfigError("unknown optimizer '" + text + "' (expected adam or sgd)");
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, AdamSettings adam)
    : kind_(kind), lr_(learning_rate), adam_(adam) {
    if (!(learning_rate >= 0.0)) throw ConfigError("optimizer: learning rate must be >= 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.epsilon > 0.0)) {
        throw ConfigError("optimizer: invalid Adam settings");
    }
}

ad::ParameterSet Optimizer::step(const ad::ParameterSet& params, const ad::GradientMap& grads) {
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double correction1 = 1.0 - std::pow(adam_.beta1, t);
    const double correction2 = 1.0 - std::pow(adam_.beta2, t);

    ad::ParameterSet out;
    NamedTensors first;
    NamedTensors second;
    for (const auto& e : params) {
        if (!e.trainable) {
            out.add(e.name, e.value.detach(), false);
            continue;
        }
        const auto* g = grads.find(e.name);
        if (g == nullptr) throw ContractError("optimizer: missing gradient for '" + e.name + "'");
        if (g->value.shape() != e.value.shape()) throw DimensionError("optimizer: gradient shape mismatch for '" + e.name + "'");
        const auto p = e.value.data();
        const auto gv = g->value.data();
        std::vector<double> updated(p.begin(), p.end());

        if (kind_ == OptimizerKind::Sgd) {
            for (std::size_t i = 0; i < updated.size(); ++i) updated[i] -= lr_ * gv[i];
        } else {
            const auto* m_prev = first_.find(e.name);
            const auto* v_prev = second_.find(e.name);
            std::vector<double> m(updated.size(), 0.0);
            std::vector<double> v(updated.size(), 0.0);
            if (m_prev != nullptr) std::copy(m_prev->value.data().begin(), m_prev->value.data().end(), m.begin());
            if (v_prev != nullptr) std::copy(v_prev->value.data().begin(), v_prev->value.data().end(), v.begin());
            for (std::size_t i = 0; i < updated.size(); ++i) {
                m[i] = adam_.beta1 * m[i] + (1.0 - adam_.beta1) * gv[i];
                v[i] = adam_.beta2 * v[i] + (1.0 - adam_.beta2) * gv[i] * gv[i];
                const double m_hat = m[i] / correction1;
                const double v_hat = v[i] / correction2;
                updated[i] -= lr_ * m_hat / (std::sqrt(v_hat) + adam_.epsilon);
            }
            first.add(e.name, Tensor(e.value.shape(), std::move(m)));
            second.add(e.name, Tensor(e.value.shape(), std::move(v)));
        }
        out.add(e.name, Tensor(e.value.shape(), std::move(updated)), true);
    }
    if (kind_ == OptimizerKind::Adam) {
        first_ = std::move(first);
        second_ = std::move(second);
    }
    return out;
}

NamedTensors Optimizer::state() const {
    NamedTensors out;
    out.add("step", Tensor::scalar(static_cast<double>(steps_)), false);
    for (const auto& e : first_) out.add("m/" + e.name, e.value, false);
    for (const auto& e : second_) out.add("v/" + e.name, e.value, false);
    return out;
}

void Optimizer::load_state(const NamedTensors& state) {
    NamedTensors first;
    NamedTensors second;
    std::uint64_t steps = 0;
    for (const auto& e : state) {
        if (e.name == "step") {
            steps = static_cast<std::uint64_t>(e.value.item());
        } else if (e.name.starts_with("m/")) {
            first.add(e.name.substr(2), e.value);
        } else if (e.name.starts_with("v/")) {
            second.add(e.name.substr(2), e.value);
        } else {
            throw ContractError("optimizer: unexpected state entry '" + e.name + "'");
        }
    }
    steps_ = steps;
    first_ = std::move(first);
    second_ = std::move(second);
}

ad::GradientMap clip_by_global_norm(const ad::GradientMap& grads, double max_norm) {
    const double norm = ad::global_norm(grads);
    if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
    if (max_norm <= 0.0 || norm <= max_norm) return grads.detached();
    const double factor = max_norm / norm;
    ad::GradientMap out;
    for (const auto& e : grads) {
        std::vector<double> v(e.value.data().begin(), e.value.data().end());
        for (auto& x : v) x *= factor;
        out.add(e.name, Tensor(e.value.shape(), std::move(v)), e.trainable);
    }
    return out;
}

}  // namespace mtml
