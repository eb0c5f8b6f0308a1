// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "mtml/autodiff.hpp"

namespace mtml {

enum class OptimizerKind { Adam, Sgd };

[[nodiscard]] std::string to_string(OptimizerKind kind);
[[nodiscard]] OptimizerKind parse_optimizer_kind(const std::string& text);

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// First-order optimizer over named parameters. Steps run on plain values and
/// never touch a tape.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double learning_rate, AdamSettings adam = {});

    /// Returns the updated parameters; non-trainable entries pass through.
    [[nodiscard]] ad::ParameterSet step(const ad::ParameterSet& params, const ad::GradientMap& grads);

    [[nodiscard]] OptimizerKind kind() const noexcept { return kind_; }
    [[nodiscard]] double learning_rate() const noexcept { return lr_; }
    [[nodiscard]] std::uint64_t steps() const noexcept { return steps_; }

    /// Moments as "m/<name>" and "v/<name>" plus a scalar "step" entry.
    [[nodiscard]] ad::NamedTensors state() const;
    void load_state(const ad::NamedTensors& state);

private:
    OptimizerKind kind_;
    double lr_;
    AdamSettings adam_;
    std::uint64_t steps_ = 0;
    ad::NamedTensors first_;
    ad::NamedTensors second_;
};

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. A
/// non-positive `max_norm` disables clipping.
[[nodiscard]] ad::GradientMap clip_by_global_norm(const ad::GradientMap& grads, double max_norm);

}  // namespace mtml
