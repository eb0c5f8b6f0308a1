// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mtml/tensor.hpp"

namespace mtml::ad {

/// Ordered name -> tensor map. Insertion order is the iteration order and is
/// fixed once built.
class NamedTensors {
public:
    struct Entry {
        std::string name;
        Tensor value;
        bool trainable = true;
    };

    void add(std::string name, Tensor value, bool trainable = true);

    [[nodiscard]] bool contains(std::string_view name) const;
    [[nodiscard]] const Tensor& at(std::string_view name) const;
    [[nodiscard]] const Entry* find(std::string_view name) const;
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
    [[nodiscard]] const std::vector<Entry>& entries() const noexcept { return entries_; }

    auto begin() const noexcept { return entries_.begin(); }
    auto end() const noexcept { return entries_.end(); }

    /// Total number of scalar values across all entries.
    [[nodiscard]] std::size_t scalar_count() const noexcept;

    /// Copy with every tensor detached from its tape.
    [[nodiscard]] NamedTensors detached() const;

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Model parameters (phi).
using ParameterSet = NamedTensors;
/// Gradients keyed by parameter name.
using GradientMap = NamedTensors;

/// Registers each trainable parameter as a leaf on `tape`. Non-trainable
/// entries are copied through as constants.
[[nodiscard]] ParameterSet watch(Tape& tape, const ParameterSet& params);

/// Gradient of a scalar `loss` with respect to every trainable entry of `wrt`.
///
/// Entries that do not influence the loss receive zeros. With `create_graph`
/// the backward pass is itself recorded, so the returned gradients can be
/// differentiated again.
[[nodiscard]] GradientMap backward(const Tensor& loss, const ParameterSet& wrt, bool create_graph = false);

/// Low-level form of backward over an explicit tensor list.
[[nodiscard]] std::vector<Tensor> gradients(const Tensor& loss, std::span<const Tensor> wrt, bool create_graph = false);

/// p - lr * g for each trainable entry. Recorded when the inputs are, so the
/// result stays differentiable with respect to `params`.
[[nodiscard]] ParameterSet functional_update(const ParameterSet& params, const GradientMap& grads, double lr);

/// Gradients with their tape links cut (the first-order approximation).
[[nodiscard]] GradientMap stop_gradient(const GradientMap& grads);

[[nodiscard]] double global_norm(const GradientMap& grads);

using ScalarFunction = std::function<Tensor(const ParameterSet&)>;

struct GradientCheck {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
};

/// Compares reverse-mode gradients of `f` at `at` against central differences.
///
/// Error per coordinate is |analytic - numeric| / max(1, |numeric|); the
/// maximum is returned. `f` receives tape-bound parameters for the analytic
/// pass and constants for the perturbed evaluations.
[[nodiscard]] GradientCheck finite_difference_check(const ScalarFunction& f, const ParameterSet& at,
                                                    double epsilon = 1e-4);

}  // namespace mtml::ad
