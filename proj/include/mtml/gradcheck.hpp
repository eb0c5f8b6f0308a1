// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mtml/metalearn.hpp"

namespace mtml {

/// Worst disagreement between two gradient maps with identical layout.
struct GradientComparison {
    /// max |a - n| / max(1, |n|)
    double max_error = 0.0;
    /// max |a - n| / max(|a|, |n|), over coordinates where either exceeds 1e-8
    double max_relative_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
};

[[nodiscard]] GradientComparison compare_gradients(const ad::GradientMap& analytic, const ad::GradientMap& numeric);

/// Central differences of a scalar function of constant parameters.
[[nodiscard]] ad::GradientMap numeric_gradient(const std::function<double(const ad::ParameterSet&)>& f,
                                               const ad::ParameterSet& at, double epsilon);

/// Central differences of the composite objective: query loss (outer selector)
/// at params - eta_t * grad(support loss under the inner selector), averaged
/// over tasks. Uses only first-order gradients, so it is independent of the
/// second-order machinery it checks.
[[nodiscard]] ad::GradientMap composite_numeric_gradient(const SequenceModel& model, const ad::ParameterSet& params,
                                                         const std::vector<TaskData>& tasks, const MetaConfig& config,
                                                         const LossSelector& inner, const LossSelector& outer,
                                                         double epsilon);

struct GradcheckOptions {
    /// "tiny" or "small".
    std::string preset = "tiny";
    bool first_order = false;
    /// Perturbs one analytic coordinate so every check must fail.
    bool inject_fault = false;
    double tolerance = 1e-4;
    std::uint64_t seed = 7;
};

struct GradcheckResult {
    std::string name;
    GradientComparison comparison;
    std::size_t parameters = 0;
    /// Informational checks are displayed but never fail the run.
    bool informational = false;
    bool passed = false;
};

struct GradcheckReport {
    std::vector<GradcheckResult> checks;
    [[nodiscard]] bool passed() const;
};

/// Finite-difference checks of primitive ops, both model families and the
/// meta-gradient. Throws ConfigError on an unknown preset.
[[nodiscard]] GradcheckReport run_gradcheck(const GradcheckOptions& options);

}  // namespace mtml
