// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtml/autodiff.hpp"
#include "mtml/corpus.hpp"
#include "mtml/optim.hpp"
#include "mtml/seqmodel.hpp"

namespace mtml {

enum class TrainMode { MTML, AMTML, PAML, STD, STD_P };

[[nodiscard]] std::string to_string(TrainMode mode);
[[nodiscard]] TrainMode parse_train_mode(const std::string& text);

struct MetaConfig {
    TrainMode mode = TrainMode::MTML;
    double alpha = 0.8;
    double eta_t = 0.005;
    double eta_o = 0.003;
    std::size_t tasks_per_batch = 16;
    std::size_t inner_steps = 1;
    bool first_order = false;
    OptimizerKind outer_optimizer = OptimizerKind::Adam;
    AdamSettings adam;
    /// Global-norm clip on the outer gradient; 0 disables.
    double clip_norm = 1.0;
    std::size_t max_iterations = 1000;
    /// Validation checks without improvement before stopping; 0 disables.
    std::size_t early_stop_patience = 0;
    /// Iterations between validation checks; 0 disables validation.
    std::size_t eval_every = 50;
    EpisodeSizes episode;
    std::size_t max_context_tokens = 64;

    /// Throws ConfigError on out-of-range values.
    void validate() const;
};

/// Loss used on one side of the meta update.
struct LossSelector {
    enum class Kind { Multitask, ResponseOnly, ReconstructionOnly };
    Kind kind = Kind::Multitask;
    double alpha = 1.0;

    static LossSelector multitask(double alpha) { return {Kind::Multitask, alpha}; }
    static LossSelector response() { return {Kind::ResponseOnly, 1.0}; }
    static LossSelector reconstruction() { return {Kind::ReconstructionOnly, 0.0}; }

    [[nodiscard]] bool uses_response() const noexcept;
    [[nodiscard]] bool uses_reconstruction() const noexcept;
    [[nodiscard]] std::string name() const;
};

/// alpha * l_res + (1 - alpha) * l_rec. Returns an operand unchanged at the
/// boundaries alpha = 1 and alpha = 0.
[[nodiscard]] ad::Tensor multitask_loss(const ad::Tensor& l_res, const ad::Tensor& l_rec, double alpha);

/// Examples for one sampled persona.
struct TaskData {
    std::string persona_id;
    std::vector<TrainingExample> support;
    std::vector<TrainingExample> query;
};

/// Builds per-task example sets from a sampled episode. Persona statements
/// are prepended to contexts when config.mode is STD_P.
[[nodiscard]] std::vector<TaskData> materialize(const EpisodeBatch& batch, const std::vector<PersonaTask>& split,
                                                const Vocabulary& vocab, const MetaConfig& config);

/// Losses of a selector averaged over a set of examples.
struct SelectedLoss {
    ad::Tensor value;
    std::optional<double> response;
    std::optional<double> reconstruction;
};

[[nodiscard]] SelectedLoss selected_loss(const SequenceModel& model, const ad::ParameterSet& params,
                                         const std::vector<TrainingExample>& examples, const LossSelector& selector);

struct InnerResult {
    ad::ParameterSet adapted;
    /// Loss record of the first inner step.
    std::optional<double> support_response;
    std::optional<double> support_reconstruction;
    double support_loss = 0.0;
};

/// `inner_steps` SGD steps at eta_t on the selected support loss. The result
/// stays differentiable with respect to `params` unless first_order is set.
[[nodiscard]] InnerResult inner_update(const SequenceModel& model, const ad::ParameterSet& params,
                                       const std::vector<TrainingExample>& support, const MetaConfig& config,
                                       const LossSelector& selector, const std::string& task_id = {},
                                       std::size_t iteration = 0);

struct TaskReport {
    std::string persona_id;
    std::optional<double> support_response;
    std::optional<double> support_reconstruction;
    std::optional<double> query_response;
    std::optional<double> query_reconstruction;
    double query_loss = 0.0;
};

struct MetaStepReport {
    std::size_t iteration = 0;
    TrainMode mode = TrainMode::MTML;
    std::vector<TaskReport> tasks;
    double query_loss = 0.0;
    double grad_norm = 0.0;
    bool clipped = false;
    /// AMTML only: loss names used in the inner and outer loops.
    std::optional<std::string> inner_loss;
    std::optional<std::string> outer_loss;
    std::optional<double> valid_response_loss;
};

[[nodiscard]] nlohmann::json to_json(const MetaStepReport& report);

struct MetaGradient {
    ad::GradientMap gradient;
    std::vector<TaskReport> tasks;
    double query_loss = 0.0;
};

/// Average over tasks (in order) of the gradient of the outer loss at the
/// adapted parameters, taken with respect to `params`.
[[nodiscard]] MetaGradient meta_gradient(const SequenceModel& model, const ad::ParameterSet& params,
                                         const std::vector<TaskData>& tasks, const MetaConfig& config,
                                         const LossSelector& inner, const LossSelector& outer,
                                         std::size_t iteration = 0);

struct StepResult {
    ad::ParameterSet params;
    MetaStepReport report;
};

[[nodiscard]] StepResult mtml_step(const SequenceModel& model, const ad::ParameterSet& params,
                                   const std::vector<TaskData>& tasks, const MetaConfig& config, Optimizer& optimizer,
                                   std::size_t iteration);

/// Even iterations adapt on the response loss and meta-update on the
/// reconstruction loss; odd iterations swap the two.
[[nodiscard]] StepResult amtml_step(const SequenceModel& model, const ad::ParameterSet& params,
                                    const std::vector<TaskData>& tasks, const MetaConfig& config, Optimizer& optimizer,
                                    std::size_t iteration);

/// mtml_step with alpha forced to 1.
[[nodiscard]] StepResult paml_step(const SequenceModel& model, const ad::ParameterSet& params,
                                   const std::vector<TaskData>& tasks, const MetaConfig& config, Optimizer& optimizer,
                                   std::size_t iteration);

/// One optimizer step on the mean response loss over every support and query
/// example of the batch, with no inner loop.
[[nodiscard]] StepResult std_step(const SequenceModel& model, const ad::ParameterSet& params,
                                  const std::vector<TaskData>& tasks, const MetaConfig& config, Optimizer& optimizer,
                                  std::size_t iteration);

/// Same update as std_step; expects tasks materialized with persona context.
[[nodiscard]] StepResult std_p_step(const SequenceModel& model, const ad::ParameterSet& params,
                                    const std::vector<TaskData>& tasks, const MetaConfig& config,
                                    Optimizer& optimizer, std::size_t iteration);

/// Mean response loss over every example of a split, evaluated without a tape.
[[nodiscard]] double validation_response_loss(const SequenceModel& model, const ad::ParameterSet& params,
                                              const std::vector<PersonaTask>& split, const Vocabulary& vocab,
                                              const MetaConfig& config);

struct TrainHooks {
    /// Called with each iteration's report as soon as it is produced.
    std::function<void(const MetaStepReport&)> on_step;
};

struct TrainResult {
    /// Parameters with the best validation response loss seen (the last
    /// parameters when validation is disabled).
    ad::ParameterSet best_params;
    ad::ParameterSet last_params;
    ad::NamedTensors optimizer_state;
    std::vector<MetaStepReport> log;
    std::size_t best_iteration = 0;
    std::optional<double> initial_valid_loss;
    std::optional<double> best_valid_loss;
    std::size_t iterations_run = 0;
    bool early_stopped = false;
};

/// Runs the configured training mode. Iterations are numbered from 1. All
/// randomness derives from `seed`. When `initial` is empty the model is
/// initialized from `seed`.
[[nodiscard]] TrainResult train(const SequenceModel& model, const CorpusSplits& corpus, const Vocabulary& vocab,
                                const MetaConfig& config, std::uint64_t seed, const ad::ParameterSet& initial = {},
                                const TrainHooks& hooks = {});

}  // namespace mtml
