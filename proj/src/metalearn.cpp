// SPDX-License-Identifier: Apache-2.0
#include "mtml/metalearn.hpp"

#include <cmath>

#include "mtml/error.hpp"
#include "mtml/ops.hpp"

namespace mtml {

using ad::GradientMap;
using ad::ParameterSet;
using ad::Tensor;

std::string to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::MTML: return "mtml";
        case TrainMode::AMTML: return "amtml";
        case TrainMode::PAML: return "paml";
        case TrainMode::STD: return "std";
        case TrainMode::STD_P: return "std_p";
    }
    return "unknown";
}

TrainMode parse_train_mode(const std::string& text) {
    for (TrainMode m : {TrainMode::MTML, TrainMode::AMTML, TrainMode::PAML, TrainMode::STD, TrainMode::STD_P}) {
        if (to_string(m) == text) return m;
    }
    throw ConfigError("unknown training mode '" + text + "' (expected mtml, amtml, paml, std or std_p)");
}

void MetaConfig::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    if (!(eta_t > 0.0)) throw ConfigError("eta_t must be positive");
    if (!(eta_o > 0.0)) throw ConfigError("eta_o must be positive");
    if (tasks_per_batch == 0) throw ConfigError("tasks_per_batch (M) must be at least 1");
    if (inner_steps == 0) throw ConfigError("inner_steps must be at least 1");
    if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be >= 0");
    if (episode.support_dialogues == 0 || episode.query_dialogues == 0) {
        throw ConfigError("support and query dialogue counts must be at least 1");
    }
    if (max_context_tokens == 0) throw ConfigError("max_context_tokens must be positive");
}

bool LossSelector::uses_response() const noexcept {
    return kind == Kind::ResponseOnly || (kind == Kind::Multitask && alpha != 0.0);
}

bool LossSelector::uses_reconstruction() const noexcept {
    return kind == Kind::ReconstructionOnly || (kind == Kind::Multitask && alpha != 1.0);
}

std::string LossSelector::name() const {
    switch (kind) {
        case Kind::ResponseOnly: return "response";
        case Kind::ReconstructionOnly: return "reconstruction";
        case Kind::Multitask: return "multitask";
    }
    return "unknown";
}

Tensor multitask_loss(const Tensor& l_res, const Tensor& l_rec, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("multitask_loss: alpha must lie in [0, 1]");
    for (const Tensor* t : {&l_res, &l_rec}) {
        if (!t->defined() || t->numel() != 1) throw ContractError("multitask_loss: operands must be scalars");
        if (!std::isfinite(t->item())) throw NumericError("multitask_loss: operand is not finite");
    }
    if (alpha == 1.0) return l_res;
    if (alpha == 0.0) return l_rec;
    return ad::add(ad::scale(l_res, alpha), ad::scale(l_rec, 1.0 - alpha));
}

std::vector<TaskData> materialize(const EpisodeBatch& batch, const std::vector<PersonaTask>& split,
                                  const Vocabulary& vocab, const MetaConfig& config) {
    ExampleOptions options;
    options.max_context_tokens = config.max_context_tokens;
    options.persona_in_context = config.mode == TrainMode::STD_P;
    std::vector<TaskData> out;
    out.reserve(batch.tasks.size());
    for (const auto& ep : batch.tasks) {
        const PersonaTask& task = split.at(ep.task_index);
        out.push_back(TaskData{task.persona_id, make_examples(task, ep.support, vocab, options),
                               make_examples(task, ep.query, vocab, options)});
    }
    return out;
}

namespace {

Tensor mean_loss(const SequenceModel& model, const ParameterSet& params, const std::vector<TrainingExample>& examples,
                 bool reconstruction) {
    Tensor total;
    for (const auto& ex : examples) {
        const Tensor l = reconstruction ? reconstruction_loss(model, params, ex.context, ex.persona_target)
                                        : response_loss(model, params, ex.context, ex.response);
        total = total.defined() ? ad::add(total, l) : l;
    }
    return ad::scale(total, 1.0 / static_cast<double>(examples.size()));
}

bool any_on_tape(const ParameterSet& params) {
    for (const auto& e : params) {
        if (e.trainable && e.value.on_tape()) return true;
    }
    return false;
}

std::optional<double> finite_or_throw(std::optional<double> v, const char* what, const std::string& task_id,
                                      std::size_t iteration) {
    if (v && !std::isfinite(*v)) {
        throw DivergenceError(std::string(what) + " became non-finite for task '" + task_id + "' at iteration " +
                                  std::to_string(iteration),
                              iteration, task_id);
    }
    return v;
}

}  // namespace

SelectedLoss selected_loss(const SequenceModel& model, const ParameterSet& params,
                           const std::vector<TrainingExample>& examples, const LossSelector& selector) {
    if (examples.empty()) throw ContractError("loss requested over an empty example set");
    SelectedLoss out;
    Tensor res;
    Tensor rec;
    if (selector.uses_response()) {
        res = mean_loss(model, params, examples, false);
        out.response = res.item();
    }
    if (selector.uses_reconstruction()) {
        rec = mean_loss(model, params, examples, true);
        out.reconstruction = rec.item();
    }
    switch (selector.kind) {
        case LossSelector::Kind::ResponseOnly: out.value = res; break;
        case LossSelector::Kind::ReconstructionOnly: out.value = rec; break;
        case LossSelector::Kind::Multitask:
            if (selector.alpha == 1.0) {
                out.value = res;
            } else if (selector.alpha == 0.0) {
                out.value = rec;
            } else {
                out.value = multitask_loss(res, rec, selector.alpha);
            }
            break;
    }
    return out;
}

InnerResult inner_update(const SequenceModel& model, const ParameterSet& params,
                         const std::vector<TrainingExample>& support, const MetaConfig& config,
                         const LossSelector& selector, const std::string& task_id, std::size_t iteration) {
    if (support.empty()) throw ContractError("inner_update: task '" + task_id + "' has no support examples");
    if (!(config.eta_t >= 0.0)) throw ContractError("inner_update: eta_t must be >= 0");
    if (!any_on_tape(params)) {
        ad::Tape tape;
        InnerResult r = inner_update(model, ad::watch(tape, params), support, config, selector, task_id, iteration);
        r.adapted = r.adapted.detached();
        return r;
    }

    InnerResult result;
    ParameterSet phi = params;
    for (std::size_t step = 0; step < config.inner_steps; ++step) {
        const SelectedLoss loss = selected_loss(model, phi, support, selector);
        finite_or_throw(loss.response, "support response loss", task_id, iteration);
        finite_or_throw(loss.reconstruction, "support reconstruction loss", task_id, iteration);
        if (step == 0) {
            result.support_response = loss.response;
            result.support_reconstruction = loss.reconstruction;
            result.support_loss = loss.value.item();
        }
        GradientMap grads = ad::backward(loss.value, phi, !config.first_order);
        if (config.first_order) grads = ad::stop_gradient(grads);
        phi = ad::functional_update(phi, grads, config.eta_t);
    }
    result.adapted = std::move(phi);
    return result;
}

nlohmann::json to_json(const MetaStepReport& r) {
    const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : r.tasks) {
        tasks.push_back({{"persona_id", t.persona_id},
                         {"support_response", opt(t.support_response)},
                         {"support_reconstruction", opt(t.support_reconstruction)},
                         {"query_response", opt(t.query_response)},
                         {"query_reconstruction", opt(t.query_reconstruction)},
                         {"query_loss", t.query_loss}});
    }
    nlohmann::json j = {{"iteration", r.iteration},
                        {"mode", to_string(r.mode)},
                        {"query_loss", r.query_loss},
                        {"grad_norm", r.grad_norm},
                        {"clipped", r.clipped},
                        {"tasks", std::move(tasks)}};
    if (r.inner_loss) j["inner_loss"] = *r.inner_loss;
    if (r.outer_loss) j["outer_loss"] = *r.outer_loss;
    if (r.valid_response_loss) j["valid_response_loss"] = *r.valid_response_loss;
    return j;
}

namespace {

class GradientSum {
public:
    void add(const GradientMap& g) {
        if (names_.empty()) {
            for (const auto& e : g) {
                names_.push_back(e.name);
                shapes_.push_back(e.value.shape());
                sums_.emplace_back(e.value.data().begin(), e.value.data().end());
            }
            return;
        }
        std::size_t i = 0;
        for (const auto& e : g) {
            const auto d = e.value.data();
            for (std::size_t k = 0; k < d.size(); ++k) sums_[i][k] += d[k];
            ++i;
        }
    }

    [[nodiscard]] GradientMap mean(std::size_t count) const {
        GradientMap out;
        const double inv = 1.0 / static_cast<double>(count);
        for (std::size_t i = 0; i < names_.size(); ++i) {
            std::vector<double> v = sums_[i];
            for (auto& x : v) x *= inv;
            out.add(names_[i], Tensor(shapes_[i], std::move(v)));
        }
        return out;
    }

private:
    std::vector<std::string> names_;
    std::vector<ad::Shape> shapes_;
    std::vector<std::vector<double>> sums_;
};

void check_gradient(const GradientMap& g, const std::string& task_id, std::size_t iteration) {
    if (!std::isfinite(ad::global_norm(g))) {
        throw DivergenceError("gradient became non-finite for task '" + task_id + "' at iteration " +
                                  std::to_string(iteration),
                              iteration, task_id);
    }
}

StepResult apply_outer(const ParameterSet& params, const GradientMap& gradient, const MetaConfig& config,
                       Optimizer& optimizer, MetaStepReport report) {
    report.grad_norm = ad::global_norm(gradient);
    report.clipped = config.clip_norm > 0.0 && report.grad_norm > config.clip_norm;
    const GradientMap clipped = clip_by_global_norm(gradient, config.clip_norm);
    return StepResult{optimizer.step(params.detached(), clipped), std::move(report)};
}

}  // namespace

MetaGradient meta_gradient(const SequenceModel& model, const ParameterSet& params, const std::vector<TaskData>& tasks,
                           const MetaConfig& config, const LossSelector& inner, const LossSelector& outer,
                           std::size_t iteration) {
    if (tasks.empty()) throw ContractError("meta_gradient: empty task batch");
    const ParameterSet base = params.detached();
    GradientSum sum;
    MetaGradient out;
    for (const auto& task : tasks) {
        if (task.query.empty()) throw ContractError("meta_gradient: task '" + task.persona_id + "' has no query examples");
        ad::Tape tape;
        const ParameterSet watched = ad::watch(tape, base);
        const InnerResult adapted =
            inner_update(model, watched, task.support, config, inner, task.persona_id, iteration);
        const SelectedLoss q = selected_loss(model, adapted.adapted, task.query, outer);
        finite_or_throw(q.response, "query response loss", task.persona_id, iteration);
        finite_or_throw(q.reconstruction, "query reconstruction loss", task.persona_id, iteration);
        const GradientMap g = ad::backward(q.value, watched);
        check_gradient(g, task.persona_id, iteration);
        sum.add(g);

        TaskReport report;
        report.persona_id = task.persona_id;
        report.support_response = adapted.support_response;
        report.support_reconstruction = adapted.support_reconstruction;
        report.query_response = q.response;
        report.query_reconstruction = q.reconstruction;
        report.query_loss = q.value.item();
        out.query_loss += report.query_loss;
        out.tasks.push_back(std::move(report));
    }
    out.query_loss /= static_cast<double>(tasks.size());
    out.gradient = sum.mean(tasks.size());
    return out;
}

StepResult mtml_step(const SequenceModel& model, const ParameterSet& params, const std::vector<TaskData>& tasks,
                     const MetaConfig& config, Optimizer& optimizer, std::size_t iteration) {
    const LossSelector selector = LossSelector::multitask(config.alpha);
    MetaGradient mg = meta_gradient(model, params, tasks, config, selector, selector, iteration);
    MetaStepReport report;
    report.iteration = iteration;
    report.mode = TrainMode::MTML;
    report.query_loss = mg.query_loss;
    report.tasks = std::move(mg.tasks);
    return apply_outer(params, mg.gradient, config, optimizer, std::move(report));
}

StepResult amtml_step(const SequenceModel& model, const ParameterSet& params, const std::vector<TaskData>& tasks,
                      const MetaConfig& config, Optimizer& optimizer, std::size_t iteration) {
    const bool even = iteration % 2 == 0;
    const LossSelector inner = even ? LossSelector::response() : LossSelector::reconstruction();
    const LossSelector outer = even ? LossSelector::reconstruction() : LossSelector::response();
    MetaGradient mg = meta_gradient(model, params, tasks, config, inner, outer, iteration);
    MetaStepReport report;
    report.iteration = iteration;
    report.mode = TrainMode::AMTML;
    report.query_loss = mg.query_loss;
    report.tasks = std::move(mg.tasks);
    report.inner_loss = inner.name();
    report.outer_loss = outer.name();
    return apply_outer(params, mg.gradient, config, optimizer, std::move(report));
}

StepResult paml_step(const SequenceModel& model, const ParameterSet& params, const std::vector<TaskData>& tasks,
                     const MetaConfig& config, Optimizer& optimizer, std::size_t iteration) {
    MetaConfig forced = config;
    forced.alpha = 1.0;
    StepResult r = mtml_step(model, params, tasks, forced, optimizer, iteration);
    r.report.mode = TrainMode::PAML;
    return r;
}

StepResult std_step(const SequenceModel& model, const ParameterSet& params, const std::vector<TaskData>& tasks,
                    const MetaConfig& config, Optimizer& optimizer, std::size_t iteration) {
    ad::Tape tape;
    const ParameterSet watched = ad::watch(tape, params.detached());
    Tensor total;
    std::size_t count = 0;
    MetaStepReport report;
    report.iteration = iteration;
    report.mode = config.mode == TrainMode::STD_P ? TrainMode::STD_P : TrainMode::STD;
    for (const auto& task : tasks) {
        Tensor task_total;
        std::size_t task_count = 0;
        for (const auto* set : {&task.support, &task.query}) {
            for (const auto& ex : *set) {
                const Tensor l = response_loss(model, watched, ex.context, ex.response);
                task_total = task_total.defined() ? ad::add(task_total, l) : l;
                ++task_count;
            }
        }
        if (task_count == 0) continue;
        const double task_mean = task_total.item() / static_cast<double>(task_count);
        finite_or_throw(task_mean, "response loss", task.persona_id, iteration);
        TaskReport tr;
        tr.persona_id = task.persona_id;
        tr.query_response = task_mean;
        tr.query_loss = task_mean;
        report.tasks.push_back(std::move(tr));
        total = total.defined() ? ad::add(total, task_total) : task_total;
        count += task_count;
    }
    if (count == 0) throw ContractError("std_step: batch has no examples");
    const Tensor loss = ad::scale(total, 1.0 / static_cast<double>(count));
    report.query_loss = loss.item();
    const GradientMap g = ad::backward(loss, watched);
    check_gradient(g, tasks.front().persona_id, iteration);
    return apply_outer(params, g, config, optimizer, std::move(report));
}

StepResult std_p_step(const SequenceModel& model, const ParameterSet& params, const std::vector<TaskData>& tasks,
                      const MetaConfig& config, Optimizer& optimizer, std::size_t iteration) {
    MetaConfig forced = config;
    forced.mode = TrainMode::STD_P;
    return std_step(model, params, tasks, forced, optimizer, iteration);
}

double validation_response_loss(const SequenceModel& model, const ParameterSet& params,
                                const std::vector<PersonaTask>& split, const Vocabulary& vocab,
                                const MetaConfig& config) {
    ExampleOptions options;
    options.max_context_tokens = config.max_context_tokens;
    options.persona_in_context = config.mode == TrainMode::STD_P;
    const ParameterSet frozen = params.detached();
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& task : split) {
        for (const auto& ex : make_examples(task, vocab, options)) {
            total += response_loss(model, frozen, ex.context, ex.response).item();
            ++count;
        }
    }
    if (count == 0) throw ContractError("validation split has no examples");
    return total / static_cast<double>(count);
}

TrainResult train(const SequenceModel& model, const CorpusSplits& corpus, const Vocabulary& vocab,
                  const MetaConfig& config, std::uint64_t seed, const ParameterSet& initial, const TrainHooks& hooks) {
    config.validate();
    if (vocab.size() != model.config().vocab_size) {
        throw ConfigError("vocabulary size " + std::to_string(vocab.size()) + " does not match model vocab_size " +
                          std::to_string(model.config().vocab_size));
    }
    TrainResult result;
    ParameterSet params = initial.size() > 0 ? initial.detached() : model.init(seed);
    Optimizer optimizer(config.outer_optimizer, config.eta_o, config.adam);
    std::seed_seq sampling_seed{seed, std::uint64_t{0x9e3779b97f4a7c15ull}};
    std::mt19937_64 rng(sampling_seed);

    const bool validate = config.eval_every > 0 && !corpus.valid.empty();
    std::size_t stale = 0;
    if (validate) {
        result.initial_valid_loss = validation_response_loss(model, params, corpus.valid, vocab, config);
        result.best_valid_loss = result.initial_valid_loss;
    }
    result.best_params = params;

    for (std::size_t it = 1; it <= config.max_iterations; ++it) {
        const EpisodeBatch batch = sample_episode(corpus.train, config.tasks_per_batch, rng, config.episode);
        const std::vector<TaskData> tasks = materialize(batch, corpus.train, vocab, config);
        StepResult step;
        switch (config.mode) {
            case TrainMode::MTML: step = mtml_step(model, params, tasks, config, optimizer, it); break;
            case TrainMode::AMTML: step = amtml_step(model, params, tasks, config, optimizer, it); break;
            case TrainMode::PAML: step = paml_step(model, params, tasks, config, optimizer, it); break;
            case TrainMode::STD: step = std_step(model, params, tasks, config, optimizer, it); break;
            case TrainMode::STD_P: step = std_p_step(model, params, tasks, config, optimizer, it); break;
        }
        params = std::move(step.params);
        result.iterations_run = it;

        bool stop = false;
        if (validate && (it % config.eval_every == 0 || it == config.max_iterations)) {
            const double v = validation_response_loss(model, params, corpus.valid, vocab, config);
            step.report.valid_response_loss = v;
            if (v < *result.best_valid_loss) {
                result.best_valid_loss = v;
                result.best_params = params;
                result.best_iteration = it;
                stale = 0;
            } else if (config.early_stop_patience > 0 && ++stale >= config.early_stop_patience) {
                stop = true;
            }
        }
        if (hooks.on_step) hooks.on_step(step.report);
        result.log.push_back(std::move(step.report));
        if (stop) {
            result.early_stopped = true;
            break;
        }
    }
    if (!validate) {
        result.best_params = params;
        result.best_iteration = result.iterations_run;
    }
    result.last_params = std::move(params);
    result.optimizer_state = optimizer.state();
    return result;
}

}  // namespace mtml
