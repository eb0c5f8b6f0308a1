// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mtml/error.hpp"
#include "mtml/metalearn.hpp"
#include "mtml/ops.hpp"
#include "support/test_util.hpp"

namespace mtml {
namespace {

using ad::GradientMap;
using ad::ParameterSet;
using ad::Tensor;

// Logits are the same learned vector at every position, whatever the input.
class ConstantLogitsModel final : public SequenceModel {
public:
    explicit ConstantLogitsModel(std::size_t vocab) {
        config_.vocab_size = vocab;
        config_.embed_dim = 1;
    }
    const ModelConfig& config() const noexcept override { return config_; }
    std::string architecture() const override { return "constant"; }
    ParameterSet init(std::uint64_t) const override {
        ParameterSet p;
        std::vector<double> w(config_.vocab_size);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.1 * static_cast<double>(i % 4) - 0.15;
        p.add("w", Tensor({config_.vocab_size}, w));
        return p;
    }
    Tensor logits(const ParameterSet& params, std::span<const TokenId>, std::span<const TokenId> target_in,
                  const ForwardOptions&) const override {
        return ad::expand_leading(params.at("w"), {target_in.size(), config_.vocab_size});
    }

private:
    ModelConfig config_;
};

BagOfWordsModel toy_model() {
    ModelConfig c;
    c.vocab_size = 6;
    c.embed_dim = 4;
    c.max_sequence_length = 16;
    return BagOfWordsModel(c);
}

TrainingExample example(std::vector<TokenId> ctx, std::vector<TokenId> resp, std::vector<TokenId> persona) {
    return TrainingExample{TokenSequence{std::move(ctx)}, wrap_target(TokenSequence{std::move(resp)}),
                           wrap_target(TokenSequence{std::move(persona)})};
}

std::vector<TaskData> toy_tasks() {
    return {
        TaskData{"a", {example({5, 4, 3}, {5, 3}, {3, 4, 5}), example({3}, {4}, {3, 4, 5})},
                 {example({4, 5}, {3, 3}, {3, 4, 5})}},
        TaskData{"b", {example({3, 3}, {5}, {5, 5})}, {example({5}, {4, 5}, {5, 5}), example({4}, {3}, {5, 5})}},
    };
}

MetaConfig toy_config(double alpha = 0.8) {
    MetaConfig c;
    c.alpha = alpha;
    c.eta_t = 0.5;
    c.eta_o = 0.01;
    c.tasks_per_batch = 1;
    return c;
}

double max_abs_diff(const GradientMap& a, const GradientMap& b) {
    double worst = 0.0;
    for (const auto& e : a) {
        const auto x = e.value.data();
        const auto y = b.at(e.name).data();
        for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]));
    }
    return worst;
}

// Independent oracle: central differences of the composite query loss at the
// SGD-adapted parameters, over every scalar parameter.
GradientMap composite_fd(const SequenceModel& model, const ParameterSet& params, const TaskData& task,
                         const MetaConfig& config, const LossSelector& inner, const LossSelector& outer, double eps) {
    const auto objective = [&](const ParameterSet& p) {
        ad::Tape tape;
        const ParameterSet w = ad::watch(tape, p);
        const Tensor support = selected_loss(model, w, task.support, inner).value;
        const GradientMap g = ad::backward(support, w);
        ParameterSet adapted;
        for (const auto& e : p) {
            std::vector<double> v(e.value.data().begin(), e.value.data().end());
            const auto gv = g.at(e.name).data();
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= config.eta_t * gv[i];
            adapted.add(e.name, Tensor(e.value.shape(), std::move(v)));
        }
        return selected_loss(model, adapted, task.query, outer).value.item();
    };
    GradientMap out;
    for (const auto& e : params) {
        std::vector<double> grad(e.value.numel());
        for (std::size_t k = 0; k < grad.size(); ++k) {
            const auto shifted = [&](double delta) {
                ParameterSet p;
                for (const auto& f : params) {
                    std::vector<double> v(f.value.data().begin(), f.value.data().end());
                    if (f.name == e.name) v[k] += delta;
                    p.add(f.name, Tensor(f.value.shape(), std::move(v)));
                }
                return objective(p);
            };
            grad[k] = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
        }
        out.add(e.name, Tensor(e.value.shape(), std::move(grad)));
    }
    return out;
}

TEST(MultitaskLoss, Boundaries) {
    const Tensor r = Tensor::scalar(2.0);
    const Tensor c = Tensor::scalar(3.0);
    EXPECT_EQ(multitask_loss(r, c, 1.0).item(), 2.0);
    EXPECT_EQ(multitask_loss(r, c, 0.0).item(), 3.0);
    EXPECT_NEAR(multitask_loss(r, c, 0.8).item(), 2.2, 1e-15);
    EXPECT_THROW((void)multitask_loss(r, c, 1.1), ContractError);
    EXPECT_THROW((void)multitask_loss(r, c, -0.1), ContractError);
}

TEST(MultitaskLoss, DifferentiableThroughBothOperands) {
    ad::Tape tape;
    const Tensor a = tape.watch(Tensor::scalar(1.5));
    const Tensor b = tape.watch(Tensor::scalar(-0.5));
    const auto g = ad::gradients(multitask_loss(ad::mul(a, a), ad::mul(b, b), 0.8), std::vector<Tensor>{a, b});
    EXPECT_NEAR(g[0].item(), 0.8 * 3.0, 1e-15);
    EXPECT_NEAR(g[1].item(), 0.2 * -1.0, 1e-15);
}

TEST(InnerUpdate, ZeroLearningRateIsIdentity) {
    const auto model = toy_model();
    const ParameterSet p = model.init(1);
    MetaConfig c = toy_config();
    c.eta_t = 0.0;
    const auto r = inner_update(model, p, toy_tasks()[0].support, c, LossSelector::multitask(0.8));
    EXPECT_TRUE(testing::bit_identical(r.adapted, p));
}

TEST(InnerUpdate, MatchesClosedFormSgdStep) {
    const ConstantLogitsModel model(7);
    const ParameterSet p = model.init(0);
    const std::vector<TrainingExample> support = {example({5}, {5, 6}, {6})};
    MetaConfig c = toy_config();
    c.eta_t = 0.3;
    const auto r = inner_update(model, p, support, c, LossSelector::response());

    // Targets are 5, 6, EOS; loss = mean over the three of -log softmax(w)[y].
    const auto w = p.at("w").data();
    double z = 0.0;
    for (double x : w) z += std::exp(x);
    std::vector<double> expected(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double onehot = (i == 5 || i == 6 || i == special::kEos) ? 1.0 / 3.0 : 0.0;
        expected[i] = w[i] - 0.3 * (std::exp(w[i]) / z - onehot);
    }
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(r.adapted.at("w").at(i), expected[i], 1e-14);
    double loss = 0.0;
    for (std::size_t y : {5u, 6u, 2u}) loss += -(w[y] - std::log(z));
    EXPECT_NEAR(*r.support_response, loss / 3.0, 1e-14);
    EXPECT_FALSE(r.support_reconstruction.has_value());
}

TEST(InnerUpdate, ResponseOnlyIgnoresPersonaTarget) {
    const auto model = toy_model();
    const ParameterSet p = model.init(2);
    auto support = toy_tasks()[0].support;
    const auto a = inner_update(model, p, support, toy_config(), LossSelector::response());
    for (auto& ex : support) ex.persona_target = wrap_target(TokenSequence{{4, 4, 4, 4}});
    const auto b = inner_update(model, p, support, toy_config(), LossSelector::response());
    EXPECT_TRUE(testing::bit_identical(a.adapted, b.adapted));
}

TEST(InnerUpdate, NonFiniteLossIsDivergenceWithTaskId) {
    const auto model = toy_model();
    ParameterSet p;
    for (const auto& e : model.init(0)) {
        std::vector<double> v(e.value.data().begin(), e.value.data().end());
        if (e.name == "output.bias") v[2] = std::nan("");
        p.add(e.name, Tensor(e.value.shape(), std::move(v)));
    }
    try {
        (void)inner_update(model, p, toy_tasks()[0].support, toy_config(), LossSelector::response(), "task-7", 12);
        FAIL() << "expected DivergenceError";
    } catch (const DivergenceError& e) {
        EXPECT_EQ(e.task_id(), "task-7");
        EXPECT_EQ(e.iteration(), 12u);
    }
}

TEST(MetaGradient, MatchesFiniteDifferencesOfCompositeObjective) {
    const auto model = toy_model();
    const ParameterSet p = model.init(3);
    ASSERT_LE(p.scalar_count(), 100u);
    const std::vector<TaskData> tasks = {toy_tasks()[0]};
    const MetaConfig c = toy_config(0.8);
    const auto sel = LossSelector::multitask(0.8);
    const MetaGradient mg = meta_gradient(model, p, tasks, c, sel, sel);
    const GradientMap fd = composite_fd(model, p, tasks[0], c, sel, sel, 1e-5);
    double worst = 0.0;
    for (const auto& e : fd) {
        for (std::size_t i = 0; i < e.value.numel(); ++i) {
            const double a = mg.gradient.at(e.name).at(i);
            const double n = e.value.at(i);
            worst = std::max(worst, std::abs(a - n) / std::max(1.0, std::abs(n)));
        }
    }
    EXPECT_LT(worst, 1e-7);
}

TEST(MetaGradient, SecondOrderTermsMatter) {
    const auto model = toy_model();
    const ParameterSet p = model.init(3);
    const std::vector<TaskData> tasks = {toy_tasks()[0]};
    MetaConfig second = toy_config();
    MetaConfig first = toy_config();
    first.first_order = true;
    const auto sel = LossSelector::multitask(0.8);
    EXPECT_GT(max_abs_diff(meta_gradient(model, p, tasks, second, sel, sel).gradient,
                           meta_gradient(model, p, tasks, first, sel, sel).gradient),
              1e-4);
}

TEST(MetaGradient, FirstOrderEqualsQueryGradientAtAdaptedPoint) {
    const auto model = toy_model();
    const ParameterSet p = model.init(4);
    const std::vector<TaskData> tasks = {toy_tasks()[1]};
    MetaConfig c = toy_config();
    c.first_order = true;
    const auto sel = LossSelector::multitask(0.8);
    const MetaGradient mg = meta_gradient(model, p, tasks, c, sel, sel);

    ParameterSet adapted;
    {
        ad::Tape tape;
        const ParameterSet w = ad::watch(tape, p);
        const GradientMap g = ad::backward(selected_loss(model, w, tasks[0].support, sel).value, w);
        adapted = ad::functional_update(p, ad::stop_gradient(g), c.eta_t).detached();
    }
    ad::Tape tape;
    const ParameterSet w = ad::watch(tape, adapted);
    const GradientMap oracle = ad::backward(selected_loss(model, w, tasks[0].query, sel).value, w);
    EXPECT_LT(max_abs_diff(mg.gradient, oracle), 1e-14);
}

TEST(MetaGradient, ZeroInnerRateEqualsDirectQueryGradient) {
    const auto model = toy_model();
    const ParameterSet p = model.init(5);
    const std::vector<TaskData> tasks = {toy_tasks()[0]};
    MetaConfig c = toy_config();
    c.eta_t = 0.0;
    const auto sel = LossSelector::multitask(0.8);
    const MetaGradient mg = meta_gradient(model, p, tasks, c, sel, sel);
    ad::Tape tape;
    const ParameterSet w = ad::watch(tape, p);
    const GradientMap direct = ad::backward(selected_loss(model, w, tasks[0].query, sel).value, w);
    EXPECT_LT(max_abs_diff(mg.gradient, direct), 1e-15);
}

TEST(MetaGradient, DuplicatingTasksLeavesGradientUnchanged) {
    const auto model = toy_model();
    const ParameterSet p = model.init(6);
    const auto tasks = toy_tasks();
    std::vector<TaskData> doubled;
    for (const auto& t : tasks) {
        doubled.push_back(t);
        doubled.push_back(t);
    }
    const auto sel = LossSelector::multitask(0.8);
    const MetaConfig c = toy_config();
    EXPECT_LT(max_abs_diff(meta_gradient(model, p, tasks, c, sel, sel).gradient,
                           meta_gradient(model, p, doubled, c, sel, sel).gradient),
              1e-14);
}

TEST(MetaGradient, AlphaZeroIgnoresResponseTokens) {
    const auto model = toy_model();
    const ParameterSet p = model.init(7);
    auto tasks = toy_tasks();
    const auto sel = LossSelector::multitask(0.0);
    const MetaConfig c = toy_config(0.0);
    const GradientMap before = meta_gradient(model, p, tasks, c, sel, sel).gradient;
    for (auto& t : tasks) {
        for (auto* set : {&t.support, &t.query}) {
            for (auto& ex : *set) ex.response = wrap_target(TokenSequence{{4, 4, 5}});
        }
    }
    EXPECT_TRUE(testing::bit_identical(before, meta_gradient(model, p, tasks, c, sel, sel).gradient));
}

TEST(MtmlStep, AlphaOneMatchesPamlBitForBit) {
    const auto model = toy_model();
    ParameterSet a = model.init(8);
    ParameterSet b = a;
    Optimizer oa(OptimizerKind::Adam, 0.01);
    Optimizer ob(OptimizerKind::Adam, 0.01);
    const MetaConfig c = toy_config(1.0);
    for (std::size_t it = 1; it <= 5; ++it) {
        a = mtml_step(model, a, toy_tasks(), c, oa, it).params;
        b = paml_step(model, b, toy_tasks(), toy_config(0.3), ob, it).params;
    }
    EXPECT_TRUE(testing::bit_identical(a, b));
}

TEST(MtmlStep, ReportsPerTaskLosses) {
    const auto model = toy_model();
    Optimizer opt(OptimizerKind::Adam, 0.01);
    const auto r = mtml_step(model, model.init(1), toy_tasks(), toy_config(0.8), opt, 3).report;
    ASSERT_EQ(r.tasks.size(), 2u);
    EXPECT_EQ(r.iteration, 3u);
    for (const auto& t : r.tasks) {
        ASSERT_TRUE(t.support_response && t.support_reconstruction && t.query_response && t.query_reconstruction);
        EXPECT_NEAR(t.query_loss, 0.8 * *t.query_response + 0.2 * *t.query_reconstruction, 1e-12);
    }
    EXPECT_GT(r.grad_norm, 0.0);
    const auto j = to_json(r);
    EXPECT_EQ(j.at("mode"), "mtml");
    EXPECT_FALSE(j.contains("inner_loss"));
}

TEST(AmtmlStep, ParityFollowsIteration) {
    const auto model = toy_model();
    Optimizer opt(OptimizerKind::Adam, 0.01);
    const auto p = model.init(2);
    const auto even = amtml_step(model, p, toy_tasks(), toy_config(), opt, 2).report;
    EXPECT_EQ(*even.inner_loss, "response");
    EXPECT_EQ(*even.outer_loss, "reconstruction");
    EXPECT_FALSE(even.tasks[0].support_reconstruction.has_value());
    EXPECT_FALSE(even.tasks[0].query_response.has_value());
    const auto odd = amtml_step(model, p, toy_tasks(), toy_config(), opt, 3).report;
    EXPECT_EQ(*odd.inner_loss, "reconstruction");
    EXPECT_EQ(*odd.outer_loss, "response");
}

TEST(AmtmlStep, EvenStepIgnoresQueryResponses) {
    const auto model = toy_model();
    const ParameterSet p = model.init(9);
    auto tasks = toy_tasks();
    const MetaConfig c = toy_config();
    const GradientMap before =
        meta_gradient(model, p, tasks, c, LossSelector::response(), LossSelector::reconstruction()).gradient;
    for (auto& t : tasks) {
        for (auto& ex : t.query) ex.response = wrap_target(TokenSequence{{5, 5, 5}});
    }
    EXPECT_TRUE(testing::bit_identical(
        before, meta_gradient(model, p, tasks, c, LossSelector::response(), LossSelector::reconstruction()).gradient));
}

CorpusSplits small_corpus(std::uint64_t seed, std::size_t personas = 12, std::size_t dialogues = 4) {
    std::mt19937_64 rng(seed);
    return generate_synthetic(personas, dialogues, rng);
}

Vocabulary vocab_for(const CorpusSplits& s) { return Vocabulary::build(corpus_texts(s.train)); }

ModelConfig small_transformer(std::size_t vocab) {
    ModelConfig c;
    c.vocab_size = vocab;
    c.embed_dim = 16;
    c.num_heads = 2;
    c.feedforward_dim = 32;
    c.max_sequence_length = 48;
    return c;
}

TEST(StdStep, GradientIndependentOfStatementsUnlessPersonaInContext) {
    const CorpusSplits s = small_corpus(1);
    const Vocabulary v = vocab_for(s);
    const TransformerModel model(small_transformer(v.size()));
    const ParameterSet p = model.init(1);
    std::mt19937_64 rng(3);
    const EpisodeBatch batch = sample_episode(s.train, 2, rng);
    auto altered = s.train;
    for (auto& t : altered) t.statements = {"i live in paris"};

    for (TrainMode mode : {TrainMode::STD, TrainMode::STD_P}) {
        MetaConfig c;
        c.mode = mode;
        Optimizer o1(OptimizerKind::Sgd, 1.0);
        Optimizer o2(OptimizerKind::Sgd, 1.0);
        c.clip_norm = 0.0;
        const auto a = std_step(model, p, materialize(batch, s.train, v, c), c, o1, 1).params;
        const auto b = std_step(model, p, materialize(batch, altered, v, c), c, o2, 1).params;
        EXPECT_EQ(testing::bit_identical(a, b), mode == TrainMode::STD) << to_string(mode);
    }
}

TEST(Train, ZeroIterationsReturnsInitialParameters) {
    const CorpusSplits s = small_corpus(2);
    const Vocabulary v = vocab_for(s);
    const TransformerModel model(small_transformer(v.size()));
    MetaConfig c;
    c.max_iterations = 0;
    c.tasks_per_batch = 4;
    const auto r = train(model, s, v, c, 5);
    EXPECT_TRUE(testing::bit_identical(r.best_params, model.init(5)));
    EXPECT_TRUE(testing::bit_identical(r.last_params, model.init(5)));
    EXPECT_TRUE(r.log.empty());
    EXPECT_EQ(r.best_iteration, 0u);
}

TEST(Train, DeterministicGivenSeed) {
    const CorpusSplits s = small_corpus(3);
    const Vocabulary v = vocab_for(s);
    const TransformerModel model(small_transformer(v.size()));
    MetaConfig c;
    c.max_iterations = 6;
    c.tasks_per_batch = 3;
    c.eval_every = 3;
    const auto a = train(model, s, v, c, 11);
    const auto b = train(model, s, v, c, 11);
    EXPECT_TRUE(testing::bit_identical(a.last_params, b.last_params));
    EXPECT_TRUE(testing::bit_identical(a.optimizer_state, b.optimizer_state));
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(to_json(a.log[i]).dump(), to_json(b.log[i]).dump());
    const auto other = train(model, s, v, c, 12);
    EXPECT_FALSE(testing::bit_identical(a.last_params, other.last_params));
}

TEST(Train, StdIgnoresStatements) {
    CorpusSplits s = small_corpus(4);
    const Vocabulary v = vocab_for(s);
    const TransformerModel model(small_transformer(v.size()));
    MetaConfig c;
    c.mode = TrainMode::STD;
    c.max_iterations = 4;
    c.tasks_per_batch = 3;
    c.eval_every = 2;
    const auto a = train(model, s, v, c, 1);
    for (auto* split : {&s.train, &s.valid, &s.test}) {
        for (auto& t : *split) t.statements.clear();
    }
    const auto b = train(model, s, v, c, 1);
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(to_json(a.log[i]).dump(), to_json(b.log[i]).dump());
    EXPECT_TRUE(testing::bit_identical(a.last_params, b.last_params));
}

TEST(Train, AmtmlLogAlternatesParity) {
    const CorpusSplits s = small_corpus(5);
    const Vocabulary v = vocab_for(s);
    ModelConfig mc;
    mc.vocab_size = v.size();
    mc.embed_dim = 4;
    mc.max_sequence_length = 48;
    const BagOfWordsModel model(mc);
    MetaConfig c;
    c.mode = TrainMode::AMTML;
    c.max_iterations = 20;
    c.tasks_per_batch = 2;
    c.eval_every = 0;
    const auto r = train(model, s, v, c, 2);
    std::size_t even = 0;
    for (const auto& rep : r.log) {
        const bool is_even = rep.iteration % 2 == 0;
        EXPECT_EQ(*rep.inner_loss, is_even ? "response" : "reconstruction");
        EXPECT_EQ(*rep.outer_loss, is_even ? "reconstruction" : "response");
        even += is_even;
    }
    EXPECT_EQ(even, 10u);
    EXPECT_EQ(r.log.front().iteration, 1u);
}

TEST(Train, EarlyStoppingKeepsBestParameters) {
    const CorpusSplits s = small_corpus(6);
    const Vocabulary v = vocab_for(s);
    const TransformerModel model(small_transformer(v.size()));
    MetaConfig c;
    c.max_iterations = 40;
    c.tasks_per_batch = 2;
    c.eval_every = 1;
    c.early_stop_patience = 1;
    c.eta_o = 0.5;
    c.clip_norm = 0.0;
    const auto r = train(model, s, v, c, 3);
    EXPECT_TRUE(r.early_stopped);
    EXPECT_LT(r.iterations_run, 40u);
    const double best = validation_response_loss(model, r.best_params, s.valid, v, c);
    EXPECT_EQ(best, *r.best_valid_loss);
    EXPECT_LE(best, *r.initial_valid_loss);
}

TEST(Train, MtmlReducesValidationLoss) {
    const CorpusSplits s = small_corpus(7, 18, 4);
    const Vocabulary v = vocab_for(s);
    ModelConfig mc = small_transformer(v.size());
    mc.embed_dim = 8;
    mc.feedforward_dim = 16;
    const TransformerModel model(mc);
    MetaConfig c;
    c.alpha = 0.8;
    c.max_iterations = 300;
    c.tasks_per_batch = 2;
    c.eval_every = 100;
    c.eta_o = 0.003;
    const auto r = train(model, s, v, c, 1);
    EXPECT_LT(*r.best_valid_loss, *r.initial_valid_loss);
    EXPECT_LT(*r.log.back().valid_response_loss, *r.initial_valid_loss);
}

TEST(MetaConfig, ValidationRejectsBadValues) {
    MetaConfig c;
    EXPECT_NO_THROW(c.validate());
    c.alpha = 1.5;
    EXPECT_THROW(c.validate(), ConfigError);
    c = MetaConfig{};
    c.eta_t = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = MetaConfig{};
    c.tasks_per_batch = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = MetaConfig{};
    c.inner_steps = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_EQ(parse_train_mode("std_p"), TrainMode::STD_P);
    EXPECT_THROW((void)parse_train_mode("maml"), ConfigError);
}

TEST(MetaConfig, DefaultRates) {
    const MetaConfig c;
    EXPECT_EQ(c.eta_t, 0.005);
    EXPECT_EQ(c.eta_o, 0.003);
    EXPECT_EQ(c.tasks_per_batch, 16u);
    EXPECT_EQ(c.inner_steps, 1u);
    EXPECT_EQ(c.outer_optimizer, OptimizerKind::Adam);
}

}  // namespace
}  // namespace mtml
