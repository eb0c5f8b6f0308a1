// SPDX-License-Identifier: Apache-2.0
#include "mtml/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mtml/error.hpp"
#include "mtml/ops.hpp"

namespace mtml {

using ad::GradientMap;
using ad::ParameterSet;
using ad::Tensor;

GradientComparison compare_gradients(const GradientMap& analytic, const GradientMap& numeric) {
    GradientComparison out;
    for (const auto& e : numeric) {
        const Tensor& a = analytic.at(e.name);
        if (a.numel() != e.value.numel()) throw ContractError("compare_gradients: shape mismatch for " + e.name);
        for (std::size_t i = 0; i < a.numel(); ++i) {
            const double x = a.at(i);
            const double n = e.value.at(i);
            const double diff = std::abs(x - n);
            const double err = diff / std::max(1.0, std::abs(n));
            if (out.worst_parameter.empty() || err > out.max_error) {
                out.max_error = err;
                out.worst_parameter = e.name;
                out.worst_index = i;
            }
            const double magnitude = std::max(std::abs(x), std::abs(n));
            if (magnitude > 1e-8) out.max_relative_error = std::max(out.max_relative_error, diff / magnitude);
        }
    }
    return out;
}

namespace {

ParameterSet shifted(const ParameterSet& at, const std::string& name, std::size_t index, double delta) {
    ParameterSet p;
    for (const auto& e : at) {
        std::vector<double> v(e.value.data().begin(), e.value.data().end());
        if (e.name == name) v[index] += delta;
        p.add(e.name, Tensor(e.value.shape(), std::move(v)), e.trainable);
    }
    return p;
}

}  // namespace

GradientMap numeric_gradient(const std::function<double(const ParameterSet&)>& f, const ParameterSet& at,
                             double epsilon) {
    const ParameterSet base = at.detached();
    GradientMap out;
    for (const auto& e : base) {
        std::vector<double> g(e.value.numel(), 0.0);
        if (e.trainable) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] = (f(shifted(base, e.name, i, epsilon)) - f(shifted(base, e.name, i, -epsilon))) / (2.0 * epsilon);
            }
        }
        out.add(e.name, Tensor(e.value.shape(), std::move(g)), e.trainable);
    }
    return out;
}

GradientMap composite_numeric_gradient(const SequenceModel& model, const ParameterSet& params,
                                       const std::vector<TaskData>& tasks, const MetaConfig& config,
                                       const LossSelector& inner, const LossSelector& outer, double epsilon) {
    if (tasks.empty()) throw ContractError("composite_numeric_gradient: no tasks");
    const auto objective = [&](const ParameterSet& p) {
        double total = 0.0;
        for (const auto& task : tasks) {
            ParameterSet phi = p;
            for (std::size_t step = 0; step < config.inner_steps; ++step) {
                ad::Tape tape;
                const ParameterSet w = ad::watch(tape, phi);
                const GradientMap g = ad::backward(selected_loss(model, w, task.support, inner).value, w);
                ParameterSet next;
                for (const auto& e : phi) {
                    std::vector<double> v(e.value.data().begin(), e.value.data().end());
                    if (e.trainable) {
                        const Tensor& gt = g.at(e.name);
                        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= config.eta_t * gt.at(i);
                    }
                    next.add(e.name, Tensor(e.value.shape(), std::move(v)), e.trainable);
                }
                phi = std::move(next);
            }
            total += selected_loss(model, phi, task.query, outer).value.item();
        }
        return total / static_cast<double>(tasks.size());
    };
    return numeric_gradient(objective, params, epsilon);
}

bool GradcheckReport::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const GradcheckResult& c) { return c.informational || c.passed; });
}

namespace {

struct Preset {
    std::size_t vocab = 0;
    std::size_t width = 0;
    std::size_t ff = 0;
    std::size_t tasks = 0;
};

Preset preset_for(const std::string& name) {
    if (name == "tiny") return {8, 4, 8, 1};
    if (name == "small") return {12, 8, 16, 2};
    throw ConfigError("unknown gradcheck preset '" + name + "' (expected tiny or small)");
}

Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(ad::numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v));
}

Tensor ops_objective(const ParameterSet& p) {
    const Tensor& a = p.at("a");
    const Tensor& b = p.at("b");
    const Tensor& g = p.at("gain");
    const Tensor& v = p.at("bias");
    const Tensor x = ad::matmul(a, b);
    const Tensor picked = ad::pick(ad::log_softmax(x), ad::make_indices({0, 2, 1}));
    const Tensor normed = ad::layer_norm(a, g, v);
    const Tensor soft = ad::softmax(ad::transpose(ad::scale(normed, 0.7)));
    const Tensor pos = ad::add_scalar(ad::exp(a), 0.5);
    const Tensor ratio = ad::div(a, pos);
    const Tensor powered = ad::pow(pos, 1.5);
    const Tensor rows = ad::gather_rows(b, ad::make_indices({3, 0, 3}));
    const Tensor joined = ad::concat({ad::slice(a, 1, 1, 2), ad::slice(rows, 1, 0, 2)}, 0);
    const Tensor masked = ad::masked_fill(ad::mul(joined, joined), ad::make_mask({1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1}), 0.0);
    const Tensor broadcast = ad::add(normed, ad::expand_leading(ad::sum_leading(a, {4}), {3, 4}));
    Tensor total = ad::sum(picked);
    total = ad::add(total, ad::sum(ad::mul(soft, soft)));
    total = ad::add(total, ad::mean(ratio));
    total = ad::add(total, ad::scale(ad::sum(powered), 0.1));
    total = ad::add(total, ad::sum(masked));
    total = ad::add(total, ad::sum(ad::log(ad::add_scalar(ad::mul(broadcast, broadcast), 1.0))));
    return total;
}

GradcheckResult finish(std::string name, GradientMap analytic, const GradientMap& numeric, const GradcheckOptions& o,
                       bool informational = false) {
    if (o.inject_fault) {
        auto entries = analytic.entries();
        GradientMap tampered;
        bool done = false;
        for (auto& e : entries) {
            if (!done && e.trainable && e.value.numel() > 0) {
                std::vector<double> v(e.value.data().begin(), e.value.data().end());
                v[0] += 1e-2 * std::max(1.0, std::abs(v[0]));
                e.value = Tensor(e.value.shape(), std::move(v));
                done = true;
            }
            tampered.add(e.name, e.value, e.trainable);
        }
        analytic = std::move(tampered);
    }
    GradcheckResult r;
    r.name = std::move(name);
    r.comparison = compare_gradients(analytic, numeric);
    r.parameters = numeric.scalar_count();
    r.informational = informational;
    r.passed = r.comparison.max_error < o.tolerance;
    return r;
}

GradientMap analytic_gradient(const std::function<Tensor(const ParameterSet&)>& f, const ParameterSet& at) {
    ad::Tape tape;
    const ParameterSet w = ad::watch(tape, at);
    return ad::backward(f(w), w).detached();
}

std::vector<TokenId> random_tokens(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
    std::uniform_int_distribution<TokenId> dist(special::kCount, static_cast<TokenId>(vocab - 1));
    std::vector<TokenId> out(n);
    for (auto& t : out) t = dist(rng);
    return out;
}

TrainingExample random_example(std::size_t vocab, std::mt19937_64& rng) {
    return TrainingExample{TokenSequence{random_tokens(4, vocab, rng)},
                           wrap_target(TokenSequence{random_tokens(3, vocab, rng)}),
                           wrap_target(TokenSequence{random_tokens(4, vocab, rng)})};
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
    const Preset preset = preset_for(options.preset);
    std::mt19937_64 rng(options.seed);
    GradcheckReport report;
    constexpr double kEps = 1e-5;

    {
        ParameterSet p;
        p.add("a", random_tensor({3, 4}, rng, -1.0, 1.0));
        p.add("b", random_tensor({4, 3}, rng, -1.0, 1.0));
        p.add("gain", random_tensor({4}, rng, 0.5, 1.5));
        p.add("bias", random_tensor({4}, rng, -0.5, 0.5));
        report.checks.push_back(finish("autodiff.ops", analytic_gradient(ops_objective, p),
                                       numeric_gradient([](const ParameterSet& q) { return ops_objective(q).item(); },
                                                        p, kEps),
                                       options));
    }

    ModelConfig cfg;
    cfg.vocab_size = preset.vocab;
    cfg.embed_dim = preset.width;
    cfg.num_heads = 2;
    cfg.feedforward_dim = preset.ff;
    cfg.max_sequence_length = 16;
    const TrainingExample ex = random_example(preset.vocab, rng);

    for (const std::string arch : {"bag_of_words", "transformer"}) {
        const auto model = make_model(arch, cfg);
        const ParameterSet p = model->init(options.seed);
        const auto loss = [&](const ParameterSet& q) { return response_loss(*model, q, ex.context, ex.response); };
        report.checks.push_back(finish("seqmodel." + arch, analytic_gradient(loss, p),
                                       numeric_gradient([&](const ParameterSet& q) { return loss(q).item(); }, p, kEps),
                                       options));
    }

    {
        ModelConfig toy = cfg;
        toy.vocab_size = 6;
        const BagOfWordsModel model(toy);
        const ParameterSet p = model.init(options.seed);
        std::vector<TaskData> tasks;
        for (std::size_t t = 0; t < preset.tasks; ++t) {
            tasks.push_back(TaskData{"task-" + std::to_string(t),
                                     {random_example(6, rng), random_example(6, rng)},
                                     {random_example(6, rng)}});
        }
        MetaConfig mc;
        mc.eta_t = 0.5;
        mc.first_order = options.first_order;
        const auto sel = LossSelector::multitask(0.8);
        const MetaGradient mg = meta_gradient(model, p, tasks, mc, sel, sel);
        const GradientMap fd = composite_numeric_gradient(model, p, tasks, mc, sel, sel, kEps);
        report.checks.push_back(finish(options.first_order ? "metalearn.meta_gradient (first-order gap)"
                                                           : "metalearn.meta_gradient",
                                       mg.gradient, fd, options, options.first_order));
    }
    return report;
}

}  // namespace mtml
