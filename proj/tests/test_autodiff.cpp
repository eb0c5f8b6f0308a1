// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mtml/autodiff.hpp"
#include "mtml/error.hpp"
#include "mtml/ops.hpp"
#include "support/test_util.hpp"

using namespace mtml;
using namespace mtml::ad;
using mtml::testing::random_tensor;
using mtml::testing::values_of;

TEST(Forward, AddElementwise) {
    const Tensor out = add(Tensor({2}, {1, 2}), Tensor({2}, {3, 4}));
    EXPECT_EQ(values_of(out), (std::vector<double>{4, 6}));
}

TEST(Forward, MatmulOfOnes) {
    const Tensor out = matmul(Tensor::ones({2, 3}), Tensor::ones({3, 2}));
    EXPECT_EQ(out.shape(), (Shape{2, 2}));
    EXPECT_EQ(values_of(out), (std::vector<double>{3, 3, 3, 3}));
}

TEST(Forward, SoftmaxOfZeros) {
    const Tensor out = softmax(Tensor({2}, {0, 0}));
    EXPECT_DOUBLE_EQ(out.at(0), 0.5);
    EXPECT_DOUBLE_EQ(out.at(1), 0.5);
}

TEST(Forward, LeadingBroadcastOnly) {
    const Tensor out = add(Tensor::ones({2, 3}), Tensor({3}, {1, 2, 3}));
    EXPECT_EQ(values_of(out), (std::vector<double>{2, 3, 4, 2, 3, 4}));
    EXPECT_THROW((void)add(Tensor::ones({2, 3}), Tensor::ones({2})), DimensionError);
}

TEST(Forward, ShapeErrorNamesOperationAndShapes) {
    try {
        (void)matmul(Tensor::ones({2, 3}), Tensor::ones({2, 3}));
        FAIL() << "expected a dimension error";
    } catch (const DimensionError& e) {
        const std::string what = e.what();
        EXPECT_NE(what.find("matmul"), std::string::npos);
        EXPECT_NE(what.find("[2, 3]"), std::string::npos);
    }
}

TEST(Forward, ConstantsStayOffTape) {
    Tape tape;
    const Tensor x = tape.watch(Tensor::ones({2}));
    const Tensor c = add(Tensor::ones({2}), Tensor::ones({2}));
    EXPECT_FALSE(c.on_tape());
    EXPECT_TRUE(add(x, c).on_tape());
    const Tensor detached = x.detach();
    EXPECT_FALSE(detached.on_tape());
}

TEST(Backward, SumGivesOnes) {
    Tape tape;
    const Tensor p = tape.watch(Tensor::full({2, 3}, 0.7));
    const Tensor g = gradients(sum(p), std::vector<Tensor>{p}, false)[0];
    EXPECT_EQ(values_of(g), std::vector<double>(6, 1.0));
}

TEST(Backward, SquareAtThree) {
    Tape tape;
    const Tensor p = tape.watch(Tensor::scalar(3.0));
    const Tensor g = gradients(mul(p, p), std::vector<Tensor>{p}, false)[0];
    EXPECT_DOUBLE_EQ(g.item(), 6.0);
}

TEST(Backward, GradientOfGradientThroughOneInnerStep) {
    // d/dp [(p - eta * 2p)^2] = 2 (1 - 2 eta)^2 p, which is 1.28 at p = 1, eta = 0.1.
    Tape tape;
    const Tensor p = tape.watch(Tensor::scalar(1.0));
    const Tensor inner_grad = gradients(mul(p, p), std::vector<Tensor>{p}, true)[0];
    EXPECT_TRUE(inner_grad.on_tape());
    const Tensor adapted = sub(p, scale(inner_grad, 0.1));
    const Tensor outer = gradients(mul(adapted, adapted), std::vector<Tensor>{p}, false)[0];
    EXPECT_NEAR(outer.item(), 1.28, 1e-15);
}

TEST(Backward, WithoutCreateGraphGradientIsConstant) {
    Tape tape;
    const Tensor p = tape.watch(Tensor::scalar(2.0));
    const Tensor g = gradients(mul(p, p), std::vector<Tensor>{p}, false)[0];
    EXPECT_FALSE(g.on_tape());
}

TEST(Backward, NonScalarLossIsRejected) {
    Tape tape;
    const Tensor p = tape.watch(Tensor::ones({3}));
    EXPECT_THROW((void)gradients(p, std::vector<Tensor>{p}, false), ContractError);
}

TEST(Backward, DetachedLossIsRejected) {
    ParameterSet params;
    params.add("w", Tensor::ones({2}));
    EXPECT_THROW((void)backward(Tensor::scalar(1.0), params, false), DetachedError);
}

TEST(Backward, UnusedParameterGetsZeros) {
    Tape tape;
    ParameterSet params;
    params.add("used", Tensor::ones({2}));
    params.add("unused", Tensor::ones({3}));
    const ParameterSet w = watch(tape, params);
    const GradientMap g = backward(sum(w.at("used")), w, false);
    EXPECT_EQ(values_of(g.at("unused")), std::vector<double>(3, 0.0));
}

TEST(Backward, DetachedTensorContributesNothing) {
    Tape tape;
    const Tensor p = tape.watch(Tensor::scalar(2.0));
    const Tensor loss = add(mul(p, p), mul(p.detach(), p.detach()));
    EXPECT_DOUBLE_EQ(gradients(loss, std::vector<Tensor>{p}, false)[0].item(), 4.0);
}

TEST(FunctionalUpdate, ZeroLearningRateIsIdentity) {
    ParameterSet params;
    params.add("w", Tensor({3}, {0.1, -2.0, 5.5}));
    GradientMap grads;
    grads.add("w", Tensor({3}, {9.0, -1.0, 3.0}));
    EXPECT_EQ(values_of(functional_update(params, grads, 0.0).at("w")), values_of(params.at("w")));
}

TEST(FunctionalUpdate, OneStep) {
    ParameterSet params;
    params.add("w", Tensor::scalar(1.0));
    GradientMap grads;
    grads.add("w", Tensor::scalar(2.0));
    EXPECT_DOUBLE_EQ(functional_update(params, grads, 0.1).at("w").item(), 0.8);
}

TEST(FunctionalUpdate, ZeroGradientIsIdentityForAnyRate) {
    ParameterSet params;
    params.add("w", Tensor({2}, {0.3, 0.4}));
    GradientMap grads;
    grads.add("w", Tensor::zeros({2}));
    for (double lr : {0.0, 0.5, 7.0}) {
        EXPECT_EQ(values_of(functional_update(params, grads, lr).at("w")), values_of(params.at("w")));
    }
}

TEST(FunctionalUpdate, MissingGradientIsAContractError) {
    ParameterSet params;
    params.add("w", Tensor::scalar(1.0));
    params.add("frozen", Tensor::scalar(1.0), false);
    GradientMap grads;
    EXPECT_THROW((void)functional_update(params, grads, 0.1), ContractError);
    grads.add("w", Tensor::scalar(1.0));
    EXPECT_NO_THROW((void)functional_update(params, grads, 0.1));
}

TEST(FunctionalUpdate, SourceIsNotMutated) {
    ParameterSet params;
    params.add("w", Tensor::scalar(1.0));
    GradientMap grads;
    grads.add("w", Tensor::scalar(2.0));
    (void)functional_update(params, grads, 0.25);
    EXPECT_DOUBLE_EQ(params.at("w").item(), 1.0);
}

TEST(FunctionalUpdate, RecordedGradientsStayDifferentiable) {
    Tape tape;
    ParameterSet params;
    params.add("w", Tensor({2}, {0.5, -1.5}));
    const ParameterSet w = watch(tape, params);
    const Tensor inner = sum(pow(w.at("w"), 3.0));
    const ParameterSet updated = functional_update(w, backward(inner, w, true), 0.1);
    const Tensor outer = sum(updated.at("w"));
    // d/dw (w - 0.3 w^2) = 1 - 0.6 w
    const Tensor g = backward(outer, w, false).at("w");
    EXPECT_NEAR(g.at(0), 1.0 - 0.6 * 0.5, 1e-14);
    EXPECT_NEAR(g.at(1), 1.0 + 0.6 * 1.5, 1e-14);
}

TEST(FiniteDifference, SumOfSquares) {
    std::mt19937_64 rng(7);
    ParameterSet at;
    at.add("a", random_tensor({3, 2}, rng));
    at.add("b", random_tensor({4}, rng));
    const auto f = [](const ParameterSet& p) { return add(sum(mul(p.at("a"), p.at("a"))), sum(mul(p.at("b"), p.at("b")))); };
    EXPECT_LT(finite_difference_check(f, at, 1e-4).max_relative_error, 1e-5);
}

TEST(FiniteDifference, ConstantFunctionHasZeroError) {
    ParameterSet at;
    at.add("a", Tensor({2}, {1.0, 2.0}));
    const auto f = [](const ParameterSet&) { return Tensor::scalar(3.0); };
    EXPECT_EQ(finite_difference_check(f, at, 1e-4).max_relative_error, 0.0);
}

TEST(FiniteDifference, NonFiniteValueIsANumericError) {
    ParameterSet at;
    at.add("a", Tensor({1}, {0.0}));
    const auto f = [](const ParameterSet& p) { return sum(log(p.at("a"))); };
    EXPECT_THROW((void)finite_difference_check(f, at, 1e-4), NumericError);
}

TEST(FiniteDifference, InnerUpdateThenLossOnTenParameters) {
    // A 10-parameter softmax regressor adapted by one SGD step on a support
    // point, then scored on a query point; differentiated end to end.
    std::mt19937_64 rng(11);
    ParameterSet at;
    at.add("w", random_tensor({4, 2}, rng));
    at.add("b", random_tensor({2}, rng));
    const Tensor support_x = random_tensor({1, 4}, rng);
    const Tensor query_x = random_tensor({1, 4}, rng);
    const auto nll = [](const ParameterSet& p, const Tensor& x, std::size_t label) {
        const Tensor logits = add(matmul(x, p.at("w")), p.at("b"));
        return neg(sum(pick(log_softmax(logits), make_indices({label}))));
    };
    const auto composite = [&](const ParameterSet& p) {
        const Tensor inner = nll(p, support_x, 0);
        GradientMap g;
        if (inner.on_tape()) {
            g = backward(inner, p, true);
        } else {
            // Perturbed evaluations run on constants; differentiate on a private tape.
            Tape scratch;
            const ParameterSet w = watch(scratch, p);
            g = backward(nll(w, support_x, 0), w, false);
        }
        return nll(functional_update(p, g, 0.5), query_x, 1);
    };
    EXPECT_LT(finite_difference_check(composite, at, 1e-5).max_relative_error, 1e-4);
}

namespace {

struct OpCase {
    std::string name;
    std::vector<Shape> shapes;
    double lo = -1.0;
    double hi = 1.0;
    std::function<Tensor(const std::vector<Tensor>&)> apply;
};

std::vector<OpCase> op_cases() {
    const IndexList rows = make_indices({2, 0, 2, 1});
    const IndexList cols = make_indices({1, 3, 0});
    const Mask mask = make_mask({1, 0, 0, 1, 0, 1});
    return {
        {"add", {{3, 4}, {3, 4}}, -1, 1, [](const auto& x) { return add(x[0], x[1]); }},
        {"add_broadcast", {{3, 4}, {4}}, -1, 1, [](const auto& x) { return add(x[0], x[1]); }},
        {"sub_broadcast", {{4}, {2, 4}}, -1, 1, [](const auto& x) { return sub(x[0], x[1]); }},
        {"mul", {{2, 3}, {2, 3}}, -1, 1, [](const auto& x) { return mul(x[0], x[1]); }},
        {"mul_broadcast", {{2, 3}, {3}}, -1, 1, [](const auto& x) { return mul(x[0], x[1]); }},
        {"div", {{2, 3}, {3}}, 0.5, 1.5, [](const auto& x) { return div(x[0], x[1]); }},
        {"scale", {{5}}, -1, 1, [](const auto& x) { return scale(x[0], -2.5); }},
        {"add_scalar", {{5}}, -1, 1, [](const auto& x) { return add_scalar(x[0], 0.75); }},
        {"pow", {{4}}, 0.5, 1.5, [](const auto& x) { return pow(x[0], -0.5); }},
        {"matmul", {{2, 3}, {3, 4}}, -1, 1, [](const auto& x) { return matmul(x[0], x[1]); }},
        {"matmul_nt", {{2, 3}, {4, 3}}, -1, 1, [](const auto& x) { return matmul(x[0], x[1], false, true); }},
        {"matmul_tn", {{3, 2}, {3, 4}}, -1, 1, [](const auto& x) { return matmul(x[0], x[1], true, false); }},
        {"matmul_tt", {{3, 2}, {4, 3}}, -1, 1, [](const auto& x) { return matmul(x[0], x[1], true, true); }},
        {"transpose", {{2, 3}}, -1, 1, [](const auto& x) { return transpose(x[0]); }},
        {"exp", {{2, 3}}, -1, 1, [](const auto& x) { return exp(x[0]); }},
        {"log", {{2, 3}}, 0.5, 2.0, [](const auto& x) { return log(x[0]); }},
        {"relu", {{6}}, 0.3, 1.0, [](const auto& x) { return relu(sub(x[0], Tensor({6}, {0, 2, 0, 2, 0, 2}))); }},
        {"softmax", {{3, 4}}, -2, 2, [](const auto& x) { return softmax(x[0]); }},
        {"log_softmax", {{3, 4}}, -2, 2, [](const auto& x) { return log_softmax(x[0]); }},
        {"sum_leading", {{3, 2, 2}}, -1, 1, [](const auto& x) { return sum_leading(x[0], {2, 2}); }},
        {"expand_leading", {{3}}, -1, 1, [](const auto& x) { return expand_leading(x[0], {2, 3}); }},
        {"sum_last", {{3, 4}}, -1, 1, [](const auto& x) { return sum_last(x[0]); }},
        {"expand_last", {{3, 1}}, -1, 1, [](const auto& x) { return expand_last(x[0], 4); }},
        {"mean", {{3, 4}}, -1, 1, [](const auto& x) { return mean(x[0]); }},
        {"gather_rows", {{3, 2}}, -1, 1, [rows](const auto& x) { return gather_rows(x[0], rows); }},
        {"scatter_add_rows", {{4, 2}}, -1, 1, [rows](const auto& x) { return scatter_add_rows(x[0], rows, 3); }},
        {"pick", {{3, 4}}, -1, 1, [cols](const auto& x) { return pick(x[0], cols); }},
        {"unpick", {{3}}, -1, 1, [cols](const auto& x) { return unpick(x[0], cols, 4); }},
        {"concat_rows", {{1, 3}, {2, 3}}, -1, 1, [](const auto& x) { return concat({x[0], x[1]}, 0); }},
        {"concat_cols", {{2, 1}, {2, 3}}, -1, 1, [](const auto& x) { return concat({x[0], x[1]}, 1); }},
        {"slice", {{3, 5}}, -1, 1, [](const auto& x) { return slice(x[0], 1, 1, 3); }},
        {"slice_pad", {{3, 2}}, -1, 1, [](const auto& x) { return slice_pad(x[0], 1, 2, 5); }},
        {"masked_fill", {{2, 3}}, -1, 1, [mask](const auto& x) { return masked_fill(x[0], mask, -7.0); }},
        {"reshape", {{2, 3}}, -1, 1, [](const auto& x) { return reshape(x[0], {3, 2}); }},
        {"layer_norm", {{2, 4}, {4}, {4}}, -1, 1, [](const auto& x) { return layer_norm(x[0], x[1], x[2]); }},
    };
}

ParameterSet case_params(const OpCase& c, std::mt19937_64& rng) {
    ParameterSet p;
    for (std::size_t i = 0; i < c.shapes.size(); ++i) {
        p.add("x" + std::to_string(i), random_tensor(c.shapes[i], rng, c.lo, c.hi));
    }
    return p;
}

std::vector<Tensor> operands(const ParameterSet& p) {
    std::vector<Tensor> out;
    for (const auto& e : p) out.push_back(e.value);
    return out;
}

}  // namespace

TEST(GradientProperty, EveryOpMatchesCentralDifferences) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        std::mt19937_64 rng(seed);
        for (const auto& c : op_cases()) {
            const ParameterSet at = case_params(c, rng);
            const Tensor probe_out = c.apply(operands(at));
            const Tensor weights = random_tensor(probe_out.shape(), rng);
            const auto f = [&](const ParameterSet& p) { return sum(mul(c.apply(operands(p)), weights)); };
            const auto check = finite_difference_check(f, at, 1e-5);
            EXPECT_LT(check.max_relative_error, 1e-4) << c.name << " seed " << seed;
        }
    }
}

TEST(GradientProperty, SecondOrderThroughEveryOp) {
    // h(p) = <op(p - eta * grad g(p)), w2> with g(p) = <op(p)^2, w1>.
    constexpr double eta = 0.05;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        std::mt19937_64 rng(100 + seed);
        for (const auto& c : op_cases()) {
            const ParameterSet at = case_params(c, rng);
            const Tensor probe_out = c.apply(operands(at));
            const Tensor w1 = random_tensor(probe_out.shape(), rng);
            const Tensor w2 = random_tensor(probe_out.shape(), rng);
            const auto inner = [&](const ParameterSet& p) {
                const Tensor y = c.apply(operands(p));
                return sum(mul(mul(y, y), w1));
            };
            const auto h = [&](const ParameterSet& p) {
                GradientMap g;
                const Tensor li = inner(p);
                if (li.on_tape()) {
                    g = backward(li, p, true);
                } else {
                    Tape scratch;
                    const ParameterSet w = watch(scratch, p);
                    g = backward(inner(w), w, false);
                }
                return sum(mul(c.apply(operands(functional_update(p, g, eta))), w2));
            };
            const auto check = finite_difference_check(h, at, 1e-5);
            EXPECT_LT(check.max_relative_error, 1e-4) << c.name << " seed " << seed;
        }
    }
}

TEST(GradientProperty, DeterministicBitIdentical) {
    const auto run = [] {
        std::mt19937_64 rng(3);
        Tape tape;
        ParameterSet params;
        params.add("a", random_tensor({3, 4}, rng));
        params.add("b", random_tensor({4, 2}, rng));
        const ParameterSet w = watch(tape, params);
        const Tensor loss = sum(log_softmax(matmul(w.at("a"), w.at("b"))));
        const GradientMap g = backward(loss, w, true);
        return std::make_pair(tape.size(), backward(sum(mul(g.at("a"), g.at("a"))), w, false).detached());
    };
    const auto first = run();
    const auto second = run();
    EXPECT_EQ(first.first, second.first);
    EXPECT_TRUE(mtml::testing::bit_identical(first.second, second.second));
}

TEST(Tape, NodesAreTopologicallyOrdered) {
    Tape tape;
    const Tensor a = tape.watch(Tensor::ones({2, 2}));
    const Tensor b = tape.watch(Tensor::ones({2, 2}));
    const Tensor loss = sum(softmax(matmul(a, b)));
    (void)gradients(loss, std::vector<Tensor>{a, b}, true);
    for (std::size_t i = 0; i < tape.size(); ++i) {
        for (const auto& in : tape.node(i).inputs) {
            if (in.on_tape()) {
                EXPECT_LT(in.node(), i);
            }
        }
    }
    EXPECT_FALSE(tape.record_backward_ops());
}
