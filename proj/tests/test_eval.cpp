// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mtml/error.hpp"
#include "mtml/eval.hpp"
#include "mtml/ops.hpp"

namespace mtml {
namespace {

using ad::ParameterSet;
using ad::Tensor;

std::vector<std::string> words(const std::string& s) { return tokenize(s); }

class ConstantLogitsModel final : public SequenceModel {
public:
    ConstantLogitsModel(std::size_t vocab, std::vector<double> logits) : logits_(std::move(logits)) {
        config_.vocab_size = vocab;
        config_.embed_dim = 1;
    }
    const ModelConfig& config() const noexcept override { return config_; }
    std::string architecture() const override { return "constant"; }
    ParameterSet init(std::uint64_t) const override {
        ParameterSet p;
        p.add("w", Tensor({config_.vocab_size}, logits_));
        return p;
    }
    Tensor logits(const ParameterSet& params, std::span<const TokenId>, std::span<const TokenId> target_in,
                  const ForwardOptions&) const override {
        return ad::expand_leading(params.at("w"), {target_in.size(), config_.vocab_size});
    }

private:
    ModelConfig config_;
    std::vector<double> logits_;
};

TrainingExample example(std::vector<TokenId> ctx, std::vector<TokenId> resp) {
    return TrainingExample{TokenSequence{std::move(ctx)}, wrap_target(TokenSequence{std::move(resp)}), {}};
}

TEST(Bleu, HandComputedBrevityCase) {
    EXPECT_NEAR(bleu({words("a b c d")}, {words("a b c d e")}), std::exp(-0.25), 1e-15);
    EXPECT_NEAR(bleu({words("a b c d")}, {words("a b c d e")}), 0.7788007830714049, 1e-15);
}

TEST(Bleu, HandComputedPartialMatch) {
    // Clipped precisions 5/6, smoothed 4/6, 2/5, 1/4; no brevity penalty.
    const double expected = std::pow((5.0 / 6.0) * (4.0 / 6.0) * (2.0 / 5.0) * (1.0 / 4.0), 0.25);
    EXPECT_NEAR(bleu({words("the cat sat on the mat")}, {words("the cat is on the mat")}), expected, 1e-15);
}

TEST(Bleu, IdentityAndDisjoint) {
    const std::vector<std::vector<std::string>> refs = {words("i like to ski a lot"), words("hello there")};
    EXPECT_DOUBLE_EQ(bleu(refs, refs), 1.0);
    EXPECT_DOUBLE_EQ(bleu({words("x y z"), words("q")}, refs), 0.0);
}

TEST(Bleu, CorpusLevelPoolsCounts) {
    // Pooled unigram 3/4, bigrams (1+1)/(2+1), higher orders 1/1, brevity exp(1 - 6/4).
    const double expected = std::exp(1.0 - 6.0 / 4.0) * std::pow(0.75 * (2.0 / 3.0), 0.25);
    EXPECT_NEAR(bleu({words("a b"), words("c x")}, {words("a b q"), words("c d e")}), expected, 1e-15);
}

TEST(Bleu, EdgeCases) {
    EXPECT_THROW((void)bleu(std::vector<std::vector<std::string>>{}, {}), ContractError);
    EXPECT_THROW((void)bleu({words("a")}, {}), ContractError);
    EXPECT_DOUBLE_EQ(bleu({{}}, {words("a b")}), 0.0);
}

TEST(Perplexity, UniformModelGivesVocabularySize) {
    const ConstantLogitsModel model(37, std::vector<double>(37, 0.0));
    const ParameterSet p = model.init(0);
    const std::vector<TrainingExample> ex = {example({5}, {6, 7, 8}), example({9, 10}, {11})};
    EXPECT_NEAR(perplexity(model, p, ex), 37.0, 37.0 * 1e-12);
}

TEST(Perplexity, MatchesClosedFormForFixedDistribution) {
    const std::vector<double> w = {0.0, 0.3, 1.2, -0.4, 0.0, 0.7, -1.1};
    const ConstantLogitsModel model(7, w);
    const ParameterSet p = model.init(0);
    double z = 0.0;
    for (double v : w) z += std::exp(v);
    // Labels: 5, 6, EOS for the first example; 6, EOS for the second.
    const std::vector<TokenId> labels = {5, 6, special::kEos, 6, special::kEos};
    double nll = 0.0;
    for (TokenId t : labels) nll -= w[t] - std::log(z);
    const double expected = std::exp(nll / static_cast<double>(labels.size()));
    const std::vector<TrainingExample> ex = {example({5}, {5, 6}), example({6}, {6})};
    EXPECT_NEAR(perplexity(model, p, ex), expected, expected * 1e-12);
    EXPECT_THROW((void)perplexity(model, p, {}), ContractError);
}

TEST(ConsistencyProxy, EntailedNegatedAndNeutral) {
    const std::vector<std::string> persona = {"i love hunting", "i have two dogs"};
    EXPECT_EQ(consistency_proxy(words("i love hunting"), persona), 1);
    EXPECT_EQ(consistency_proxy(words("i do not love hunting"), persona), -1);
    EXPECT_EQ(consistency_proxy(words("i never love hunting"), persona), -1);
    EXPECT_EQ(consistency_proxy(words("i like cooking"), persona), 0);
    EXPECT_EQ(consistency_proxy(words("hunting is fun"), persona), 0);
    EXPECT_EQ(consistency_proxy(words("yes , two dogs"), persona), 1);
}

TEST(ConsistencyProxy, NegationOutsideWindowDoesNotFlip) {
    const std::vector<std::string> persona = {"i love hunting"};
    EXPECT_EQ(consistency_proxy(words("no , i am sure that i love hunting"), persona), 1);
    ConsistencyOptions wide;
    wide.negation_window = 10;
    EXPECT_EQ(consistency_proxy(words("no , i am sure that i love hunting"), persona, wide), -1);
}

TEST(ConsistencyProxy, ThresholdAndContradictionPriority) {
    const std::vector<std::string> persona = {"i love hunting", "my favorite food is pizza"};
    ConsistencyOptions one;
    one.entail_threshold = 1;
    EXPECT_EQ(consistency_proxy(words("pizza"), persona, one), 1);
    EXPECT_EQ(consistency_proxy(words("pizza"), persona), 0);
    EXPECT_EQ(consistency_proxy(words("favorite food pizza but i do not love hunting"), persona), -1);
    EXPECT_THROW((void)consistency_proxy(words("x"), {}), ContractError);
}

TEST(ConsistencyProxy, StopwordsAndNegationsAreNotContent) {
    EXPECT_TRUE(is_stopword("the"));
    EXPECT_TRUE(is_stopword(","));
    EXPECT_FALSE(is_stopword("hunting"));
    EXPECT_TRUE(is_negation("not"));
    EXPECT_EQ(consistency_proxy(words("i do not"), {"i do not"}), 0);
}

class KShotFixture : public ::testing::Test {
protected:
    void SetUp() override {
        std::mt19937_64 rng(11);
        SyntheticOptions opts;
        opts.valid_fraction = 0.0;
        opts.test_fraction = 0.5;
        corpus = generate_synthetic(6, 14, rng, opts);
        vocab = Vocabulary::build(corpus_texts(corpus.train));
        ModelConfig c;
        c.vocab_size = vocab.size();
        c.embed_dim = 8;
        c.num_heads = 2;
        c.feedforward_dim = 16;
        c.max_sequence_length = 96;
        model = std::make_unique<TransformerModel>(c);
        params = model->init(3);
        protocol.k = 5;
        protocol.finetune_steps = 1;
        protocol.finetune_lr = 0.05;
        protocol.reserve_shots = 10;
        protocol.max_generate_len = 8;
    }

    CorpusSplits corpus;
    Vocabulary vocab;
    std::unique_ptr<TransformerModel> model;
    ParameterSet params;
    KShotProtocol protocol;
};

const PersonaMetrics* find(const EvalReport& r, const std::string& id) {
    for (const auto& p : r.personas) {
        if (p.persona_id == id) return &p;
    }
    return nullptr;
}

TEST_F(KShotFixture, ReportCoversEveryPersonaAndIsDeterministic) {
    const KShotResult a = kshot_evaluate(*model, params, corpus.test, vocab, protocol, 5);
    const KShotResult b = kshot_evaluate(*model, params, corpus.test, vocab, protocol, 5);
    ASSERT_EQ(a.report.personas.size(), corpus.test.size());
    EXPECT_TRUE(a.report.skipped.empty());
    EXPECT_EQ(a.report, b.report);
    double macro = 0.0;
    for (const auto& p : a.report.personas) {
        EXPECT_TRUE(std::isfinite(p.ppl));
        EXPECT_GT(p.ppl, 1.0);
        EXPECT_GE(p.bleu, 0.0);
        EXPECT_LE(p.bleu, 1.0);
        EXPECT_GE(p.c_proxy, -1.0);
        EXPECT_LE(p.c_proxy, 1.0);
        // 14 dialogues, 10 reserved, 3 owner turns each.
        EXPECT_EQ(p.examples, 12u);
        macro += p.ppl;
    }
    EXPECT_NEAR(a.report.ppl, macro / static_cast<double>(a.report.personas.size()), 1e-12);
    EXPECT_EQ(a.generations.size(), 12u * corpus.test.size());
}

TEST_F(KShotFixture, NoFinetuningEqualsDirectEvaluation) {
    protocol.finetune_steps = 0;
    const EvalReport r = kshot_evaluate(*model, params, corpus.test, vocab, protocol, 5).report;
    for (const auto& task : corpus.test) {
        const KShotSplit split = kshot_split(task, protocol, 5);
        PersonaMetrics direct =
            evaluate_examples(*model, params, make_examples(task, split.held_out, vocab, {}), task.statements, vocab,
                              protocol);
        direct.persona_id = task.persona_id;
        ASSERT_NE(find(r, task.persona_id), nullptr);
        EXPECT_EQ(*find(r, task.persona_id), direct);
    }
}

TEST_F(KShotFixture, SplitShotsAndHeldOutAreDisjoint) {
    const PersonaTask& task = corpus.test.front();
    protocol.k = 5;
    const KShotSplit five = kshot_split(task, protocol, 1);
    protocol.k = 10;
    const KShotSplit ten = kshot_split(task, protocol, 1);
    EXPECT_EQ(five.held_out, ten.held_out);
    EXPECT_EQ(five.held_out.size(), 4u);
    EXPECT_TRUE(std::equal(five.shots.begin(), five.shots.end(), ten.shots.begin()));
    for (std::size_t s : ten.shots) {
        EXPECT_EQ(std::count(ten.held_out.begin(), ten.held_out.end(), s), 0);
    }
    EXPECT_NE(kshot_split(task, protocol, 2).shots, ten.shots);
}

TEST_F(KShotFixture, HeldOutSetDoesNotDependOnK) {
    protocol.finetune_steps = 0;
    protocol.k = 5;
    const EvalReport five = kshot_evaluate(*model, params, corpus.test, vocab, protocol, 9).report;
    protocol.k = 10;
    const EvalReport ten = kshot_evaluate(*model, params, corpus.test, vocab, protocol, 9).report;
    EXPECT_EQ(five.personas, ten.personas);
    EXPECT_EQ(five.ppl, ten.ppl);
    EXPECT_EQ(five.bleu, ten.bleu);
    EXPECT_EQ(five.c_proxy, ten.c_proxy);
}

TEST_F(KShotFixture, PersonasAreIsolated) {
    const EvalReport base = kshot_evaluate(*model, params, corpus.test, vocab, protocol, 5).report;

    auto perturbed = corpus.test;
    for (auto& dialogue : perturbed.front().dialogues) {
        for (auto& turn : dialogue) turn.text = "cat cat cat dog";
    }
    const EvalReport other = kshot_evaluate(*model, params, perturbed, vocab, protocol, 5).report;
    for (std::size_t i = 1; i < corpus.test.size(); ++i) {
        const std::string& id = corpus.test[i].persona_id;
        EXPECT_EQ(*find(base, id), *find(other, id)) << id;
    }

    auto reversed = corpus.test;
    std::reverse(reversed.begin(), reversed.end());
    const EvalReport rev = kshot_evaluate(*model, params, reversed, vocab, protocol, 5).report;
    for (const auto& task : corpus.test) EXPECT_EQ(*find(base, task.persona_id), *find(rev, task.persona_id));
}

TEST_F(KShotFixture, FinetuningChangesMetricsButIgnoresStatements) {
    protocol.finetune_steps = 0;
    const EvalReport frozen = kshot_evaluate(*model, params, corpus.test, vocab, protocol, 5).report;
    protocol.finetune_steps = 2;
    const EvalReport tuned = kshot_evaluate(*model, params, corpus.test, vocab, protocol, 5).report;
    EXPECT_NE(frozen.ppl, tuned.ppl);

    auto blank = corpus.test;
    for (auto& task : blank) task.statements = {"zzz qqq"};
    const EvalReport no_persona = kshot_evaluate(*model, params, blank, vocab, protocol, 5).report;
    for (std::size_t i = 0; i < tuned.personas.size(); ++i) {
        EXPECT_EQ(tuned.personas[i].ppl, no_persona.personas[i].ppl);
        EXPECT_EQ(tuned.personas[i].bleu, no_persona.personas[i].bleu);
    }
}

TEST_F(KShotFixture, ShortPersonasAreSkipped) {
    auto split = corpus.test;
    split.front().dialogues.resize(10);
    const EvalReport r = kshot_evaluate(*model, params, split, vocab, protocol, 5).report;
    ASSERT_EQ(r.skipped.size(), 1u);
    EXPECT_EQ(r.skipped[0].persona_id, split.front().persona_id);
    EXPECT_EQ(r.personas.size(), split.size() - 1);
}

TEST_F(KShotFixture, JsonReport) {
    const KShotResult r = kshot_evaluate(*model, params, corpus.test, vocab, protocol, 5);
    const nlohmann::json j = to_json(r.report);
    EXPECT_EQ(j.at("k"), 5);
    EXPECT_EQ(j.at("personas").size(), corpus.test.size());
    EXPECT_DOUBLE_EQ(j.at("ppl").get<double>(), r.report.ppl);
    const nlohmann::json g = to_json(r.generations.front());
    EXPECT_EQ(g.at("persona_id"), r.generations.front().persona_id);
    EXPECT_TRUE(g.contains("hypothesis"));
}

TEST_F(KShotFixture, RejectsBadProtocol) {
    protocol.k = 0;
    EXPECT_THROW((void)kshot_evaluate(*model, params, corpus.test, vocab, protocol, 5), ConfigError);
}

}  // namespace
}  // namespace mtml
