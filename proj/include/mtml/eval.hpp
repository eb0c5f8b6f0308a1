// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtml/corpus.hpp"
#include "mtml/seqmodel.hpp"

namespace mtml {

/// exp(total response NLL / total scored tokens). Throws ContractError on an
/// empty example list.
[[nodiscard]] double perplexity(const SequenceModel& model, const ad::ParameterSet& params,
                                const std::vector<TrainingExample>& examples);

/// Corpus-level BLEU-4 with brevity penalty. Unigram precision is unsmoothed;
/// bigram to 4-gram precisions use add-one smoothing.
[[nodiscard]] double bleu(const std::vector<std::vector<std::string>>& hypotheses,
                          const std::vector<std::vector<std::string>>& references);
[[nodiscard]] double bleu(const std::vector<TokenSequence>& hypotheses, const std::vector<TokenSequence>& references);

struct ConsistencyOptions {
    /// Shared content tokens needed before a statement counts as matched.
    std::size_t entail_threshold = 2;
    /// A negation at most this many tokens before a shared content token flips the match.
    std::size_t negation_window = 2;
};

/// Lexical stand-in for an entailment classifier: +1 when the response shares
/// at least `entail_threshold` content words with one statement, -1 when such a
/// match is negated, 0 otherwise. Any negated match outweighs other matches.
[[nodiscard]] int consistency_proxy(const std::vector<std::string>& response,
                                    const std::vector<std::string>& statements,
                                    const ConsistencyOptions& options = {});
[[nodiscard]] int consistency_proxy(const TokenSequence& response, const Vocabulary& vocab,
                                    const std::vector<std::string>& statements,
                                    const ConsistencyOptions& options = {});

[[nodiscard]] bool is_stopword(const std::string& token);
[[nodiscard]] bool is_negation(const std::string& token);

struct KShotProtocol {
    /// Dialogues per persona used for finetuning.
    std::size_t k = 10;
    /// Epochs over the k dialogues; each epoch takes one SGD step per dialogue.
    std::size_t finetune_steps = 5;
    double finetune_lr = 0.005;
    /// Leading dialogues of each persona's shuffled order that are never
    /// evaluated, so runs with different k share one held-out set.
    std::size_t reserve_shots = 10;
    std::size_t max_context_tokens = 64;
    std::size_t max_generate_len = 24;
    ConsistencyOptions consistency;
};

struct PersonaMetrics {
    std::string persona_id;
    double ppl = 0.0;
    double bleu = 0.0;
    double c_proxy = 0.0;
    std::size_t examples = 0;
    std::size_t tokens = 0;
    double nll = 0.0;

    bool operator==(const PersonaMetrics&) const = default;
};

struct SkippedPersona {
    std::string persona_id;
    std::string reason;

    bool operator==(const SkippedPersona&) const = default;
};

struct EvalReport {
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::size_t finetune_steps = 0;
    double finetune_lr = 0.0;
    /// Macro averages over evaluated personas.
    double ppl = 0.0;
    double bleu = 0.0;
    double c_proxy = 0.0;
    std::vector<PersonaMetrics> personas;
    std::vector<SkippedPersona> skipped;

    bool operator==(const EvalReport&) const = default;
};

struct GenerationRecord {
    std::string persona_id;
    std::string context;
    std::string reference;
    std::string hypothesis;
};

struct KShotResult {
    EvalReport report;
    std::vector<GenerationRecord> generations;
};

[[nodiscard]] nlohmann::json to_json(const EvalReport& report);
[[nodiscard]] nlohmann::json to_json(const GenerationRecord& record);

struct KShotSplit {
    std::vector<std::size_t> shots;
    std::vector<std::size_t> held_out;
};

/// Dialogue indices for one persona: a shuffle seeded by (seed, persona_id),
/// whose first k entries are the shots and whose entries after
/// max(k, reserve_shots) are held out. held_out is empty when the persona is
/// too short.
[[nodiscard]] KShotSplit kshot_split(const PersonaTask& task, const KShotProtocol& protocol, std::uint64_t seed);

/// Finetune-then-test protocol. Each persona gets its own copy of `pretrained`,
/// its own dialogue order derived from (seed, persona_id), finetuning on the
/// first k dialogues of that order with the response loss only, and metrics on
/// the dialogues after max(k, reserve_shots). Personas without held-out
/// dialogues are skipped and listed in the report.
[[nodiscard]] KShotResult kshot_evaluate(const SequenceModel& model, const ad::ParameterSet& pretrained,
                                         const std::vector<PersonaTask>& test_split, const Vocabulary& vocab,
                                         const KShotProtocol& protocol, std::uint64_t seed);

/// Metrics of `params` on already-built examples, without finetuning.
[[nodiscard]] PersonaMetrics evaluate_examples(const SequenceModel& model, const ad::ParameterSet& params,
                                               const std::vector<TrainingExample>& examples,
                                               const std::vector<std::string>& statements, const Vocabulary& vocab,
                                               const KShotProtocol& protocol,
                                               std::vector<GenerationRecord>* generations = nullptr);

}  // namespace mtml
