// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mtml/vocab.hpp"

namespace mtml {

struct Turn {
    std::string speaker;
    std::string text;

    bool operator==(const Turn&) const = default;
};

using Dialogue = std::vector<Turn>;

/// One persona, treated as one learning task. Turns whose speaker equals
/// `owner` belong to the persona being modelled.
struct PersonaTask {
    std::string persona_id;
    std::vector<std::string> statements;
    std::vector<Dialogue> dialogues;
    std::string owner = "persona";

    bool operator==(const PersonaTask&) const = default;
};

struct CorpusSplits {
    std::vector<PersonaTask> train;
    std::vector<PersonaTask> valid;
    std::vector<PersonaTask> test;

    [[nodiscard]] std::size_t size() const noexcept { return train.size() + valid.size() + test.size(); }
    bool operator==(const CorpusSplits&) const = default;
};

enum class CorpusFormat {
    /// One JSON record per line plus a `<path>.splits` manifest (persona_id TAB split).
    Jsonl,
    /// PersonaChat distribution text ("N your persona: ..." / "N partner<TAB>self<TAB><TAB>cands").
    /// `path` may be one file (split taken from its name) or a directory of such files.
    PersonaChat,
};

[[nodiscard]] CorpusFormat parse_corpus_format(const std::string& text);
[[nodiscard]] std::string to_string(CorpusFormat format);

/// Path of the split manifest that accompanies a JSONL corpus file.
[[nodiscard]] std::filesystem::path manifest_path(const std::filesystem::path& corpus);

/// Loads and validates a corpus.
///
/// Throws ParseError (with line number) on malformed records,
/// IntegrityError when a persona id is repeated or assigned to more than one
/// split, and EmptyCorpusError when the source holds no records.
[[nodiscard]] CorpusSplits load_corpus(const std::filesystem::path& path, CorpusFormat format = CorpusFormat::Jsonl);

/// Writes the canonical JSONL form and its manifest.
void write_corpus(const CorpusSplits& splits, const std::filesystem::path& path);

/// Checks task and split invariants; throws IntegrityError on violation.
void validate(const CorpusSplits& splits);

/// BOS s1 SEP s2 ... EOS. Throws ContractError for an empty list.
[[nodiscard]] TokenSequence concat_persona(const std::vector<std::string>& statements, const Vocabulary& vocab);

struct EpisodeSizes {
    std::size_t support_dialogues = 1;
    std::size_t query_dialogues = 1;
};

/// Support and query dialogue indices for one sampled persona.
struct TaskEpisode {
    std::size_t task_index = 0;
    std::vector<std::size_t> support;
    std::vector<std::size_t> query;
};

struct EpisodeBatch {
    std::vector<TaskEpisode> tasks;
};

/// Draws `m` distinct personas and, for each, disjoint support and query
/// dialogue subsets. Throws SamplingError naming the first persona that has
/// too few dialogues, or when the split has fewer than `m` personas.
[[nodiscard]] EpisodeBatch sample_episode(const std::vector<PersonaTask>& split, std::size_t m, std::mt19937_64& rng,
                                          const EpisodeSizes& sizes = {});

struct TrainingExample {
    TokenSequence context;
    TokenSequence response;
    TokenSequence persona_target;
};

struct ExampleOptions {
    /// Context budget in tokens; oldest turns are dropped first.
    std::size_t max_context_tokens = 64;
    /// Prefix the context with the persona statements (SEP-joined).
    bool persona_in_context = false;
};

/// One example per owner turn that has at least one preceding turn and a
/// non-empty tokenization. Tasks without statements get an empty persona_target.
[[nodiscard]] std::vector<TrainingExample> make_examples(const PersonaTask& task,
                                                         const std::vector<std::size_t>& dialogue_indices,
                                                         const Vocabulary& vocab, const ExampleOptions& options = {});
[[nodiscard]] std::vector<TrainingExample> make_examples(const PersonaTask& task, const Vocabulary& vocab,
                                                         const ExampleOptions& options = {});

/// All statement and utterance texts of a split, for vocabulary building.
[[nodiscard]] std::vector<std::string> corpus_texts(const std::vector<PersonaTask>& split);

struct SyntheticOptions {
    double valid_fraction = 1.0 / 6.0;
    double test_fraction = 1.0 / 6.0;
    /// Owner turns per dialogue; each follows one partner turn.
    std::size_t exchanges_per_dialogue = 3;
};

/// Templated personas over a closed vocabulary of about 200 words. Each
/// persona fills four of five attribute slots; owner replies restate the
/// matching statement, and questions about the missing slot get a negated reply.
[[nodiscard]] CorpusSplits generate_synthetic(std::size_t num_personas, std::size_t dialogues_per_persona,
                                              std::mt19937_64& rng, const SyntheticOptions& options = {});

}  // namespace mtml
