// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtml/corpus.hpp"
#include "mtml/eval.hpp"
#include "mtml/metalearn.hpp"
#include "mtml/seqmodel.hpp"

namespace mtml::cli {

struct SyntheticCorpusConfig {
    std::size_t personas = 30;
    std::size_t dialogues = 14;
    std::uint64_t seed = 2024;
    SyntheticOptions options;
};

/// Everything that determines a run. Serialized as YAML; the resolved form of
/// every run is written next to its outputs.
struct ExperimentConfig {
    std::string architecture = "transformer";
    /// vocab_size is filled in from the corpus when zero.
    ModelConfig model;
    /// Cap on vocabulary size including special tokens; 0 keeps every word.
    std::size_t vocab_max_size = 0;
    MetaConfig meta;
    KShotProtocol protocol;
    /// Empty selects the built-in synthetic corpus.
    std::string corpus_path;
    CorpusFormat corpus_format = CorpusFormat::Jsonl;
    SyntheticCorpusConfig synthetic;
    /// Empty falls back to $MTML_OUTPUT_ROOT, then "runs".
    std::string output_root;
    std::uint64_t seed = 1;

    void validate() const;
};

[[nodiscard]] std::string to_yaml(const ExperimentConfig& config);
/// Keys missing from `text` keep their value in `base`. Unknown keys and
/// malformed values raise ConfigError.
[[nodiscard]] ExperimentConfig config_from_yaml(const std::string& text, const ExperimentConfig& base = {});
[[nodiscard]] ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& base = {});

/// Applies a dotted-path assignment such as "meta.alpha=0.7".
[[nodiscard]] ExperimentConfig apply_override(const ExperimentConfig& config, const std::string& assignment);

[[nodiscard]] CorpusSplits load_experiment_corpus(const ExperimentConfig& config);

/// Resolved output root: config value, then $MTML_OUTPUT_ROOT, then "runs".
[[nodiscard]] std::filesystem::path output_root(const ExperimentConfig& config);

/// Creates root/run-<UTC timestamp>-<seed>[-n], never reusing an existing directory.
[[nodiscard]] std::filesystem::path create_run_directory(const std::filesystem::path& root, std::uint64_t seed);

}  // namespace mtml::cli
