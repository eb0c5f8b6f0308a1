// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>

#include "mtml/autodiff.hpp"
#include "mtml/vocab.hpp"

namespace mtml {

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 32;
    std::size_t num_heads = 2;
    std::size_t encoder_layers = 1;
    std::size_t decoder_layers = 1;
    std::size_t feedforward_dim = 64;
    std::size_t max_sequence_length = 64;
    double dropout_rate = 0.0;
    /// Optional GloVe-format text file used to seed the token embedding.
    std::string embedding_file;

    /// Throws ConfigError when the configuration cannot build a model.
    void validate() const;

    /// 6 + 6 layers, 4 heads, width 300.
    static ModelConfig full_scale(std::size_t vocab_size);

    bool operator==(const ModelConfig&) const = default;
};

enum class LossReduction { Mean, Sum };

struct ForwardOptions {
    /// Dropout is applied only when this is set and the rate is positive.
    std::mt19937_64* dropout_rng = nullptr;
};

/// An encoder-decoder that scores target tokens given a source sequence.
class SequenceModel {
public:
    virtual ~SequenceModel() = default;

    [[nodiscard]] virtual const ModelConfig& config() const noexcept = 0;
    [[nodiscard]] virtual std::string architecture() const = 0;
    [[nodiscard]] virtual ad::ParameterSet init(std::uint64_t seed) const = 0;

    /// Next-token logits, shape [target_in.size(), vocab_size]. Row t may only
    /// depend on target_in[0..t].
    [[nodiscard]] virtual ad::Tensor logits(const ad::ParameterSet& params, std::span<const TokenId> source,
                                            std::span<const TokenId> target_in,
                                            const ForwardOptions& options = {}) const = 0;
};

/// Post-norm transformer encoder-decoder with sinusoidal positions, a shared
/// token embedding for both stacks and an untied output projection.
class TransformerModel final : public SequenceModel {
public:
    explicit TransformerModel(ModelConfig config);

    [[nodiscard]] const ModelConfig& config() const noexcept override { return config_; }
    [[nodiscard]] std::string architecture() const override { return "transformer"; }
    [[nodiscard]] ad::ParameterSet init(std::uint64_t seed) const override;
    [[nodiscard]] ad::Tensor logits(const ad::ParameterSet& params, std::span<const TokenId> source,
                                    std::span<const TokenId> target_in,
                                    const ForwardOptions& options = {}) const override;

    [[nodiscard]] ad::Tensor encode(const ad::ParameterSet& params, std::span<const TokenId> source,
                                    const ForwardOptions& options = {}) const;
    [[nodiscard]] ad::Tensor decode(const ad::ParameterSet& params, const ad::Tensor& memory,
                                    std::span<const TokenId> target_in, const ForwardOptions& options = {}) const;

private:
    ad::Tensor embed(const ad::ParameterSet& params, std::span<const TokenId> ids, const ForwardOptions& options) const;
    ad::Tensor attention(const ad::ParameterSet& params, const std::string& prefix, const ad::Tensor& query,
                         const ad::Tensor& memory, bool causal) const;
    ad::Tensor feed_forward(const ad::ParameterSet& params, const std::string& prefix, const ad::Tensor& x) const;
    ad::Tensor dropout(const ad::Tensor& x, const ForwardOptions& options) const;

    ModelConfig config_;
    ad::Tensor positions_;
};

/// Small surrogate: each position's logits come from the mean source
/// embedding plus the previous target token's embedding, passed through one
/// hidden relu layer. Used for gradient checks where parameter count must stay tiny.
class BagOfWordsModel final : public SequenceModel {
public:
    explicit BagOfWordsModel(ModelConfig config);

    [[nodiscard]] const ModelConfig& config() const noexcept override { return config_; }
    [[nodiscard]] std::string architecture() const override { return "bag_of_words"; }
    [[nodiscard]] ad::ParameterSet init(std::uint64_t seed) const override;
    [[nodiscard]] ad::Tensor logits(const ad::ParameterSet& params, std::span<const TokenId> source,
                                    std::span<const TokenId> target_in,
                                    const ForwardOptions& options = {}) const override;

private:
    ModelConfig config_;
};

[[nodiscard]] std::unique_ptr<SequenceModel> make_model(const std::string& architecture, const ModelConfig& config);

/// Deterministic initialization of a transformer for `config`.
[[nodiscard]] ad::ParameterSet build_model(const ModelConfig& config, std::uint64_t seed);

/// Closed-form count of transformer parameters.
[[nodiscard]] std::size_t transformer_parameter_count(const ModelConfig& config);

/// Replaces embedding rows with vectors from a whitespace-separated text file
/// ("word v1 v2 ... vD" per line, GloVe layout). Words absent from the file
/// keep their random initialization. Returns the number of rows replaced.
std::size_t load_pretrained_embeddings(ad::ParameterSet& params, const Vocabulary& vocab, const std::string& path);

struct LossOptions {
    LossReduction reduction = LossReduction::Mean;
    ForwardOptions forward;
};

/// Teacher-forced negative log-likelihood of `target` given `source`.
///
/// `target` is a token sequence optionally starting with BOS (added when
/// missing); trailing PAD is ignored. Every token after BOS is predicted.
/// The source is truncated from the left and the target from the right to
/// fit max_sequence_length.
[[nodiscard]] ad::Tensor sequence_loss(const SequenceModel& model, const ad::ParameterSet& params,
                                       const TokenSequence& source, const TokenSequence& target,
                                       const LossOptions& options = {});

/// Response generation loss: target is the persona owner's reply.
[[nodiscard]] ad::Tensor response_loss(const SequenceModel& model, const ad::ParameterSet& params,
                                       const TokenSequence& context, const TokenSequence& response,
                                       const LossOptions& options = {});

/// Persona reconstruction loss: target is the concatenated persona statements.
[[nodiscard]] ad::Tensor reconstruction_loss(const SequenceModel& model, const ad::ParameterSet& params,
                                             const TokenSequence& context, const TokenSequence& persona_target,
                                             const LossOptions& options = {});

struct TokenNll {
    double total = 0.0;
    std::size_t tokens = 0;
};

/// Summed NLL and scored-token count, evaluated without a tape.
[[nodiscard]] TokenNll sequence_nll(const SequenceModel& model, const ad::ParameterSet& params,
                                    const TokenSequence& source, const TokenSequence& target);

/// Greedy decoding from BOS until EOS or `max_len` tokens. The result holds
/// the generated tokens only (no BOS/EOS).
[[nodiscard]] TokenSequence generate(const SequenceModel& model, const ad::ParameterSet& params,
                                     const TokenSequence& context, std::size_t max_len);

/// Wraps `tokens` as BOS tokens EOS.
[[nodiscard]] TokenSequence wrap_target(const TokenSequence& tokens);

}  // namespace mtml
