// SPDX-License-Identifier: Apache-2.0
#include "mtml/seqmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mtml/error.hpp"
#include "mtml/ops.hpp"

namespace mtml {

using ad::IndexList;
using ad::ParameterSet;
using ad::Shape;
using ad::Tensor;

void ModelConfig::validate() const {
    if (vocab_size <= special::kCount) throw ConfigError("model: vocab_size must exceed the special token count");
    if (embed_dim == 0) throw ConfigError("model: embed_dim must be positive");
    if (num_heads == 0 || embed_dim % num_heads != 0) {
        throw ConfigError("model: embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " +
                          std::to_string(num_heads));
    }
    if (feedforward_dim == 0) throw ConfigError("model: feedforward_dim must be positive");
    if (max_sequence_length == 0) throw ConfigError("model: max_sequence_length must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("model: dropout_rate must be in [0, 1)");
}

ModelConfig ModelConfig::full_scale(std::size_t vocab_size) {
    ModelConfig c;
    c.vocab_size = vocab_size;
    c.embed_dim = 300;
    c.num_heads = 4;
    c.encoder_layers = 6;
    c.decoder_layers = 6;
    c.feedforward_dim = 1200;
    c.max_sequence_length = 256;
    c.dropout_rate = 0.1;
    return c;
}

namespace {

IndexList to_indices(std::span<const TokenId> ids, std::size_t vocab_size) {
    std::vector<std::size_t> out;
    out.reserve(ids.size());
    for (TokenId id : ids) {
        if (id >= vocab_size) {
            throw ContractError("token id " + std::to_string(id) + " >= vocab_size " + std::to_string(vocab_size));
        }
        out.push_back(id);
    }
    return ad::make_indices(std::move(out));
}

class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    Tensor normal(Shape shape, double stddev) {
        std::normal_distribution<double> dist(0.0, stddev);
        std::vector<double> v(ad::numel(shape));
        for (auto& x : v) x = dist(rng_);
        return Tensor(std::move(shape), std::move(v));
    }

    Tensor xavier(std::size_t fan_in, std::size_t fan_out) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        std::vector<double> v(fan_in * fan_out);
        for (auto& x : v) x = dist(rng_);
        return Tensor({fan_in, fan_out}, std::move(v));
    }

private:
    std::mt19937_64 rng_;
};

void add_linear(ParameterSet& p, Initializer& init, const std::string& name, std::size_t in, std::size_t out) {
    p.add(name + ".weight", init.xavier(in, out));
    p.add(name + ".bias", Tensor::zeros({out}));
}

void add_norm(ParameterSet& p, const std::string& name, std::size_t dim) {
    p.add(name + ".gain", Tensor::ones({dim}));
    p.add(name + ".bias", Tensor::zeros({dim}));
}

void add_attention(ParameterSet& p, Initializer& init, const std::string& name, std::size_t dim) {
    for (const char* proj : {"q", "k", "v", "o"}) add_linear(p, init, name + "." + proj, dim, dim);
}

Tensor linear(const ParameterSet& p, const std::string& name, const Tensor& x) {
    return ad::add(ad::matmul(x, p.at(name + ".weight")), p.at(name + ".bias"));
}

Tensor norm(const ParameterSet& p, const std::string& name, const Tensor& x) {
    return ad::layer_norm(x, p.at(name + ".gain"), p.at(name + ".bias"));
}

Tensor sinusoid_table(std::size_t length, std::size_t dim) {
    std::vector<double> v(length * dim);
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
            const double angle = static_cast<double>(pos) * rate;
            v[pos * dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return Tensor({length, dim}, std::move(v));
}

ad::Mask causal_mask(std::size_t n) {
    std::vector<std::uint8_t> m(n * n, 0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = r + 1; c < n; ++c) m[r * n + c] = 1;
    }
    return ad::make_mask(std::move(m));
}

std::string layer_name(const char* stack, std::size_t layer) { return std::string(stack) + "." + std::to_string(layer); }

}  // namespace

TransformerModel::TransformerModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    positions_ = sinusoid_table(config_.max_sequence_length, config_.embed_dim);
}

ParameterSet TransformerModel::init(std::uint64_t seed) const {
    const std::size_t d = config_.embed_dim;
    const std::size_t f = config_.feedforward_dim;
    const std::size_t v = config_.vocab_size;
    Initializer init(seed);
    ParameterSet p;
    p.add("embed.tokens", init.normal({v, d}, 1.0 / std::sqrt(static_cast<double>(d))));
    for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
        const std::string n = layer_name("encoder", l);
        add_attention(p, init, n + ".self_attn", d);
        add_norm(p, n + ".norm1", d);
        add_linear(p, init, n + ".ffn.fc1", d, f);
        add_linear(p, init, n + ".ffn.fc2", f, d);
        add_norm(p, n + ".norm2", d);
    }
    for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
        const std::string n = layer_name("decoder", l);
        add_attention(p, init, n + ".self_attn", d);
        add_norm(p, n + ".norm1", d);
        add_attention(p, init, n + ".cross_attn", d);
        add_norm(p, n + ".norm2", d);
        add_linear(p, init, n + ".ffn.fc1", d, f);
        add_linear(p, init, n + ".ffn.fc2", f, d);
        add_norm(p, n + ".norm3", d);
    }
    p.add("output.weight", init.normal({d, v}, 0.02));
    p.add("output.bias", Tensor::zeros({v}));
    return p;
}

Tensor TransformerModel::dropout(const Tensor& x, const ForwardOptions& options) const {
    if (options.dropout_rng == nullptr || config_.dropout_rate <= 0.0) return x;
    const double keep = 1.0 - config_.dropout_rate;
    std::bernoulli_distribution coin(keep);
    std::vector<double> mask(x.numel());
    for (auto& m : mask) m = coin(*options.dropout_rng) ? 1.0 / keep : 0.0;
    return ad::mul(x, Tensor(x.shape(), std::move(mask)));
}

Tensor TransformerModel::embed(const ParameterSet& params, std::span<const TokenId> ids,
                               const ForwardOptions& options) const {
    if (ids.size() > config_.max_sequence_length) {
        throw ContractError("sequence of length " + std::to_string(ids.size()) + " exceeds max_sequence_length " +
                            std::to_string(config_.max_sequence_length));
    }
    const Tensor rows = ad::gather_rows(params.at("embed.tokens"), to_indices(ids, config_.vocab_size));
    const Tensor scaled = ad::scale(rows, std::sqrt(static_cast<double>(config_.embed_dim)));
    return dropout(ad::add(scaled, ad::slice(positions_, 0, 0, ids.size())), options);
}

Tensor TransformerModel::attention(const ParameterSet& params, const std::string& prefix, const Tensor& query,
                                   const Tensor& memory, bool causal) const {
    const std::size_t heads = config_.num_heads;
    const std::size_t dh = config_.embed_dim / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const Tensor q = linear(params, prefix + ".q", query);
    const Tensor k = linear(params, prefix + ".k", memory);
    const Tensor v = linear(params, prefix + ".v", memory);
    const ad::Mask mask = causal ? causal_mask(query.dim(0)) : nullptr;

    std::vector<Tensor> outputs;
    outputs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const Tensor qh = heads == 1 ? q : ad::slice(q, 1, h * dh, dh);
        const Tensor kh = heads == 1 ? k : ad::slice(k, 1, h * dh, dh);
        const Tensor vh = heads == 1 ? v : ad::slice(v, 1, h * dh, dh);
        Tensor scores = ad::scale(ad::matmul(qh, kh, false, true), inv_sqrt);
        if (mask) scores = ad::masked_fill(scores, mask, -1e9);
        outputs.push_back(ad::matmul(ad::softmax(scores), vh));
    }
    const Tensor merged = heads == 1 ? outputs.front() : ad::concat(outputs, 1);
    return linear(params, prefix + ".o", merged);
}

Tensor TransformerModel::feed_forward(const ParameterSet& params, const std::string& prefix, const Tensor& x) const {
    return linear(params, prefix + ".fc2", ad::relu(linear(params, prefix + ".fc1", x)));
}

Tensor TransformerModel::encode(const ParameterSet& params, std::span<const TokenId> source,
                                const ForwardOptions& options) const {
    if (source.empty()) throw ContractError("encoder input is empty");
    Tensor x = embed(params, source, options);
    for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
        const std::string n = layer_name("encoder", l);
        x = norm(params, n + ".norm1", ad::add(x, dropout(attention(params, n + ".self_attn", x, x, false), options)));
        x = norm(params, n + ".norm2", ad::add(x, dropout(feed_forward(params, n + ".ffn", x), options)));
    }
    return x;
}

Tensor TransformerModel::decode(const ParameterSet& params, const Tensor& memory, std::span<const TokenId> target_in,
                                const ForwardOptions& options) const {
    if (target_in.empty()) throw ContractError("decoder input is empty");
    Tensor y = embed(params, target_in, options);
    for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
        const std::string n = layer_name("decoder", l);
        y = norm(params, n + ".norm1", ad::add(y, dropout(attention(params, n + ".self_attn", y, y, true), options)));
        y = norm(params, n + ".norm2",
                 ad::add(y, dropout(attention(params, n + ".cross_attn", y, memory, false), options)));
        y = norm(params, n + ".norm3", ad::add(y, dropout(feed_forward(params, n + ".ffn", y), options)));
    }
    return linear(params, "output", y);
}

Tensor TransformerModel::logits(const ParameterSet& params, std::span<const TokenId> source,
                                std::span<const TokenId> target_in, const ForwardOptions& options) const {
    return decode(params, encode(params, source, options), target_in, options);
}

BagOfWordsModel::BagOfWordsModel(ModelConfig config) : config_(std::move(config)) {
    if (config_.vocab_size <= special::kCount) throw ConfigError("model: vocab_size must exceed the special token count");
    if (config_.embed_dim == 0) throw ConfigError("model: embed_dim must be positive");
    if (config_.max_sequence_length == 0) throw ConfigError("model: max_sequence_length must be positive");
}

ParameterSet BagOfWordsModel::init(std::uint64_t seed) const {
    const std::size_t d = config_.embed_dim;
    const std::size_t v = config_.vocab_size;
    Initializer init(seed);
    ParameterSet p;
    p.add("embed.tokens", init.normal({v, d}, 0.5));
    p.add("hidden.weight", init.xavier(d, d));
    p.add("hidden.bias", init.normal({d}, 0.1));
    p.add("output.weight", init.xavier(d, v));
    p.add("output.bias", Tensor::zeros({v}));
    return p;
}

Tensor BagOfWordsModel::logits(const ParameterSet& params, std::span<const TokenId> source,
                               std::span<const TokenId> target_in, const ForwardOptions&) const {
    if (source.empty()) throw ContractError("encoder input is empty");
    if (target_in.empty()) throw ContractError("decoder input is empty");
    const Tensor& table = params.at("embed.tokens");
    const Tensor context = ad::scale(ad::sum_leading(ad::gather_rows(table, to_indices(source, config_.vocab_size)),
                                                     {config_.embed_dim}),
                                     1.0 / static_cast<double>(source.size()));
    const Tensor prev = ad::gather_rows(table, to_indices(target_in, config_.vocab_size));
    const Tensor pre = linear(params, "hidden", ad::add(prev, context));
    const Tensor softplus = ad::log(ad::add_scalar(ad::exp(pre), 1.0));
    return linear(params, "output", softplus);
}

std::unique_ptr<SequenceModel> make_model(const std::string& architecture, const ModelConfig& config) {
    if (architecture == "transformer") return std::make_unique<TransformerModel>(config);
    if (architecture == "bag_of_words") return std::make_unique<BagOfWordsModel>(config);
    throw ConfigError("unknown model architecture '" + architecture + "'");
}

ParameterSet build_model(const ModelConfig& config, std::uint64_t seed) { return TransformerModel(config).init(seed); }

std::size_t transformer_parameter_count(const ModelConfig& c) {
    const std::size_t d = c.embed_dim;
    const std::size_t f = c.feedforward_dim;
    const std::size_t v = c.vocab_size;
    const std::size_t attention = 4 * (d * d + d);
    const std::size_t ffn = d * f + f + f * d + d;
    const std::size_t norm = 2 * d;
    return v * d + c.encoder_layers * (attention + ffn + 2 * norm) +
           c.decoder_layers * (2 * attention + ffn + 3 * norm) + d * v + v;
}

std::size_t load_pretrained_embeddings(ParameterSet& params, const Vocabulary& vocab, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open embedding file '" + path + "'");
    const Tensor& table = params.at("embed.tokens");
    const std::size_t dim = table.dim(1);
    if (table.dim(0) != vocab.size()) throw DimensionError("embedding table rows do not match vocabulary size");
    std::vector<double> values(table.data().begin(), table.data().end());
    std::vector<std::uint8_t> seen(vocab.size(), 0);
    std::size_t replaced = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream fields(line);
        std::string word;
        if (!(fields >> word)) continue;
        std::vector<double> vec;
        double x = 0.0;
        while (fields >> x) vec.push_back(x);
        if (vec.size() != dim) {
            throw ParseError("embedding file '" + path + "': expected " + std::to_string(dim) + " values", line_no);
        }
        if (!vocab.contains(word)) continue;
        const TokenId id = vocab.id(word);
        if (seen[id]) continue;
        seen[id] = 1;
        std::copy(vec.begin(), vec.end(), values.begin() + static_cast<std::ptrdiff_t>(id * dim));
        ++replaced;
    }
    ParameterSet out;
    for (const auto& e : params) {
        out.add(e.name, e.name == "embed.tokens" ? Tensor(table.shape(), values) : e.value, e.trainable);
    }
    params = std::move(out);
    return replaced;
}

namespace {

struct PreparedTarget {
    std::vector<TokenId> input;
    std::vector<std::size_t> labels;
};

std::span<const TokenId> truncate_source(const TokenSequence& source, std::size_t max_len) {
    std::span<const TokenId> ids(source.ids);
    std::size_t end = ids.size();
    while (end > 0 && ids[end - 1] == special::kPad) --end;
    ids = ids.first(end);
    if (ids.empty()) throw ContractError("context is empty");
    if (ids.size() > max_len) ids = ids.last(max_len);
    return ids;
}

PreparedTarget prepare_target(const TokenSequence& target, std::size_t max_len) {
    std::vector<TokenId> seq;
    seq.reserve(target.size() + 1);
    if (target.empty() || target.ids.front() != special::kBos) seq.push_back(special::kBos);
    seq.insert(seq.end(), target.ids.begin(), target.ids.end());
    while (!seq.empty() && seq.back() == special::kPad) seq.pop_back();
    const bool has_content = std::any_of(seq.begin(), seq.end(), [](TokenId t) {
        return t != special::kBos && t != special::kEos && t != special::kPad;
    });
    if (!has_content) throw ContractError("target sequence is empty");
    if (seq.size() > max_len + 1) seq.resize(max_len + 1);
    PreparedTarget out;
    out.input.assign(seq.begin(), seq.end() - 1);
    out.labels.assign(seq.begin() + 1, seq.end());
    return out;
}

}  // namespace

Tensor sequence_loss(const SequenceModel& model, const ParameterSet& params, const TokenSequence& source,
                     const TokenSequence& target, const LossOptions& options) {
    const std::size_t max_len = model.config().max_sequence_length;
    const auto src = truncate_source(source, max_len);
    const PreparedTarget tgt = prepare_target(target, max_len);
    const Tensor log_probs = ad::log_softmax(model.logits(params, src, tgt.input, options.forward));
    const Tensor nll = ad::neg(ad::sum(ad::pick(log_probs, ad::make_indices(tgt.labels))));
    if (options.reduction == LossReduction::Sum) return nll;
    return ad::scale(nll, 1.0 / static_cast<double>(tgt.labels.size()));
}

Tensor response_loss(const SequenceModel& model, const ParameterSet& params, const TokenSequence& context,
                     const TokenSequence& response, const LossOptions& options) {
    return sequence_loss(model, params, context, response, options);
}

Tensor reconstruction_loss(const SequenceModel& model, const ParameterSet& params, const TokenSequence& context,
                           const TokenSequence& persona_target, const LossOptions& options) {
    return sequence_loss(model, params, context, persona_target, options);
}

TokenNll sequence_nll(const SequenceModel& model, const ParameterSet& params, const TokenSequence& source,
                      const TokenSequence& target) {
    const std::size_t max_len = model.config().max_sequence_length;
    const PreparedTarget tgt = prepare_target(target, max_len);
    LossOptions options;
    options.reduction = LossReduction::Sum;
    const Tensor total = sequence_loss(model, params.detached(), source, target, options);
    return TokenNll{total.item(), tgt.labels.size()};
}

TokenSequence generate(const SequenceModel& model, const ParameterSet& params, const TokenSequence& context,
                       std::size_t max_len) {
    TokenSequence out;
    if (max_len == 0) return out;
    const ParameterSet frozen = params.detached();
    const std::size_t limit = model.config().max_sequence_length;
    const auto src = truncate_source(context, limit);
    const auto* transformer = dynamic_cast<const TransformerModel*>(&model);
    const Tensor memory = transformer != nullptr ? transformer->encode(frozen, src) : Tensor();

    std::vector<TokenId> prefix{special::kBos};
    while (out.size() < max_len && prefix.size() <= limit) {
        const Tensor logits = transformer != nullptr ? transformer->decode(frozen, memory, prefix)
                                                     : model.logits(frozen, src, prefix);
        const std::size_t vocab = logits.dim(1);
        const auto row = logits.data().subspan((prefix.size() - 1) * vocab, vocab);
        TokenId best = special::kEos;
        for (TokenId t = 0; t < vocab; ++t) {
            if (t == special::kPad || t == special::kBos) continue;
            if (row[t] > row[best]) best = t;
        }
        if (best == special::kEos) break;
        out.ids.push_back(best);
        prefix.push_back(best);
    }
    return out;
}

TokenSequence wrap_target(const TokenSequence& tokens) {
    TokenSequence out;
    out.ids.reserve(tokens.size() + 2);
    out.ids.push_back(special::kBos);
    out.ids.insert(out.ids.end(), tokens.ids.begin(), tokens.ids.end());
    out.ids.push_back(special::kEos);
    return out;
}

}  // namespace mtml
