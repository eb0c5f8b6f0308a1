// SPDX-License-Identifier: Apache-2.0
#include "mtml/eval.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <unordered_set>

#include "mtml/error.hpp"
#include "mtml/ops.hpp"

namespace mtml {

using ad::ParameterSet;

double perplexity(const SequenceModel& model, const ParameterSet& params, const std::vector<TrainingExample>& examples) {
    if (examples.empty()) throw ContractError("perplexity: no examples");
    double total = 0.0;
    std::size_t tokens = 0;
    for (const auto& ex : examples) {
        const TokenNll nll = sequence_nll(model, params, ex.context, ex.response);
        total += nll.total;
        tokens += nll.tokens;
    }
    return std::exp(total / static_cast<double>(tokens));
}

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
    std::map<Ngram, std::size_t> out;
    if (tokens.size() < n) return out;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++out[Ngram(tokens.begin() + i, tokens.begin() + i + n)];
    return out;
}

}  // namespace

double bleu(const std::vector<std::vector<std::string>>& hypotheses,
            const std::vector<std::vector<std::string>>& references) {
    if (hypotheses.empty()) throw ContractError("bleu: empty hypothesis list");
    if (hypotheses.size() != references.size()) throw ContractError("bleu: hypothesis and reference counts differ");
    constexpr std::size_t kOrder = 4;
    std::array<std::size_t, kOrder> matches{};
    std::array<std::size_t, kOrder> totals{};
    std::size_t hyp_len = 0;
    std::size_t ref_len = 0;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        hyp_len += hypotheses[i].size();
        ref_len += references[i].size();
        for (std::size_t n = 1; n <= kOrder; ++n) {
            const auto hyp = ngram_counts(hypotheses[i], n);
            const auto ref = ngram_counts(references[i], n);
            for (const auto& [gram, count] : hyp) {
                totals[n - 1] += count;
                const auto it = ref.find(gram);
                if (it != ref.end()) matches[n - 1] += std::min(count, it->second);
            }
        }
    }
    if (hyp_len == 0 || matches[0] == 0) return 0.0;
    double log_precision = std::log(static_cast<double>(matches[0]) / static_cast<double>(totals[0]));
    for (std::size_t n = 1; n < kOrder; ++n) {
        log_precision += std::log((static_cast<double>(matches[n]) + 1.0) / (static_cast<double>(totals[n]) + 1.0));
    }
    const double brevity =
        hyp_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    return brevity * std::exp(log_precision / static_cast<double>(kOrder));
}

double bleu(const std::vector<TokenSequence>& hypotheses, const std::vector<TokenSequence>& references) {
    const auto words = [](const std::vector<TokenSequence>& seqs) {
        std::vector<std::vector<std::string>> out;
        out.reserve(seqs.size());
        for (const auto& s : seqs) {
            std::vector<std::string> w;
            for (TokenId id : s.ids) {
                if (!is_special(id)) w.push_back(std::to_string(id));
            }
            out.push_back(std::move(w));
        }
        return out;
    };
    return bleu(words(hypotheses), words(references));
}

bool is_negation(const std::string& token) {
    static const std::unordered_set<std::string> words = {"not", "no", "never", "n't", "dont", "don't", "cannot",
                                                          "can't", "won't", "isn't", "aren't", "doesn't", "didn't",
                                                          "nor", "neither", "nothing", "without"};
    return words.contains(token);
}

bool is_stopword(const std::string& token) {
    static const std::unordered_set<std::string> words = {
        "a",     "an",    "the",   "i",     "me",    "my",     "mine",  "we",    "us",    "our",   "you",
        "your",  "he",    "him",   "his",   "she",   "her",    "it",    "its",   "they",  "them",  "their",
        "am",    "is",    "are",   "was",   "were",  "be",     "been",  "being", "do",    "does",  "did",
        "have",  "has",   "had",   "having", "and",  "or",     "but",   "if",    "so",    "than",  "then",
        "of",    "in",    "on",    "at",    "to",    "for",    "from",  "by",    "with",  "about", "as",
        "into",  "up",    "down",  "out",   "over",  "this",   "that",  "these", "those", "there", "here",
        "what",  "which", "who",   "whom",  "where", "when",   "why",   "how",   "all",   "any",   "some",
        "just",  "very",  "too",   "also",  "can",   "will",   "would", "could", "should", "yes",  "oh",
        "really", "mostly", "especially", "still", "right", "now", "lot", "much", "more", "most", "i'm",
        "it's",  "that's", "im"};
    if (words.contains(token)) return true;
    return std::none_of(token.begin(), token.end(), [](unsigned char c) { return std::isalnum(c) != 0; });
}

int consistency_proxy(const std::vector<std::string>& response, const std::vector<std::string>& statements,
                      const ConsistencyOptions& options) {
    if (statements.empty()) throw ContractError("consistency_proxy: no statements");
    bool entailed = false;
    for (const auto& statement : statements) {
        std::set<std::string> content;
        for (const auto& w : tokenize(statement)) {
            if (!is_stopword(w) && !is_negation(w)) content.insert(w);
        }
        std::set<std::string> shared;
        for (const auto& w : response) {
            if (content.contains(w)) shared.insert(w);
        }
        if (shared.size() < options.entail_threshold) continue;
        for (std::size_t i = 0; i < response.size(); ++i) {
            if (!shared.contains(response[i])) continue;
            const std::size_t from = i > options.negation_window ? i - options.negation_window : 0;
            for (std::size_t j = from; j < i; ++j) {
                if (is_negation(response[j])) return -1;
            }
        }
        entailed = true;
    }
    return entailed ? 1 : 0;
}

int consistency_proxy(const TokenSequence& response, const Vocabulary& vocab,
                      const std::vector<std::string>& statements, const ConsistencyOptions& options) {
    return consistency_proxy(vocab.decode_words(response), statements, options);
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json personas = nlohmann::json::array();
    for (const auto& p : r.personas) {
        personas.push_back({{"persona_id", p.persona_id},
                            {"ppl", p.ppl},
                            {"bleu", p.bleu},
                            {"c_proxy", p.c_proxy},
                            {"examples", p.examples},
                            {"tokens", p.tokens},
                            {"nll", p.nll}});
    }
    nlohmann::json skipped = nlohmann::json::array();
    for (const auto& s : r.skipped) skipped.push_back({{"persona_id", s.persona_id}, {"reason", s.reason}});
    return {{"k", r.k},
            {"seed", r.seed},
            {"finetune_steps", r.finetune_steps},
            {"finetune_lr", r.finetune_lr},
            {"ppl", r.ppl},
            {"bleu", r.bleu},
            {"c_proxy", r.c_proxy},
            {"personas", std::move(personas)},
            {"skipped", std::move(skipped)}};
}

nlohmann::json to_json(const GenerationRecord& g) {
    return {{"persona_id", g.persona_id}, {"context", g.context}, {"reference", g.reference}, {"hypothesis", g.hypothesis}};
}

PersonaMetrics evaluate_examples(const SequenceModel& model, const ParameterSet& params,
                                 const std::vector<TrainingExample>& examples,
                                 const std::vector<std::string>& statements, const Vocabulary& vocab,
                                 const KShotProtocol& protocol, std::vector<GenerationRecord>* generations) {
    if (examples.empty()) throw ContractError("evaluate_examples: no examples");
    const ParameterSet frozen = params.detached();
    PersonaMetrics m;
    std::vector<std::vector<std::string>> hyps;
    std::vector<std::vector<std::string>> refs;
    double consistency = 0.0;
    for (const auto& ex : examples) {
        const TokenNll nll = sequence_nll(model, frozen, ex.context, ex.response);
        m.nll += nll.total;
        m.tokens += nll.tokens;
        const TokenSequence hyp = generate(model, frozen, ex.context, protocol.max_generate_len);
        hyps.push_back(vocab.decode_words(hyp));
        refs.push_back(vocab.decode_words(ex.response));
        if (!statements.empty()) consistency += consistency_proxy(hyps.back(), statements, protocol.consistency);
        if (generations != nullptr) {
            generations->push_back(GenerationRecord{{}, vocab.decode(ex.context), vocab.decode(ex.response),
                                                    vocab.decode(hyp)});
        }
    }
    m.examples = examples.size();
    m.ppl = std::exp(m.nll / static_cast<double>(m.tokens));
    m.bleu = bleu(hyps, refs);
    m.c_proxy = consistency / static_cast<double>(examples.size());
    return m;
}

namespace {

std::uint64_t id_hash(const std::string& id) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : id) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

ParameterSet finetune(const SequenceModel& model, const ParameterSet& pretrained, const PersonaTask& task,
                      const std::vector<std::size_t>& dialogues, const Vocabulary& vocab,
                      const KShotProtocol& protocol) {
    ExampleOptions options;
    options.max_context_tokens = protocol.max_context_tokens;
    ParameterSet params = pretrained.detached();
    for (std::size_t epoch = 0; epoch < protocol.finetune_steps; ++epoch) {
        for (std::size_t d : dialogues) {
            const auto examples = make_examples(task, {d}, vocab, options);
            if (examples.empty()) continue;
            ad::Tape tape;
            const ParameterSet w = ad::watch(tape, params);
            ad::Tensor total;
            for (const auto& ex : examples) {
                const ad::Tensor l = response_loss(model, w, ex.context, ex.response);
                total = total.defined() ? ad::add(total, l) : l;
            }
            const ad::Tensor loss = ad::scale(total, 1.0 / static_cast<double>(examples.size()));
            if (!std::isfinite(loss.item())) {
                throw DivergenceError("finetuning loss became non-finite for '" + task.persona_id + "'", epoch,
                                      task.persona_id);
            }
            params = ad::functional_update(params, ad::backward(loss, w), protocol.finetune_lr).detached();
        }
    }
    return params;
}

}  // namespace

KShotSplit kshot_split(const PersonaTask& task, const KShotProtocol& protocol, std::uint64_t seed) {
    std::seed_seq seq{seed, id_hash(task.persona_id)};
    std::mt19937_64 rng(seq);
    std::vector<std::size_t> order(task.dialogues.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(rng)]);
    }
    KShotSplit split;
    const std::size_t k = std::min(protocol.k, order.size());
    split.shots.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    const std::size_t start = std::max(protocol.k, protocol.reserve_shots);
    if (start < order.size()) split.held_out.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.end());
    return split;
}

KShotResult kshot_evaluate(const SequenceModel& model, const ParameterSet& pretrained,
                           const std::vector<PersonaTask>& test_split, const Vocabulary& vocab,
                           const KShotProtocol& protocol, std::uint64_t seed) {
    if (protocol.k == 0) throw ConfigError("k-shot protocol: k must be at least 1");
    if (!(protocol.finetune_lr >= 0.0)) throw ConfigError("k-shot protocol: finetune_lr must be >= 0");
    KShotResult result;
    EvalReport& report = result.report;
    report.k = protocol.k;
    report.seed = seed;
    report.finetune_steps = protocol.finetune_steps;
    report.finetune_lr = protocol.finetune_lr;
    const std::size_t held_out_start = std::max(protocol.k, protocol.reserve_shots);
    ExampleOptions options;
    options.max_context_tokens = protocol.max_context_tokens;

    for (const auto& task : test_split) {
        if (task.dialogues.size() <= held_out_start) {
            report.skipped.push_back(SkippedPersona{
                task.persona_id, "has " + std::to_string(task.dialogues.size()) + " dialogues, needs more than " +
                                     std::to_string(held_out_start)});
            continue;
        }
        const KShotSplit split = kshot_split(task, protocol, seed);
        const auto examples = make_examples(task, split.held_out, vocab, options);
        if (examples.empty()) {
            report.skipped.push_back(SkippedPersona{task.persona_id, "held-out dialogues yield no examples"});
            continue;
        }
        const ParameterSet adapted = finetune(model, pretrained, task, split.shots, vocab, protocol);
        const std::size_t first_generation = result.generations.size();
        PersonaMetrics m =
            evaluate_examples(model, adapted, examples, task.statements, vocab, protocol, &result.generations);
        m.persona_id = task.persona_id;
        for (std::size_t i = first_generation; i < result.generations.size(); ++i) {
            result.generations[i].persona_id = task.persona_id;
        }
        report.personas.push_back(std::move(m));
    }
    if (!report.personas.empty()) {
        const auto n = static_cast<double>(report.personas.size());
        for (const auto& p : report.personas) {
            report.ppl += p.ppl;
            report.bleu += p.bleu;
            report.c_proxy += p.c_proxy;
        }
        report.ppl /= n;
        report.bleu /= n;
        report.c_proxy /= n;
    }
    return result;
}

}  // namespace mtml
