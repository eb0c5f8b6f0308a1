// SPDX-License-Identifier: Apache-2.0
#include "experiment.hpp"

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "mtml/error.hpp"

namespace mtml::cli {

namespace fs = std::filesystem;

namespace {

std::string shortest(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

class Reader {
public:
    Reader(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
        if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigError(where() + " must be a mapping");
    }

    ~Reader() = default;
    Reader(const Reader&) = delete;
    Reader& operator=(const Reader&) = delete;

    void size(const char* key, std::size_t& out) {
        std::int64_t v = 0;
        if (scalar(key, v)) {
            if (v < 0) throw ConfigError(where(key) + " must be non-negative");
            out = static_cast<std::size_t>(v);
        }
    }
    void u64(const char* key, std::uint64_t& out) { scalar(key, out); }
    void real(const char* key, double& out) { scalar(key, out); }
    void flag(const char* key, bool& out) { scalar(key, out); }
    void text(const char* key, std::string& out) { scalar(key, out); }

    template <typename Parse, typename T>
    void parsed(const char* key, T& out, Parse parse) {
        std::string s;
        if (scalar(key, s)) out = parse(s);
    }

    Reader child(const char* key) {
        seen_.insert(key);
        return Reader(lookup(key), where(key));
    }

    void finish() const {
        if (!node_ || !node_.IsMap()) return;
        for (const auto& kv : node_) {
            const auto key = kv.first.as<std::string>();
            if (!seen_.contains(key)) throw ConfigError("unknown configuration key '" + where(key.c_str()) + "'");
        }
    }

private:
    YAML::Node lookup(const char* key) const {
        if (!node_ || !node_.IsMap()) return YAML::Node();
        for (const auto& kv : node_) {
            if (kv.first.as<std::string>() == key) return kv.second;
        }
        return YAML::Node();
    }

    template <typename T>
    bool scalar(const char* key, T& out) {
        seen_.insert(key);
        const YAML::Node n = lookup(key);
        if (!n || n.IsNull()) return false;
        if (!n.IsScalar()) throw ConfigError(where(key) + " must be a scalar");
        try {
            out = n.as<T>();
        } catch (const YAML::Exception&) {
            throw ConfigError("invalid value '" + n.Scalar() + "' for " + where(key));
        }
        return true;
    }

    std::string where(const char* key = nullptr) const {
        if (key == nullptr) return path_.empty() ? "<root>" : path_;
        return path_.empty() ? std::string(key) : path_ + "." + key;
    }

    YAML::Node node_;
    std::string path_;
    std::set<std::string> seen_;
};

YAML::Node to_node(const ExperimentConfig& c) {
    YAML::Node root;
    root["seed"] = c.seed;
    root["output_root"] = c.output_root;

    YAML::Node corpus;
    corpus["path"] = c.corpus_path;
    corpus["format"] = to_string(c.corpus_format);
    corpus["vocab_max_size"] = c.vocab_max_size;
    YAML::Node syn;
    syn["personas"] = c.synthetic.personas;
    syn["dialogues"] = c.synthetic.dialogues;
    syn["seed"] = c.synthetic.seed;
    syn["valid_fraction"] = shortest(c.synthetic.options.valid_fraction);
    syn["test_fraction"] = shortest(c.synthetic.options.test_fraction);
    syn["exchanges_per_dialogue"] = c.synthetic.options.exchanges_per_dialogue;
    corpus["synthetic"] = syn;
    root["corpus"] = corpus;

    YAML::Node model;
    model["architecture"] = c.architecture;
    model["vocab_size"] = c.model.vocab_size;
    model["embed_dim"] = c.model.embed_dim;
    model["num_heads"] = c.model.num_heads;
    model["encoder_layers"] = c.model.encoder_layers;
    model["decoder_layers"] = c.model.decoder_layers;
    model["feedforward_dim"] = c.model.feedforward_dim;
    model["max_sequence_length"] = c.model.max_sequence_length;
    model["dropout_rate"] = shortest(c.model.dropout_rate);
    model["embedding_file"] = c.model.embedding_file;
    root["model"] = model;

    const MetaConfig& m = c.meta;
    YAML::Node meta;
    meta["mode"] = to_string(m.mode);
    meta["alpha"] = shortest(m.alpha);
    meta["eta_t"] = shortest(m.eta_t);
    meta["eta_o"] = shortest(m.eta_o);
    meta["tasks_per_batch"] = m.tasks_per_batch;
    meta["inner_steps"] = m.inner_steps;
    meta["first_order"] = m.first_order;
    meta["outer_optimizer"] = to_string(m.outer_optimizer);
    YAML::Node adam;
    adam["beta1"] = shortest(m.adam.beta1);
    adam["beta2"] = shortest(m.adam.beta2);
    adam["epsilon"] = shortest(m.adam.epsilon);
    meta["adam"] = adam;
    meta["clip_norm"] = shortest(m.clip_norm);
    meta["max_iterations"] = m.max_iterations;
    meta["early_stop_patience"] = m.early_stop_patience;
    meta["eval_every"] = m.eval_every;
    meta["support_dialogues"] = m.episode.support_dialogues;
    meta["query_dialogues"] = m.episode.query_dialogues;
    meta["max_context_tokens"] = m.max_context_tokens;
    root["meta"] = meta;

    const KShotProtocol& p = c.protocol;
    YAML::Node eval;
    eval["k"] = p.k;
    eval["finetune_steps"] = p.finetune_steps;
    eval["finetune_lr"] = shortest(p.finetune_lr);
    eval["reserve_shots"] = p.reserve_shots;
    eval["max_context_tokens"] = p.max_context_tokens;
    eval["max_generate_len"] = p.max_generate_len;
    eval["entail_threshold"] = p.consistency.entail_threshold;
    eval["negation_window"] = p.consistency.negation_window;
    root["eval"] = eval;
    return root;
}

ExperimentConfig from_node(const YAML::Node& node, ExperimentConfig c) {
    Reader root(node, "");
    root.u64("seed", c.seed);
    root.text("output_root", c.output_root);
    {
        Reader corpus = root.child("corpus");
        corpus.text("path", c.corpus_path);
        corpus.parsed("format", c.corpus_format, parse_corpus_format);
        corpus.size("vocab_max_size", c.vocab_max_size);
        Reader syn = corpus.child("synthetic");
        syn.size("personas", c.synthetic.personas);
        syn.size("dialogues", c.synthetic.dialogues);
        syn.u64("seed", c.synthetic.seed);
        syn.real("valid_fraction", c.synthetic.options.valid_fraction);
        syn.real("test_fraction", c.synthetic.options.test_fraction);
        syn.size("exchanges_per_dialogue", c.synthetic.options.exchanges_per_dialogue);
        syn.finish();
        corpus.finish();
    }
    {
        Reader model = root.child("model");
        model.text("architecture", c.architecture);
        model.size("vocab_size", c.model.vocab_size);
        model.size("embed_dim", c.model.embed_dim);
        model.size("num_heads", c.model.num_heads);
        model.size("encoder_layers", c.model.encoder_layers);
        model.size("decoder_layers", c.model.decoder_layers);
        model.size("feedforward_dim", c.model.feedforward_dim);
        model.size("max_sequence_length", c.model.max_sequence_length);
        model.real("dropout_rate", c.model.dropout_rate);
        model.text("embedding_file", c.model.embedding_file);
        model.finish();
    }
    {
        MetaConfig& m = c.meta;
        Reader meta = root.child("meta");
        meta.parsed("mode", m.mode, parse_train_mode);
        meta.real("alpha", m.alpha);
        meta.real("eta_t", m.eta_t);
        meta.real("eta_o", m.eta_o);
        meta.size("tasks_per_batch", m.tasks_per_batch);
        meta.size("inner_steps", m.inner_steps);
        meta.flag("first_order", m.first_order);
        meta.parsed("outer_optimizer", m.outer_optimizer, parse_optimizer_kind);
        Reader adam = meta.child("adam");
        adam.real("beta1", m.adam.beta1);
        adam.real("beta2", m.adam.beta2);
        adam.real("epsilon", m.adam.epsilon);
        adam.finish();
        meta.real("clip_norm", m.clip_norm);
        meta.size("max_iterations", m.max_iterations);
        meta.size("early_stop_patience", m.early_stop_patience);
        meta.size("eval_every", m.eval_every);
        meta.size("support_dialogues", m.episode.support_dialogues);
        meta.size("query_dialogues", m.episode.query_dialogues);
        meta.size("max_context_tokens", m.max_context_tokens);
        meta.finish();
    }
    {
        KShotProtocol& p = c.protocol;
        Reader eval = root.child("eval");
        eval.size("k", p.k);
        eval.size("finetune_steps", p.finetune_steps);
        eval.real("finetune_lr", p.finetune_lr);
        eval.size("reserve_shots", p.reserve_shots);
        eval.size("max_context_tokens", p.max_context_tokens);
        eval.size("max_generate_len", p.max_generate_len);
        eval.size("entail_threshold", p.consistency.entail_threshold);
        eval.size("negation_window", p.consistency.negation_window);
        eval.finish();
    }
    root.finish();
    return c;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (architecture != "transformer" && architecture != "bag_of_words") {
        throw ConfigError("model.architecture must be transformer or bag_of_words, got '" + architecture + "'");
    }
    meta.validate();
    if (protocol.k == 0) throw ConfigError("eval.k must be at least 1");
    if (!(protocol.finetune_lr >= 0.0)) throw ConfigError("eval.finetune_lr must be >= 0");
    if (corpus_path.empty()) {
        const double held = synthetic.options.valid_fraction + synthetic.options.test_fraction;
        if (synthetic.personas == 0 || synthetic.dialogues == 0) {
            throw ConfigError("corpus.synthetic needs at least one persona and one dialogue");
        }
        if (!(synthetic.options.valid_fraction >= 0.0 && synthetic.options.test_fraction >= 0.0 && held < 1.0)) {
            throw ConfigError("corpus.synthetic fractions must be non-negative and sum below 1");
        }
    }
    ModelConfig probe = model;
    if (probe.vocab_size == 0) probe.vocab_size = special::kCount + 1;
    probe.validate();
}

std::string to_yaml(const ExperimentConfig& config) {
    YAML::Emitter out;
    out << to_node(config);
    return std::string(out.c_str()) + "\n";
}

ExperimentConfig config_from_yaml(const std::string& text, const ExperimentConfig& base) {
    YAML::Node node;
    try {
        node = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("malformed configuration: ") + e.what());
    }
    return from_node(node, base);
}

ExperimentConfig load_config(const fs::path& path, const ExperimentConfig& base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read configuration file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return config_from_yaml(ss.str(), base);
}

ExperimentConfig apply_override(const ExperimentConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "' must look like section.key=value");
    }
    const std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    std::vector<std::string> keys;
    std::stringstream ss(path);
    for (std::string part; std::getline(ss, part, '.');) keys.push_back(part);
    YAML::Node leaf;
    try {
        leaf = YAML::Load(value);
    } catch (const YAML::Exception&) {
        leaf = YAML::Node(value);
    }
    if (!leaf.IsDefined() || leaf.IsNull()) leaf = YAML::Node(value);
    for (auto it = keys.rbegin(); it != keys.rend(); ++it) {
        YAML::Node wrap(YAML::NodeType::Map);
        wrap[*it] = leaf;
        leaf = wrap;
    }
    return from_node(leaf, config);
}

CorpusSplits load_experiment_corpus(const ExperimentConfig& config) {
    if (!config.corpus_path.empty()) return load_corpus(config.corpus_path, config.corpus_format);
    std::mt19937_64 rng(config.synthetic.seed);
    return generate_synthetic(config.synthetic.personas, config.synthetic.dialogues, rng, config.synthetic.options);
}

fs::path output_root(const ExperimentConfig& config) {
    if (!config.output_root.empty()) return config.output_root;
    if (const char* env = std::getenv("MTML_OUTPUT_ROOT"); env != nullptr && *env != '\0') return env;
    return "runs";
}

fs::path create_run_directory(const fs::path& root, std::uint64_t seed) {
    fs::create_directories(root);
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm utc{};
    gmtime_r(&now, &utc);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%dT%H%M%SZ", &utc);
    const std::string base = std::string("run-") + stamp + "-" + std::to_string(seed);
    for (std::size_t n = 0;; ++n) {
        const fs::path dir = root / (n == 0 ? base : base + "-" + std::to_string(n + 1));
        if (fs::create_directory(dir)) return dir;
    }
}

}  // namespace mtml::cli
