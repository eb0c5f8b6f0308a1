// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>

#include <CLI11.hpp>

#include "experiment.hpp"
#include "mtml/checkpoint.hpp"
#include "mtml/error.hpp"
#include "mtml/eval.hpp"
#include "mtml/gradcheck.hpp"
#include "mtml/metalearn.hpp"

namespace mtml::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kConfigFile = "config.yaml";
constexpr const char* kCheckpointFile = "checkpoint.mtml";
constexpr const char* kLogFile = "log.jsonl";
constexpr const char* kReportFile = "report.json";
constexpr const char* kGenerationsFile = "generations.jsonl";

/// Options shared by commands that resolve an ExperimentConfig.
struct ConfigFlags {
    std::string config_file;
    std::vector<std::string> overrides;
    std::optional<std::string> corpus;
    std::optional<std::string> format;
    std::optional<std::string> output_root;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App& app) {
        app.add_option("--config", config_file, "YAML experiment configuration")->check(CLI::ExistingFile);
        app.add_option("--set", overrides, "Override a configuration value, e.g. meta.alpha=0.7 (repeatable)");
        app.add_option("--corpus", corpus, "Corpus path (omit for the synthetic corpus)");
        app.add_option("--format", format, "Corpus format: jsonl or personachat");
        app.add_option("--output-root", output_root, "Directory that receives run-* folders");
        app.add_option("--seed", seed, "Run seed");
    }

    [[nodiscard]] ExperimentConfig resolve(ExperimentConfig base) const {
        if (!config_file.empty()) base = load_config(config_file, base);
        for (const auto& o : overrides) base = apply_override(base, o);
        if (corpus) base.corpus_path = *corpus;
        if (format) base.corpus_format = parse_corpus_format(*format);
        if (output_root) base.output_root = *output_root;
        if (seed) base.seed = *seed;
        return base;
    }
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("failed writing " + path.string());
}

std::string fixed(double v, int digits = 4) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(digits) << v;
    return ss.str();
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

struct TrainFlags {
    ConfigFlags common;
    std::optional<std::string> mode;
    std::optional<double> alpha;
    std::optional<std::size_t> iterations;
    bool first_order = false;
};

int cmd_train(const TrainFlags& flags, std::ostream& out) {
    ExperimentConfig cfg = flags.common.resolve({});
    if (flags.mode) cfg.meta.mode = parse_train_mode(*flags.mode);
    if (flags.alpha) cfg.meta.alpha = *flags.alpha;
    if (flags.iterations) cfg.meta.max_iterations = *flags.iterations;
    if (flags.first_order) cfg.meta.first_order = true;
    cfg.validate();

    const CorpusSplits corpus = load_experiment_corpus(cfg);
    const Vocabulary vocab = Vocabulary::build(corpus_texts(corpus.train), cfg.vocab_max_size);
    if (cfg.model.vocab_size == 0) cfg.model.vocab_size = vocab.size();
    if (cfg.model.vocab_size != vocab.size()) {
        throw ConfigError("model.vocab_size is " + std::to_string(cfg.model.vocab_size) + " but the corpus yields " +
                          std::to_string(vocab.size()) + " words");
    }
    const auto model = make_model(cfg.architecture, cfg.model);
    ad::ParameterSet initial;
    if (!cfg.model.embedding_file.empty()) {
        initial = model->init(cfg.seed);
        load_pretrained_embeddings(initial, vocab, cfg.model.embedding_file);
    }

    const fs::path dir = create_run_directory(output_root(cfg), cfg.seed);
    write_text(dir / kConfigFile, to_yaml(cfg));
    std::ofstream log(dir / kLogFile, std::ios::binary);
    if (!log) throw Error("cannot write " + (dir / kLogFile).string());

    out << "run directory: " << dir.string() << "\n";
    out << "mode " << to_string(cfg.meta.mode) << ", " << corpus.train.size() << " train personas, vocabulary "
        << vocab.size() << ", " << model->init(cfg.seed).scalar_count() << " parameters\n";
    TrainHooks hooks;
    hooks.on_step = [&](const MetaStepReport& r) {
        log << to_json(r).dump() << "\n";
        if (r.valid_response_loss) {
            out << "iteration " << r.iteration << ": query loss " << fixed(r.query_loss) << ", valid response loss "
                << fixed(*r.valid_response_loss) << "\n";
        }
    };
    const TrainResult result = train(*model, corpus, vocab, cfg.meta, cfg.seed, initial, hooks);
    log.close();

    ExperimentConfig recorded = cfg;
    recorded.output_root.clear();
    Checkpoint ckpt;
    ckpt.architecture = cfg.architecture;
    ckpt.config = cfg.model;
    ckpt.vocabulary = vocab;
    ckpt.parameters = result.best_params;
    ckpt.optimizer_state = result.optimizer_state;
    ckpt.metadata = {{"experiment", to_yaml(recorded)},
                     {"mode", to_string(cfg.meta.mode)},
                     {"seed", cfg.seed},
                     {"best_iteration", result.best_iteration},
                     {"iterations_run", result.iterations_run},
                     {"early_stopped", result.early_stopped},
                     {"initial_valid_loss", optional_json(result.initial_valid_loss)},
                     {"best_valid_loss", optional_json(result.best_valid_loss)}};
    save_checkpoint(ckpt, dir / kCheckpointFile);

    out << "iterations run: " << result.iterations_run << (result.early_stopped ? " (early stop)" : "") << "\n";
    if (result.initial_valid_loss && result.best_valid_loss) {
        out << "valid response loss: " << fixed(*result.initial_valid_loss) << " -> " << fixed(*result.best_valid_loss)
            << " (best at iteration " << result.best_iteration << ")\n";
    }
    out << "checkpoint: " << (dir / kCheckpointFile).string() << "\n";
    return kExitOk;
}

ExperimentConfig checkpoint_config(const Checkpoint& ckpt) {
    ExperimentConfig cfg;
    if (ckpt.metadata.contains("experiment") && ckpt.metadata.at("experiment").is_string()) {
        cfg = config_from_yaml(ckpt.metadata.at("experiment").get<std::string>());
    }
    cfg.architecture = ckpt.architecture;
    cfg.model = ckpt.config;
    return cfg;
}

struct EvaluateFlags {
    ConfigFlags common;
    std::string checkpoint;
    std::optional<std::size_t> k;
    std::optional<std::size_t> finetune_steps;
};

int cmd_evaluate(const EvaluateFlags& flags, std::ostream& out, std::ostream& err) {
    const Checkpoint ckpt = load_checkpoint(flags.checkpoint);
    ExperimentConfig cfg = flags.common.resolve(checkpoint_config(ckpt));
    if (flags.k) cfg.protocol.k = *flags.k;
    if (flags.finetune_steps) cfg.protocol.finetune_steps = *flags.finetune_steps;
    cfg.architecture = ckpt.architecture;
    cfg.model = ckpt.config;
    cfg.validate();

    const CorpusSplits corpus = load_experiment_corpus(cfg);
    const auto model = make_model(ckpt.architecture, ckpt.config);
    const KShotResult result = kshot_evaluate(*model, ckpt.parameters, corpus.test, ckpt.vocabulary, cfg.protocol, cfg.seed);

    const fs::path dir = create_run_directory(output_root(cfg), cfg.seed);
    write_text(dir / kConfigFile, to_yaml(cfg));
    write_text(dir / kReportFile, to_json(result.report).dump(2) + "\n");
    std::string generations;
    for (const auto& g : result.generations) generations += to_json(g).dump() + "\n";
    write_text(dir / kGenerationsFile, generations);

    out << "run directory: " << dir.string() << "\n";
    for (const auto& s : result.report.skipped) err << "warning: skipped persona " << s.persona_id << ": " << s.reason << "\n";
    if (result.report.personas.empty()) {
        err << "error: every test persona was skipped at k=" << cfg.protocol.k << "\n";
        return kExitFailure;
    }
    out << cfg.protocol.k << "-shot over " << result.report.personas.size() << " personas: ppl "
        << fixed(result.report.ppl) << ", bleu " << fixed(result.report.bleu) << ", c_proxy "
        << fixed(result.report.c_proxy) << "\n";
    out << "report: " << (dir / kReportFile).string() << "\n";
    return kExitOk;
}

struct GenerateFlags {
    std::string checkpoint;
    std::vector<std::string> context;
    std::optional<std::size_t> max_len;
};

int cmd_generate(const GenerateFlags& flags, std::ostream& out, std::ostream& err) {
    const Checkpoint ckpt = load_checkpoint(flags.checkpoint);
    const ExperimentConfig cfg = checkpoint_config(ckpt);
    std::vector<TokenId> ids;
    for (const auto& turn : flags.context) {
        const TokenSequence t = ckpt.vocabulary.encode(turn);
        if (t.empty()) continue;
        if (!ids.empty()) ids.push_back(special::kSep);
        ids.insert(ids.end(), t.ids.begin(), t.ids.end());
    }
    if (ids.empty()) {
        err << "error: the context is empty\n";
        return kExitUsage;
    }
    const std::size_t keep = cfg.protocol.max_context_tokens;
    if (keep > 0 && ids.size() > keep) ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(keep));
    const auto model = make_model(ckpt.architecture, ckpt.config);
    const TokenSequence reply =
        generate(*model, ckpt.parameters, TokenSequence{ids}, flags.max_len.value_or(cfg.protocol.max_generate_len));
    out << ckpt.vocabulary.decode(reply) << "\n";
    return kExitOk;
}

int cmd_gradcheck(const GradcheckOptions& options, std::ostream& out, std::ostream& err) {
    const GradcheckReport report = run_gradcheck(options);
    for (const auto& c : report.checks) {
        const char* status = c.informational ? "INFO" : (c.passed ? "PASS" : "FAIL");
        out << std::left << std::setw(48) << c.name << " params " << std::setw(6) << c.parameters << " max error "
            << std::scientific << std::setprecision(3) << c.comparison.max_error << "  max relative "
            << c.comparison.max_relative_error << std::defaultfloat << "  " << status << "\n";
    }
    if (!report.passed()) {
        for (const auto& c : report.checks) {
            if (!c.informational && !c.passed) {
                err << "failed: " << c.name << " (worst at " << c.comparison.worst_parameter << "["
                    << c.comparison.worst_index << "])\n";
            }
        }
        return kExitFailure;
    }
    return kExitOk;
}

struct SyntheticFlags {
    std::string out;
    SyntheticCorpusConfig synthetic;
};

int cmd_make_synthetic(const SyntheticFlags& flags, std::ostream& out) {
    ExperimentConfig cfg;
    cfg.synthetic = flags.synthetic;
    cfg.validate();
    const CorpusSplits splits = load_experiment_corpus(cfg);
    write_corpus(splits, flags.out);
    out << "wrote " << splits.size() << " personas (" << splits.train.size() << " train, " << splits.valid.size()
        << " valid, " << splits.test.size() << " test) to " << flags.out << "\n";
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Persona dialogue meta-learning experiments"};
    app.name("mtml");
    app.require_subcommand(1);

    TrainFlags train_flags;
    CLI::App* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
    train_flags.common.attach(*train_cmd);
    train_cmd->add_option("--mode", train_flags.mode, "mtml, amtml, paml, std or std_p");
    train_cmd->add_option("--alpha", train_flags.alpha, "Response-loss weight");
    train_cmd->add_option("--iterations", train_flags.iterations, "Meta iterations");
    train_cmd->add_flag("--first-order", train_flags.first_order, "Drop second-order terms");

    EvaluateFlags eval_flags;
    CLI::App* eval_cmd = app.add_subcommand("evaluate", "Run the k-shot protocol on the test split");
    eval_flags.common.attach(*eval_cmd);
    eval_cmd->add_option("--checkpoint", eval_flags.checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--k", eval_flags.k, "Finetuning dialogues per persona");
    eval_cmd->add_option("--finetune-steps", eval_flags.finetune_steps, "Finetuning epochs");

    GenerateFlags gen_flags;
    CLI::App* gen_cmd = app.add_subcommand("generate", "Greedy-decode a response");
    gen_cmd->add_option("--checkpoint", gen_flags.checkpoint, "Checkpoint file")->required();
    gen_cmd->add_option("--context", gen_flags.context, "Context turn, oldest first (repeatable)")->required();
    gen_cmd->add_option("--max-len", gen_flags.max_len, "Maximum generated tokens");

    GradcheckOptions grad_opts;
    CLI::App* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    grad_cmd->add_option("--preset", grad_opts.preset, "tiny or small")->capture_default_str();
    grad_cmd->add_option("--tolerance", grad_opts.tolerance, "Error threshold")->capture_default_str();
    grad_cmd->add_option("--seed", grad_opts.seed, "Seed for random inputs")->capture_default_str();
    grad_cmd->add_flag("--first-order", grad_opts.first_order, "Compare the first-order meta-gradient");
    grad_cmd->add_flag("--inject-fault", grad_opts.inject_fault, "Corrupt analytic gradients (self-test)");

    SyntheticFlags syn_flags;
    CLI::App* syn_cmd = app.add_subcommand("make-synthetic", "Write the synthetic persona corpus");
    syn_cmd->add_option("--out", syn_flags.out, "Output JSONL path")->required();
    syn_cmd->add_option("--personas", syn_flags.synthetic.personas, "Number of personas")->capture_default_str();
    syn_cmd->add_option("--dialogues", syn_flags.synthetic.dialogues, "Dialogues per persona")->capture_default_str();
    syn_cmd->add_option("--seed", syn_flags.synthetic.seed, "Generator seed")->capture_default_str();
    syn_cmd->add_option("--valid-fraction", syn_flags.synthetic.options.valid_fraction, "Share of personas in the validation split")->capture_default_str();
    syn_cmd->add_option("--test-fraction", syn_flags.synthetic.options.test_fraction, "Share of personas in the test split")->capture_default_str();
    syn_cmd->add_option("--exchanges", syn_flags.synthetic.options.exchanges_per_dialogue, "Owner turns per dialogue")
        ->capture_default_str();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(train_flags, out);
        if (eval_cmd->parsed()) return cmd_evaluate(eval_flags, out, err);
        if (gen_cmd->parsed()) return cmd_generate(gen_flags, out, err);
        if (grad_cmd->parsed()) return cmd_gradcheck(grad_opts, out, err);
        if (syn_cmd->parsed()) return cmd_make_synthetic(syn_flags, out);
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace mtml::cli
