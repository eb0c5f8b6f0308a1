// SPDX-License-Identifier: Apache-2.0
#include <memory>
#include <random>

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mtml/checkpoint.hpp"
#include "mtml/error.hpp"
#include "mtml/eval.hpp"
#include "mtml/gradcheck.hpp"
#include "mtml/metalearn.hpp"

namespace py = pybind11;
using namespace mtml;

namespace {

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

TokenSequence ids(const std::vector<TokenId>& v) { return TokenSequence{v}; }

/// A model together with its current parameters.
class Model {
public:
    Model(const std::string& architecture, const ModelConfig& config, std::uint64_t seed)
        : architecture_(architecture), model_(make_model(architecture, config)), params_(model_->init(seed)) {}

    Model(const std::string& architecture, const ModelConfig& config, ad::ParameterSet params)
        : architecture_(architecture), model_(make_model(architecture, config)), params_(std::move(params)) {}

    [[nodiscard]] const SequenceModel& model() const { return *model_; }
    [[nodiscard]] const ad::ParameterSet& params() const { return params_; }
    void set_params(ad::ParameterSet p) { params_ = std::move(p); }
    [[nodiscard]] const std::string& architecture() const { return architecture_; }

private:
    std::string architecture_;
    std::unique_ptr<SequenceModel> model_;
    ad::ParameterSet params_;
};

std::vector<TrainingExample> examples_from(const std::vector<std::pair<std::vector<TokenId>, std::vector<TokenId>>>& pairs) {
    std::vector<TrainingExample> out;
    out.reserve(pairs.size());
    for (const auto& [ctx, resp] : pairs) out.push_back(TrainingExample{ids(ctx), wrap_target(ids(resp)), {}});
    return out;
}

const std::vector<PersonaTask>& split_of(const CorpusSplits& c, const std::string& name) {
    if (name == "train") return c.train;
    if (name == "valid") return c.valid;
    if (name == "test") return c.test;
    throw ConfigError("unknown split '" + name + "' (expected train, valid or test)");
}

}  // namespace

PYBIND11_MODULE(_mtml, m) {
    m.doc() = "Multi-task meta-learning for persona dialogue models";

    static py::exception<Error> base(m, "MtmlError", PyExc_RuntimeError);
    static py::exception<ConfigError> config_error(m, "ConfigError", base.ptr());
    static py::exception<ContractError> contract_error(m, "ContractError", base.ptr());
    static py::exception<ParseError> parse_error(m, "ParseError", base.ptr());
    static py::exception<IntegrityError> integrity_error(m, "IntegrityError", base.ptr());
    static py::exception<SamplingError> sampling_error(m, "SamplingError", base.ptr());
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ConfigError& e) {
            py::set_error(config_error, e.what());
        } catch (const ContractError& e) {
            py::set_error(contract_error, e.what());
        } catch (const ParseError& e) {
            py::set_error(parse_error, e.what());
        } catch (const IntegrityError& e) {
            py::set_error(integrity_error, e.what());
        } catch (const SamplingError& e) {
            py::set_error(sampling_error, e.what());
        } catch (const Error& e) {
            py::set_error(base, e.what());
        }
    });

    m.def("tokenize", &tokenize, py::arg("text"));

    py::class_<Vocabulary>(m, "Vocabulary")
        .def_static("build", &Vocabulary::build, py::arg("texts"), py::arg("max_size") = 0)
        .def("__len__", &Vocabulary::size)
        .def("encode", [](const Vocabulary& v, const std::string& text) { return v.encode(text).ids; })
        .def("decode", [](const Vocabulary& v, const std::vector<TokenId>& t) { return v.decode(ids(t)); })
        .def("id", &Vocabulary::id)
        .def("word", &Vocabulary::word)
        .def_property_readonly("words", &Vocabulary::words);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("embed_dim", &ModelConfig::embed_dim)
        .def_readwrite("num_heads", &ModelConfig::num_heads)
        .def_readwrite("encoder_layers", &ModelConfig::encoder_layers)
        .def_readwrite("decoder_layers", &ModelConfig::decoder_layers)
        .def_readwrite("feedforward_dim", &ModelConfig::feedforward_dim)
        .def_readwrite("max_sequence_length", &ModelConfig::max_sequence_length)
        .def_readwrite("dropout_rate", &ModelConfig::dropout_rate)
        .def("validate", &ModelConfig::validate)
        .def_static("full_scale", &ModelConfig::full_scale, py::arg("vocab_size"));

    py::class_<MetaConfig>(m, "MetaConfig")
        .def(py::init<>())
        .def_property(
            "mode", [](const MetaConfig& c) { return to_string(c.mode); },
            [](MetaConfig& c, const std::string& s) { c.mode = parse_train_mode(s); })
        .def_readwrite("alpha", &MetaConfig::alpha)
        .def_readwrite("eta_t", &MetaConfig::eta_t)
        .def_readwrite("eta_o", &MetaConfig::eta_o)
        .def_readwrite("tasks_per_batch", &MetaConfig::tasks_per_batch)
        .def_readwrite("inner_steps", &MetaConfig::inner_steps)
        .def_readwrite("first_order", &MetaConfig::first_order)
        .def_readwrite("clip_norm", &MetaConfig::clip_norm)
        .def_readwrite("max_iterations", &MetaConfig::max_iterations)
        .def_readwrite("early_stop_patience", &MetaConfig::early_stop_patience)
        .def_readwrite("eval_every", &MetaConfig::eval_every)
        .def("validate", &MetaConfig::validate);

    py::class_<KShotProtocol>(m, "KShotProtocol")
        .def(py::init<>())
        .def_readwrite("k", &KShotProtocol::k)
        .def_readwrite("finetune_steps", &KShotProtocol::finetune_steps)
        .def_readwrite("finetune_lr", &KShotProtocol::finetune_lr)
        .def_readwrite("reserve_shots", &KShotProtocol::reserve_shots)
        .def_readwrite("max_generate_len", &KShotProtocol::max_generate_len);

    py::class_<CorpusSplits>(m, "Corpus")
        .def("__len__", &CorpusSplits::size)
        .def("persona_ids",
             [](const CorpusSplits& c, const std::string& split) {
                 std::vector<std::string> out;
                 for (const auto& t : split_of(c, split)) out.push_back(t.persona_id);
                 return out;
             },
             py::arg("split"))
        .def("statements",
             [](const CorpusSplits& c, const std::string& split, std::size_t index) {
                 return split_of(c, split).at(index).statements;
             },
             py::arg("split"), py::arg("index"))
        .def("texts", [](const CorpusSplits& c, const std::string& split) { return corpus_texts(split_of(c, split)); },
             py::arg("split"));

    m.def(
        "generate_synthetic",
        [](std::size_t personas, std::size_t dialogues, std::uint64_t seed, double valid_fraction, double test_fraction) {
            std::mt19937_64 rng(seed);
            SyntheticOptions o;
            o.valid_fraction = valid_fraction;
            o.test_fraction = test_fraction;
            return generate_synthetic(personas, dialogues, rng, o);
        },
        py::arg("personas") = 30, py::arg("dialogues") = 14, py::arg("seed") = 2024,
        py::arg("valid_fraction") = 1.0 / 6.0, py::arg("test_fraction") = 1.0 / 6.0);
    m.def(
        "load_corpus",
        [](const std::filesystem::path& path, const std::string& format) {
            return load_corpus(path, parse_corpus_format(format));
        },
        py::arg("path"), py::arg("format") = "jsonl");
    m.def("write_corpus", &write_corpus, py::arg("corpus"), py::arg("path"));

    py::class_<Model>(m, "Model")
        .def(py::init<const std::string&, const ModelConfig&, std::uint64_t>(), py::arg("architecture"),
             py::arg("config"), py::arg("seed") = 0)
        .def_property_readonly("architecture", &Model::architecture)
        .def_property_readonly("config", [](const Model& self) { return self.model().config(); })
        .def_property_readonly("parameter_count", [](const Model& self) { return self.params().scalar_count(); })
        .def("parameters",
             [](const Model& self) {
                 py::dict out;
                 for (const auto& e : self.params()) {
                     out[py::str(e.name)] = std::vector<double>(e.value.data().begin(), e.value.data().end());
                 }
                 return out;
             })
        .def(
            "loss",
            [](const Model& self, const std::vector<TokenId>& context, const std::vector<TokenId>& response) {
                return response_loss(self.model(), self.params().detached(), ids(context), wrap_target(ids(response)))
                    .item();
            },
            py::arg("context"), py::arg("response"))
        .def(
            "generate",
            [](const Model& self, const std::vector<TokenId>& context, std::size_t max_len) {
                return generate(self.model(), self.params(), ids(context), max_len).ids;
            },
            py::arg("context"), py::arg("max_len") = 24)
        .def(
            "perplexity",
            [](const Model& self, const std::vector<std::pair<std::vector<TokenId>, std::vector<TokenId>>>& pairs) {
                return perplexity(self.model(), self.params(), examples_from(pairs));
            },
            py::arg("pairs"))
        .def(
            "save",
            [](const Model& self, const std::filesystem::path& path, const Vocabulary& vocab) {
                Checkpoint c;
                c.architecture = self.architecture();
                c.config = self.model().config();
                c.vocabulary = vocab;
                c.parameters = self.params();
                save_checkpoint(c, path);
            },
            py::arg("path"), py::arg("vocab"))
        .def_static(
            "load",
            [](const std::filesystem::path& path) {
                Checkpoint c = load_checkpoint(path);
                return py::make_tuple(Model(c.architecture, c.config, std::move(c.parameters)), c.vocabulary);
            },
            py::arg("path"));

    m.def(
        "train",
        [](Model& model, const CorpusSplits& corpus, const Vocabulary& vocab, const MetaConfig& config,
           std::uint64_t seed) {
            TrainResult r;
            {
                py::gil_scoped_release release;
                r = train(model.model(), corpus, vocab, config, seed, model.params());
            }
            model.set_params(r.best_params);
            nlohmann::json log = nlohmann::json::array();
            for (const auto& rep : r.log) log.push_back(to_json(rep));
            py::dict out;
            out["log"] = to_python(log);
            out["best_iteration"] = r.best_iteration;
            out["iterations_run"] = r.iterations_run;
            out["early_stopped"] = r.early_stopped;
            out["initial_valid_loss"] = r.initial_valid_loss ? py::cast(*r.initial_valid_loss) : py::none();
            out["best_valid_loss"] = r.best_valid_loss ? py::cast(*r.best_valid_loss) : py::none();
            return out;
        },
        py::arg("model"), py::arg("corpus"), py::arg("vocab"), py::arg("config"), py::arg("seed"),
        "Trains `model` in place from its current parameters and returns the run summary.");

    m.def(
        "kshot_evaluate",
        [](const Model& model, const CorpusSplits& corpus, const Vocabulary& vocab, const KShotProtocol& protocol,
           std::uint64_t seed) {
            KShotResult r;
            {
                py::gil_scoped_release release;
                r = kshot_evaluate(model.model(), model.params(), corpus.test, vocab, protocol, seed);
            }
            py::dict out = to_python(to_json(r.report));
            nlohmann::json gens = nlohmann::json::array();
            for (const auto& g : r.generations) gens.push_back(to_json(g));
            out["generations"] = to_python(gens);
            return out;
        },
        py::arg("model"), py::arg("corpus"), py::arg("vocab"), py::arg("protocol"), py::arg("seed"));

    m.def(
        "bleu",
        [](const std::vector<std::vector<std::string>>& hyps, const std::vector<std::vector<std::string>>& refs) {
            return bleu(hyps, refs);
        },
        py::arg("hypotheses"), py::arg("references"));
    m.def(
        "consistency_proxy",
        [](const std::vector<std::string>& response, const std::vector<std::string>& statements) {
            return consistency_proxy(response, statements);
        },
        py::arg("response"), py::arg("statements"));

    m.def(
        "gradcheck",
        [](const std::string& preset, bool first_order, bool inject_fault) {
            GradcheckOptions o;
            o.preset = preset;
            o.first_order = first_order;
            o.inject_fault = inject_fault;
            const GradcheckReport r = run_gradcheck(o);
            py::list checks;
            for (const auto& c : r.checks) {
                py::dict d;
                d["name"] = c.name;
                d["max_error"] = c.comparison.max_error;
                d["max_relative_error"] = c.comparison.max_relative_error;
                d["parameters"] = c.parameters;
                d["informational"] = c.informational;
                d["passed"] = c.passed;
                checks.append(d);
            }
            py::dict out;
            out["passed"] = r.passed();
            out["checks"] = checks;
            return out;
        },
        py::arg("preset") = "tiny", py::arg("first_order") = false, py::arg("inject_fault") = false);
}
