// SPDX-License-Identifier: Apache-2.0
#include "mtml/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mtml/error.hpp"
#include "mtml/seqmodel.hpp"

namespace mtml {

namespace fs = std::filesystem;
using nlohmann::json;

CorpusFormat parse_corpus_format(const std::string& text) {
    if (text == "jsonl") return CorpusFormat::Jsonl;
    if (text == "personachat") return CorpusFormat::PersonaChat;
    throw ConfigError("unknown corpus format '" + text + "' (expected jsonl or personachat)");
}

std::string to_string(CorpusFormat format) {
    return format == CorpusFormat::Jsonl ? "jsonl" : "personachat";
}

fs::path manifest_path(const fs::path& corpus) { return fs::path(corpus.string() + ".splits"); }

namespace {

enum class Split { Train, Valid, Test };

Split parse_split(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "valid") return Split::Valid;
    if (name == "test") return Split::Test;
    throw ConfigError("unknown split '" + name + "'");
}

std::vector<PersonaTask>& split_ref(CorpusSplits& s, Split which) {
    switch (which) {
        case Split::Train: return s.train;
        case Split::Valid: return s.valid;
        case Split::Test: return s.test;
    }
    return s.train;
}

bool has_owner_turn(const PersonaTask& task, const Dialogue& d) {
    return std::any_of(d.begin(), d.end(), [&](const Turn& t) { return t.speaker == task.owner; });
}

std::string task_problem(const PersonaTask& task) {
    if (task.persona_id.empty()) return "persona_id is empty";
    if (task.statements.empty()) return "persona '" + task.persona_id + "' has no statements";
    if (task.dialogues.empty()) return "persona '" + task.persona_id + "' has no dialogues";
    for (std::size_t i = 0; i < task.dialogues.size(); ++i) {
        if (!has_owner_turn(task, task.dialogues[i])) {
            return "persona '" + task.persona_id + "' dialogue " + std::to_string(i) + " has no turn by '" +
                   task.owner + "'";
        }
    }
    return {};
}

PersonaTask task_from_json(const json& j) {
    PersonaTask task;
    task.persona_id = j.at("persona_id").get<std::string>();
    task.statements = j.at("statements").get<std::vector<std::string>>();
    task.owner = j.value("owner", task.owner);
    for (const auto& d : j.at("dialogues")) {
        Dialogue dialogue;
        for (const auto& t : d) {
            if (!t.is_array() || t.size() != 2) throw json::type_error::create(302, "turn must be [speaker, text]", &t);
            dialogue.push_back(Turn{t[0].get<std::string>(), t[1].get<std::string>()});
        }
        task.dialogues.push_back(std::move(dialogue));
    }
    return task;
}

json task_to_json(const PersonaTask& task) {
    json dialogues = json::array();
    for (const auto& d : task.dialogues) {
        json turns = json::array();
        for (const auto& t : d) turns.push_back(json::array({t.speaker, t.text}));
        dialogues.push_back(std::move(turns));
    }
    return {{"persona_id", task.persona_id},
            {"statements", task.statements},
            {"dialogues", std::move(dialogues)},
            {"owner", task.owner}};
}

std::map<std::string, Split> read_manifest(const fs::path& path) {
    std::map<std::string, Split> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError("manifest: expected 'persona_id<TAB>split'", line_no);
        const std::string id = line.substr(0, tab);
        Split split;
        try {
            split = parse_split(line.substr(tab + 1));
        } catch (const ConfigError& e) {
            throw ParseError(std::string("manifest: ") + e.what(), line_no);
        }
        const auto [it, inserted] = out.emplace(id, split);
        if (!inserted) throw IntegrityError("manifest: persona '" + id + "' is listed more than once");
    }
    return out;
}

CorpusSplits load_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open corpus file '" + path.string() + "'");
    const auto manifest = read_manifest(manifest_path(path));
    const bool have_manifest = fs::exists(manifest_path(path));

    CorpusSplits splits;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        PersonaTask task;
        try {
            task = task_from_json(json::parse(line));
        } catch (const json::exception& e) {
            throw ParseError(std::string("malformed corpus record: ") + e.what(), line_no);
        }
        if (const std::string problem = task_problem(task); !problem.empty()) throw ParseError(problem, line_no);
        if (!seen.insert(task.persona_id).second) {
            throw IntegrityError("persona '" + task.persona_id + "' appears more than once (line " +
                                 std::to_string(line_no) + ")");
        }
        Split split = Split::Train;
        if (have_manifest) {
            const auto it = manifest.find(task.persona_id);
            if (it == manifest.end()) throw IntegrityError("persona '" + task.persona_id + "' missing from manifest");
            split = it->second;
        }
        split_ref(splits, split).push_back(std::move(task));
    }
    if (seen.empty()) throw EmptyCorpusError("corpus '" + path.string() + "' contains no personas");
    for (const auto& [id, split] : manifest) {
        if (!seen.contains(id)) throw IntegrityError("manifest lists unknown persona '" + id + "'");
    }
    return splits;
}

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::string persona_hash(const std::vector<std::string>& statements) {
    std::uint64_t h = 14695981039346656037ull;
    for (const auto& s : statements) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        h ^= 0xff;
        h *= 1099511628211ull;
    }
    std::ostringstream out;
    out << "pc-" << std::hex << h;
    return out.str();
}

Split split_from_filename(const fs::path& file) {
    const std::string name = file.filename().string();
    for (const auto* key : {"train", "valid", "test"}) {
        if (name.find(key) != std::string::npos) return parse_split(key);
    }
    throw ConfigError("cannot infer split from PersonaChat file name '" + name + "'");
}

std::vector<PersonaTask> load_personachat_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open corpus file '" + path.string() + "'");
    std::vector<PersonaTask> tasks;
    std::map<std::vector<std::string>, std::size_t> by_persona;
    std::vector<std::string> statements;
    Dialogue dialogue;
    std::size_t dialogue_line = 0;

    const auto flush = [&]() {
        if (statements.empty() && dialogue.empty()) return;
        if (statements.empty()) throw ParseError("dialogue has no 'your persona:' lines", dialogue_line);
        if (dialogue.empty()) throw ParseError("persona block has no dialogue turns", dialogue_line);
        auto [it, inserted] = by_persona.emplace(statements, tasks.size());
        if (inserted) {
            PersonaTask task;
            task.persona_id = persona_hash(statements);
            task.statements = statements;
            tasks.push_back(std::move(task));
        }
        tasks[it->second].dialogues.push_back(std::move(dialogue));
        statements.clear();
        dialogue.clear();
    };

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto space = line.find(' ');
        std::size_t index = 0;
        try {
            index = std::stoul(line.substr(0, space));
        } catch (const std::exception&) {
            throw ParseError("expected a leading turn number", line_no);
        }
        if (space == std::string::npos) throw ParseError("line has no content after the turn number", line_no);
        if (index == 1) {
            flush();
            dialogue_line = line_no;
        }
        const std::string rest = line.substr(space + 1);
        if (rest.starts_with("your persona:")) {
            statements.push_back(trim(rest.substr(13)));
            continue;
        }
        if (rest.starts_with("partner's persona:")) continue;
        const auto tab = rest.find('\t');
        if (tab == std::string::npos) throw ParseError("expected 'partner<TAB>self' utterances", line_no);
        const auto end = rest.find('\t', tab + 1);
        const std::string partner = trim(rest.substr(0, tab));
        const std::string self = trim(rest.substr(tab + 1, end == std::string::npos ? std::string::npos : end - tab - 1));
        if (!partner.empty()) dialogue.push_back(Turn{"partner", partner});
        if (self.empty()) throw ParseError("empty persona utterance", line_no);
        dialogue.push_back(Turn{"persona", self});
    }
    flush();
    return tasks;
}

CorpusSplits load_personachat(const fs::path& path) {
    std::vector<fs::path> files;
    if (fs::is_directory(path)) {
        for (const auto& entry : fs::directory_iterator(path)) {
            if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
    } else {
        files.push_back(path);
    }
    CorpusSplits splits;
    std::map<std::string, std::string> origin;
    for (const auto& file : files) {
        const Split split = split_from_filename(file);
        for (auto& task : load_personachat_file(file)) {
            const auto [it, inserted] = origin.emplace(task.persona_id, file.filename().string());
            if (!inserted) {
                throw IntegrityError("persona '" + task.persona_id + "' appears in both " + it->second + " and " +
                                     file.filename().string());
            }
            split_ref(splits, split).push_back(std::move(task));
        }
    }
    if (splits.size() == 0) throw EmptyCorpusError("corpus '" + path.string() + "' contains no personas");
    return splits;
}

}  // namespace

void validate(const CorpusSplits& splits) {
    std::set<std::string> ids;
    for (const auto* split : {&splits.train, &splits.valid, &splits.test}) {
        for (const auto& task : *split) {
            if (const std::string problem = task_problem(task); !problem.empty()) throw IntegrityError(problem);
            if (!ids.insert(task.persona_id).second) {
                throw IntegrityError("persona '" + task.persona_id + "' appears more than once");
            }
        }
    }
}

CorpusSplits load_corpus(const fs::path& path, CorpusFormat format) {
    if (!fs::exists(path)) throw ConfigError("corpus path '" + path.string() + "' does not exist");
    CorpusSplits splits = format == CorpusFormat::Jsonl ? load_jsonl(path) : load_personachat(path);
    validate(splits);
    return splits;
}

void write_corpus(const CorpusSplits& splits, const fs::path& path) {
    validate(splits);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    std::ofstream manifest(manifest_path(path), std::ios::trunc);
    if (!out || !manifest) throw ConfigError("cannot write corpus to '" + path.string() + "'");
    const std::array<std::pair<const std::vector<PersonaTask>*, const char*>, 3> parts = {
        {{&splits.train, "train"}, {&splits.valid, "valid"}, {&splits.test, "test"}}};
    for (const auto& [tasks, name] : parts) {
        for (const auto& task : *tasks) {
            out << task_to_json(task).dump() << '\n';
            manifest << task.persona_id << '\t' << name << '\n';
        }
    }
}

TokenSequence concat_persona(const std::vector<std::string>& statements, const Vocabulary& vocab) {
    if (statements.empty()) throw ContractError("concat_persona: no statements");
    TokenSequence out;
    out.ids.push_back(special::kBos);
    for (std::size_t i = 0; i < statements.size(); ++i) {
        if (i > 0) out.ids.push_back(special::kSep);
        const TokenSequence s = vocab.encode(statements[i]);
        out.ids.insert(out.ids.end(), s.ids.begin(), s.ids.end());
    }
    out.ids.push_back(special::kEos);
    return out;
}

EpisodeBatch sample_episode(const std::vector<PersonaTask>& split, std::size_t m, std::mt19937_64& rng,
                            const EpisodeSizes& sizes) {
    if (m == 0) throw SamplingError("episode size must be at least 1");
    if (sizes.support_dialogues == 0 || sizes.query_dialogues == 0) {
        throw SamplingError("support and query sizes must be at least 1");
    }
    if (split.size() < m) {
        throw SamplingError("cannot sample " + std::to_string(m) + " distinct personas from a split of " +
                            std::to_string(split.size()));
    }
    const std::size_t needed = sizes.support_dialogues + sizes.query_dialogues;
    for (const auto& task : split) {
        if (task.dialogues.size() < needed) {
            throw SamplingError("persona '" + task.persona_id + "' has " + std::to_string(task.dialogues.size()) +
                                " dialogues, needs " + std::to_string(needed));
        }
    }
    const auto partial_shuffle = [&rng](std::vector<std::size_t>& v, std::size_t k) {
        for (std::size_t i = 0; i < k; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, v.size() - 1);
            std::swap(v[i], v[pick(rng)]);
        }
    };

    std::vector<std::size_t> personas(split.size());
    std::iota(personas.begin(), personas.end(), 0);
    partial_shuffle(personas, m);

    EpisodeBatch batch;
    for (std::size_t i = 0; i < m; ++i) {
        TaskEpisode ep;
        ep.task_index = personas[i];
        std::vector<std::size_t> dialogues(split[ep.task_index].dialogues.size());
        std::iota(dialogues.begin(), dialogues.end(), 0);
        partial_shuffle(dialogues, needed);
        ep.support.assign(dialogues.begin(), dialogues.begin() + static_cast<std::ptrdiff_t>(sizes.support_dialogues));
        ep.query.assign(dialogues.begin() + static_cast<std::ptrdiff_t>(sizes.support_dialogues),
                        dialogues.begin() + static_cast<std::ptrdiff_t>(needed));
        batch.tasks.push_back(std::move(ep));
    }
    return batch;
}

namespace {

void append(std::vector<TokenId>& out, const std::vector<TokenId>& part) { out.insert(out.end(), part.begin(), part.end()); }

TokenSequence build_context(const std::vector<TokenSequence>& turns, std::size_t end, const TokenSequence& prefix,
                            std::size_t budget) {
    const std::size_t prefix_cost = prefix.empty() ? 0 : prefix.size() + 1;
    const std::size_t turn_budget = budget > prefix_cost ? budget - prefix_cost : 0;
    std::size_t first = end;
    std::size_t used = 0;
    while (first > 0) {
        const std::size_t cost = turns[first - 1].size() + (first == end ? 0 : 1);
        if (used + cost > turn_budget) break;
        used += cost;
        --first;
    }
    TokenSequence out;
    if (!prefix.empty()) {
        append(out.ids, prefix.ids);
        out.ids.push_back(special::kSep);
    }
    if (first == end) {
        const auto& last = turns[end - 1].ids;
        const std::size_t keep = std::min(last.size(), std::max<std::size_t>(turn_budget, 1));
        out.ids.insert(out.ids.end(), last.end() - static_cast<std::ptrdiff_t>(keep), last.end());
    } else {
        for (std::size_t i = first; i < end; ++i) {
            if (i > first) out.ids.push_back(special::kSep);
            append(out.ids, turns[i].ids);
        }
    }
    if (out.size() > budget) out.ids.erase(out.ids.begin(), out.ids.end() - static_cast<std::ptrdiff_t>(budget));
    return out;
}

}  // namespace

std::vector<TrainingExample> make_examples(const PersonaTask& task, const std::vector<std::size_t>& dialogue_indices,
                                           const Vocabulary& vocab, const ExampleOptions& options) {
    const TokenSequence persona_target =
        task.statements.empty() ? TokenSequence{} : concat_persona(task.statements, vocab);
    TokenSequence prefix;
    if (options.persona_in_context && !persona_target.empty()) {
        prefix.ids.assign(persona_target.ids.begin() + 1, persona_target.ids.end() - 1);
    }

    std::vector<TrainingExample> out;
    for (std::size_t index : dialogue_indices) {
        if (index >= task.dialogues.size()) {
            throw ContractError("make_examples: dialogue index " + std::to_string(index) + " out of range for '" +
                                task.persona_id + "'");
        }
        const Dialogue& dialogue = task.dialogues[index];
        std::vector<TokenSequence> turns;
        turns.reserve(dialogue.size());
        for (const auto& t : dialogue) turns.push_back(vocab.encode(t.text));
        for (std::size_t i = 1; i < dialogue.size(); ++i) {
            if (dialogue[i].speaker != task.owner || turns[i].empty()) continue;
            TrainingExample ex;
            ex.context = build_context(turns, i, prefix, options.max_context_tokens);
            if (ex.context.empty()) continue;
            ex.response = wrap_target(turns[i]);
            ex.persona_target = persona_target;
            out.push_back(std::move(ex));
        }
    }
    return out;
}

std::vector<TrainingExample> make_examples(const PersonaTask& task, const Vocabulary& vocab,
                                           const ExampleOptions& options) {
    std::vector<std::size_t> all(task.dialogues.size());
    std::iota(all.begin(), all.end(), 0);
    return make_examples(task, all, vocab, options);
}

std::vector<std::string> corpus_texts(const std::vector<PersonaTask>& split) {
    std::vector<std::string> out;
    for (const auto& task : split) {
        out.insert(out.end(), task.statements.begin(), task.statements.end());
        for (const auto& d : task.dialogues) {
            for (const auto& t : d) out.push_back(t.text);
        }
    }
    return out;
}

namespace {

struct Slot {
    const char* name;
    std::vector<const char*> values;
    const char* statement;
    std::vector<const char*> questions;
    std::vector<const char*> answers;
    const char* denial;
};

const std::vector<Slot>& slots() {
    static const std::vector<Slot> table = {
        {"hobby",
         {"hiking", "fishing", "painting", "swimming", "cycling", "gardening", "cooking", "reading", "dancing",
          "singing", "knitting", "surfing", "camping", "running", "drawing", "skiing", "baking", "chess",
          "photography", "climbing"},
         "on the weekends i love {}",
         {"what do you do for fun ?", "do you have any hobbies ?"},
         {"i love {} on the weekends", "mostly {} , i love it on the weekends", "i love {} , especially on the weekends"},
         "i do not have any hobbies , i work a lot"},
        {"job",
         {"teacher", "nurse", "doctor", "lawyer", "chef", "farmer", "pilot", "engineer", "artist", "writer", "baker",
          "plumber", "dentist", "driver", "banker", "soldier", "librarian", "mechanic", "scientist", "musician"},
         "i work as a {}",
         {"what do you do for a living ?", "what is your job ?"},
         {"i work as a {}", "i work as a {} in town", "i am a {} , i love my work"},
         "i do not work right now"},
        {"pet",
         {"dog", "cat", "parrot", "hamster", "rabbit", "turtle", "snake", "goldfish", "horse", "lizard", "ferret",
          "pony", "frog", "pig", "mouse"},
         "i have a pet {}",
         {"do you have any pets ?", "tell me about your pets ."},
         {"yes i have a pet {}", "i have a pet {} , he is great", "my pet {} is great"},
         "no , i do not have a pet"},
        {"food",
         {"pizza", "sushi", "pasta", "tacos", "burgers", "salad", "steak", "curry", "noodles", "soup", "pancakes",
          "chicken", "rice", "cheese", "chocolate"},
         "my favorite food is {}",
         {"what is your favorite food ?", "what do you like to eat ?"},
         {"my favorite food is {}", "i love {} , it is my favorite food", "{} is my favorite food"},
         "i do not really have a favorite food"},
        {"city",
         {"paris", "london", "tokyo", "boston", "chicago", "denver", "seattle", "miami", "dallas", "berlin", "madrid",
          "rome", "toronto", "sydney", "austin"},
         "i live in {}",
         {"where do you live ?", "where are you from ?"},
         {"i live in {}", "i live in {} , it is great", "i am from {} and i still live there"},
         "i do not live in a city , i live on a farm"},
    };
    return table;
}

const std::vector<std::pair<const char*, const char*>>& small_talk() {
    static const std::vector<std::pair<const char*, const char*>> table = {
        {"hi how are you today ?", "i am good , thanks for asking"},
        {"nice to meet you .", "nice to meet you too"},
        {"that sounds fun .", "yes it is a lot of fun"},
    };
    return table;
}

std::string fill(const char* pattern, const std::string& value) {
    std::string s(pattern);
    const auto pos = s.find("{}");
    if (pos != std::string::npos) s.replace(pos, 2, value);
    return s;
}

template <class T>
const T& choose(const std::vector<T>& items, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> dist(0, items.size() - 1);
    return items[dist(rng)];
}

}  // namespace

CorpusSplits generate_synthetic(std::size_t num_personas, std::size_t dialogues_per_persona, std::mt19937_64& rng,
                                const SyntheticOptions& options) {
    if (num_personas == 0 || dialogues_per_persona == 0) {
        throw ContractError("generate_synthetic: counts must be at least 1");
    }
    if (options.exchanges_per_dialogue == 0) throw ContractError("generate_synthetic: exchanges must be at least 1");
    if (options.valid_fraction < 0 || options.test_fraction < 0 || options.valid_fraction + options.test_fraction > 1) {
        throw ContractError("generate_synthetic: invalid split fractions");
    }
    const auto& table = slots();
    std::set<std::vector<std::string>> used;
    std::vector<PersonaTask> tasks;
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (std::size_t p = 0; p < num_personas; ++p) {
        std::size_t missing = 0;
        std::vector<std::string> values(table.size());
        std::vector<std::string> statements;
        for (int attempt = 0;; ++attempt) {
            std::uniform_int_distribution<std::size_t> slot_dist(0, table.size() - 1);
            missing = slot_dist(rng);
            statements.clear();
            for (std::size_t s = 0; s < table.size(); ++s) {
                if (s == missing) continue;
                values[s] = choose(table[s].values, rng);
                statements.push_back(fill(table[s].statement, values[s]));
            }
            if (used.insert(statements).second) break;
            if (attempt > 1000) throw ContractError("generate_synthetic: cannot create distinct personas");
        }

        PersonaTask task;
        std::ostringstream id;
        id << "syn-" << std::setw(4) << std::setfill('0') << p;
        task.persona_id = id.str();
        task.statements = statements;
        for (std::size_t d = 0; d < dialogues_per_persona; ++d) {
            Dialogue dialogue;
            for (std::size_t e = 0; e < options.exchanges_per_dialogue; ++e) {
                if (unit(rng) < 0.15) {
                    const auto& [question, reply] = choose(small_talk(), rng);
                    dialogue.push_back(Turn{"partner", question});
                    dialogue.push_back(Turn{"persona", reply});
                    continue;
                }
                std::uniform_int_distribution<std::size_t> slot_dist(0, table.size() - 1);
                const std::size_t s = slot_dist(rng);
                dialogue.push_back(Turn{"partner", choose(table[s].questions, rng)});
                const std::string reply =
                    s == missing ? std::string(table[s].denial) : fill(choose(table[s].answers, rng), values[s]);
                dialogue.push_back(Turn{"persona", reply});
            }
            task.dialogues.push_back(std::move(dialogue));
        }
        tasks.push_back(std::move(task));
    }

    std::vector<std::size_t> order(tasks.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(rng)]);
    }
    const auto n = static_cast<double>(num_personas);
    const auto n_valid = static_cast<std::size_t>(n * options.valid_fraction + 1e-9);
    const auto n_test = static_cast<std::size_t>(n * options.test_fraction + 1e-9);
    std::vector<std::size_t> valid(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_valid));
    std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_valid),
                                  order.begin() + static_cast<std::ptrdiff_t>(n_valid + n_test));
    std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_valid + n_test), order.end());
    CorpusSplits splits;
    for (auto* part : {&train, &valid, &test}) std::sort(part->begin(), part->end());
    for (std::size_t i : train) splits.train.push_back(tasks[i]);
    for (std::size_t i : valid) splits.valid.push_back(tasks[i]);
    for (std::size_t i : test) splits.test.push_back(tasks[i]);
    return splits;
}

}  // namespace mtml
