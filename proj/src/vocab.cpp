// SPDX-License-Identifier: Apache-2.0
#include "mtml/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

#include "mtml/error.hpp"

namespace mtml {
namespace {

const std::vector<std::string>& special_words() {
    static const std::vector<std::string> words = {"<pad>", "<bos>", "<eos>", "<unk>", "<sep>"};
    return words;
}

}  // namespace

bool is_special(TokenId id) noexcept { return id < special::kCount; }

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!current.empty()) out.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
}

Vocabulary::Vocabulary() {
    for (const auto& w : special_words()) add(w);
}

void Vocabulary::add(std::string word) {
    if (ids_.contains(word)) throw ContractError("vocabulary: duplicate word '" + word + "'");
    ids_.emplace(word, static_cast<TokenId>(words_.size()));
    words_.push_back(std::move(word));
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts, std::size_t max_size) {
    std::map<std::string, std::size_t> counts;
    const auto& specials = special_words();
    for (const auto& text : texts) {
        for (auto& w : tokenize(text)) {
            if (std::find(specials.begin(), specials.end(), w) == specials.end()) ++counts[w];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary vocab;
    for (auto& [word, count] : ranked) {
        if (max_size != 0 && vocab.size() >= max_size) break;
        vocab.add(word);
    }
    return vocab;
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
    const auto& specials = special_words();
    if (words.size() < specials.size() || !std::equal(specials.begin(), specials.end(), words.begin())) {
        throw ParseError("vocabulary: word list does not start with the special tokens");
    }
    Vocabulary vocab;
    for (std::size_t i = specials.size(); i < words.size(); ++i) vocab.add(std::move(words[i]));
    return vocab;
}

TokenId Vocabulary::id(std::string_view word) const {
    const auto it = ids_.find(std::string(word));
    return it == ids_.end() ? special::kUnk : it->second;
}

const std::string& Vocabulary::word(TokenId id) const {
    if (id >= words_.size()) throw ContractError("vocabulary: id " + std::to_string(id) + " out of range");
    return words_[id];
}

bool Vocabulary::contains(std::string_view word) const { return ids_.contains(std::string(word)); }

TokenSequence Vocabulary::encode(std::string_view text) const {
    TokenSequence out;
    for (const auto& w : tokenize(text)) out.ids.push_back(id(w));
    return out;
}

std::vector<std::string> Vocabulary::decode_words(const TokenSequence& tokens) const {
    std::vector<std::string> out;
    for (TokenId t : tokens.ids) {
        if (!is_special(t)) out.push_back(word(t));
    }
    return out;
}

std::string Vocabulary::decode(const TokenSequence& tokens) const {
    std::string out;
    for (const auto& w : decode_words(tokens)) {
        if (!out.empty()) out.push_back(' ');
        out += w;
    }
    return out;
}

}  // namespace mtml
