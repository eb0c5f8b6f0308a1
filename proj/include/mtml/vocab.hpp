// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mtml {

using TokenId = std::uint32_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kSep = 4;
inline constexpr std::size_t kCount = 5;
}  // namespace special

[[nodiscard]] bool is_special(TokenId id) noexcept;

struct TokenSequence {
    std::vector<TokenId> ids;

    [[nodiscard]] std::size_t size() const noexcept { return ids.size(); }
    [[nodiscard]] bool empty() const noexcept { return ids.empty(); }
    bool operator==(const TokenSequence&) const = default;
};

/// Lowercases and splits on whitespace.
[[nodiscard]] std::vector<std::string> tokenize(std::string_view text);

/// Word <-> id mapping. Ids 0..4 are PAD, BOS, EOS, UNK and SEP.
class Vocabulary {
public:
    Vocabulary();

    /// Words ordered by descending frequency, ties broken lexicographically.
    /// `max_size` caps the total size including specials (0 = no cap).
    static Vocabulary build(const std::vector<std::string>& texts, std::size_t max_size = 0);

    /// Restores a vocabulary from its full word list (specials first).
    static Vocabulary from_words(std::vector<std::string> words);

    [[nodiscard]] std::size_t size() const noexcept { return words_.size(); }
    [[nodiscard]] TokenId id(std::string_view word) const;
    [[nodiscard]] const std::string& word(TokenId id) const;
    [[nodiscard]] bool contains(std::string_view word) const;
    [[nodiscard]] const std::vector<std::string>& words() const noexcept { return words_; }

    /// Tokens of `text`, unknown words mapped to UNK. No BOS/EOS added.
    [[nodiscard]] TokenSequence encode(std::string_view text) const;
    /// Space-joined words; special tokens are dropped.
    [[nodiscard]] std::string decode(const TokenSequence& tokens) const;
    [[nodiscard]] std::vector<std::string> decode_words(const TokenSequence& tokens) const;

    bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

private:
    void add(std::string word);

    std::vector<std::string> words_;
    std::unordered_map<std::string, TokenId> ids_;
};

}  // namespace mtml
