// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace more {

/// Whole-word, lowercasing tokenizer shared by the model and the metrics.
/// Sentence punctuation (. , ! ? ; :) is split off into its own token.
std::vector<std::string> tokenize(std::string_view text);
std::string join_tokens(const std::vector<std::string>& tokens);

/// Fixed token inventory. Special ids are the first entries and never move.
class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kMask = 3;
    static constexpr int kSep = 4;
    static constexpr int kEq = 5;
    static constexpr int kUnk = 6;
    static constexpr std::size_t kMaxSize = 512;

    Vocabulary();
    /// Specials followed by `words` in order (duplicates ignored).
    explicit Vocabulary(const std::vector<std::string>& words);
    static Vocabulary from_tokens(const std::vector<std::string>& all_tokens);

    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::string& word(int id) const;
    bool contains(std::string_view word) const;
    /// Throws DataError on an unknown word.
    int id(std::string_view word) const;
    int id_or_unk(std::string_view word) const;
    std::vector<int> encode(const std::vector<std::string>& words) const;
    std::vector<std::string> decode(const std::vector<int>& ids, bool strip_specials = true) const;

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

  private:
    void add(const std::string& word);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

} // namespace more
