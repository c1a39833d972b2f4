// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "more/vocab.hpp"

#include <cctype>

#include "more/error.hpp"

namespace more {

namespace {

bool is_split_punct(char c) {
    return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
}

const std::vector<std::string>& specials() {
    static const std::vector<std::string> s{"<pad>", "<bos>", "<eos>", "<mask>", "<sep>", "=", "<unk>"};
    return s;
}

} // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) out.push_back(std::move(current));
        current.clear();
    };
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else if (is_split_punct(c)) {
            flush();
            out.emplace_back(1, c);
        } else {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    flush();
    return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out.push_back(' ');
        out += t;
    }
    return out;
}

Vocabulary::Vocabulary() {
    for (const auto& s : specials()) add(s);
}

Vocabulary::Vocabulary(const std::vector<std::string>& words) : Vocabulary() {
    for (const auto& w : words) {
        if (!contains(w)) add(w);
    }
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& all_tokens) {
    const auto& s = specials();
    if (all_tokens.size() < s.size() || !std::equal(s.begin(), s.end(), all_tokens.begin())) {
        throw DataError("vocabulary does not start with the reserved special tokens");
    }
    return Vocabulary(std::vector<std::string>(all_tokens.begin() + std::ptrdiff_t(s.size()), all_tokens.end()));
}

void Vocabulary::add(const std::string& word) {
    if (tokens_.size() >= kMaxSize) {
        throw DataError("vocabulary overflow: more than " + std::to_string(kMaxSize) + " tokens");
    }
    index_.emplace(word, static_cast<int>(tokens_.size()));
    tokens_.push_back(word);
}

const std::string& Vocabulary::word(int id) const {
    if (id < 0 || std::size_t(id) >= tokens_.size()) throw DataError("unknown token id " + std::to_string(id));
    return tokens_[std::size_t(id)];
}

bool Vocabulary::contains(std::string_view word) const { return index_.count(std::string(word)) > 0; }

int Vocabulary::id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) throw DataError("unknown word '" + std::string(word) + "'");
    return it->second;
}

int Vocabulary::id_or_unk(std::string_view word) const {
    auto it = index_.find(std::string(word));
    return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& words) const {
    std::vector<int> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(id(w));
    return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids, bool strip_specials) const {
    std::vector<std::string> out;
    for (int id : ids) {
        if (strip_specials && id >= 0 && id <= kUnk) continue;
        out.push_back(word(id));
    }
    return out;
}

} // namespace more
