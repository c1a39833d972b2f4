// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "more/encoder.hpp"

#include <cmath>
#include <random>

#include "more/error.hpp"
#include "more/graph.hpp"

namespace more {

using nn::Tensor;

namespace {

constexpr double kTextPositionScale = 0.3;

std::unordered_map<std::string, int> index_of(const std::vector<std::string>& items, const char* what) {
    std::unordered_map<std::string, int> out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!out.emplace(items[i], int(i)).second) {
            throw ConfigError(std::string("duplicate ") + what + " '" + items[i] + "'");
        }
    }
    return out;
}

void normalize_row(std::span<double> row) {
    double mean = 0.0, var = 0.0;
    for (double v : row) mean += v;
    mean /= double(row.size());
    for (double v : row) var += (v - mean) * (v - mean);
    const double inv = 1.0 / std::sqrt(var / double(row.size()) + nn::kLayerNormEps);
    for (double& v : row) v = (v - mean) * inv;
}

} // namespace

RetrievalSet RetrievalSet::head(std::size_t m, std::size_t n) const {
    RetrievalSet out;
    out.images.assign(images.begin(), images.begin() + std::ptrdiff_t(std::min(m, images.size())));
    out.texts.assign(texts.begin(), texts.begin() + std::ptrdiff_t(std::min(n, texts.size())));
    return out;
}

RetrievalEncoder::RetrievalEncoder(std::vector<std::string> entities, std::vector<std::string> relations,
                                   std::vector<std::string> words, std::size_t d_enc, std::uint64_t seed,
                                   std::size_t max_text_len)
    : d_enc_(d_enc), seed_(seed), n_entities_(entities.size()), n_relations_(relations.size()) {
    if (d_enc == 0 || entities.empty() || relations.empty() || max_text_len == 0) {
        throw ConfigError("encoder needs d_enc > 0 and nonempty entity/relation inventories");
    }
    entity_index_ = index_of(entities, "entity");
    relation_index_ = index_of(relations, "relation");
    // Every entity and relation word is also a text word.
    std::vector<std::string> all = entities;
    all.insert(all.end(), relations.begin(), relations.end());
    for (auto& w : words) {
        if (!entity_index_.count(w) && !relation_index_.count(w)) all.push_back(w);
    }
    std::unordered_map<std::string, int> seen;
    std::vector<std::string> unique;
    for (auto& w : all) {
        if (seen.emplace(w, int(unique.size())).second) unique.push_back(w);
    }
    word_index_ = std::move(seen);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t E = n_entities_, R = n_relations_;
    projection_ = Tensor({2 * E + R, d_enc});
    for (double& x : projection_.storage()) x = normal(rng);
    text_table_ = Tensor({unique.size(), d_enc});
    for (std::size_t w = 0; w < unique.size(); ++w) {
        auto row = text_table_.row(w);
        if (w < E) {
            // An entity word sits between its subject and object codes.
            for (std::size_t c = 0; c < d_enc; ++c) {
                row[c] = (projection_.at(w, c) + projection_.at(E + R + w, c)) / std::sqrt(2.0);
            }
        } else if (w < E + R) {
            for (std::size_t c = 0; c < d_enc; ++c) row[c] = projection_.at(E + (w - E), c);
        } else {
            for (double& x : row) x = normal(rng);
        }
    }
    positions_ = Tensor({max_text_len, d_enc});
    for (double& x : positions_.storage()) x = kTextPositionScale * normal(rng);
}

std::uint64_t RetrievalEncoder::hash() const {
    nn::Parameter a("projection", projection_, false), b("text_table", text_table_, false),
        c("positions", positions_, false);
    const nn::Parameter* ps[] = {&a, &b, &c};
    return nn::parameter_hash(std::span<const nn::Parameter* const>(ps));
}

int RetrievalEncoder::word_id(const std::string& w) const {
    auto it = word_index_.find(w);
    if (it == word_index_.end()) throw DataError("encoder: unknown word '" + w + "'");
    return it->second;
}

EncodedItem RetrievalEncoder::encode_image(const std::vector<Fact>& facts) const {
    if (facts.empty()) throw DataError("encoder: image with an empty fact list");
    const std::size_t E = n_entities_, R = n_relations_;
    EncodedItem out{Tensor({facts.size(), d_enc_}), ItemKind::image, {}};
    for (std::size_t i = 0; i < facts.size(); ++i) {
        const auto s = entity_index_.find(facts[i].subject);
        const auto r = relation_index_.find(facts[i].relation);
        const auto o = entity_index_.find(facts[i].object);
        if (s == entity_index_.end()) throw DataError("encoder: unknown entity '" + facts[i].subject + "'");
        if (o == entity_index_.end()) throw DataError("encoder: unknown entity '" + facts[i].object + "'");
        if (r == relation_index_.end()) throw DataError("encoder: unknown relation '" + facts[i].relation + "'");
        auto row = out.embeddings.row(i);
        for (std::size_t c = 0; c < d_enc_; ++c) {
            row[c] = projection_.at(std::size_t(s->second), c) + projection_.at(E + std::size_t(r->second), c) +
                     projection_.at(E + R + std::size_t(o->second), c);
        }
        normalize_row(row);
    }
    return out;
}

EncodedItem RetrievalEncoder::encode_text(const std::vector<std::string>& snippet) const {
    if (snippet.empty()) throw DataError("encoder: empty text snippet");
    const std::size_t n = std::min(snippet.size(), positions_.rows());
    EncodedItem out{Tensor({n, d_enc_}), ItemKind::text, {}};
    for (std::size_t t = 0; t < n; ++t) {
        const auto src = text_table_.row(std::size_t(word_id(snippet[t])));
        const auto pos = positions_.row(t);
        auto row = out.embeddings.row(t);
        for (std::size_t c = 0; c < d_enc_; ++c) row[c] = src[c] + pos[c];
        normalize_row(row);
    }
    return out;
}

EncodedItem RetrievalEncoder::encode(const RetrievedItem& item) const {
    EncodedItem out = item.kind == ItemKind::image ? encode_image(item.facts) : encode_text(item.snippet);
    out.source_id = item.source_id;
    return out;
}

Tensor RetrievalEncoder::encode_all(const RetrievalSet& set) const {
    if (set.empty()) throw DataError("encoder: empty retrieval set");
    std::vector<double> data;
    std::size_t rows = 0;
    auto append = [&](const RetrievedItem& item) {
        const EncodedItem e = encode(item);
        data.insert(data.end(), e.embeddings.data().begin(), e.embeddings.data().end());
        rows += e.embeddings.rows();
    };
    for (const auto& item : set.images) append(item);
    for (const auto& item : set.texts) append(item);
    return Tensor({rows, d_enc_}, std::move(data));
}

ConceptEmbedding RetrievalEncoder::embed_concepts(const std::vector<std::string>& concepts) const {
    if (concepts.empty()) throw DataError("encoder: empty concept list");
    ConceptEmbedding out{Tensor({concepts.size(), d_enc_}), {}};
    for (std::size_t i = 0; i < concepts.size(); ++i) {
        const int id = word_id(concepts[i]);
        out.token_ids.push_back(id);
        const auto src = text_table_.row(std::size_t(id));
        auto row = out.embeddings.row(i);
        std::copy(src.begin(), src.end(), row.begin());
        normalize_row(row);
    }
    return out;
}

} // namespace more
