// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "more/tensor.hpp"

namespace more {

struct Fact {
    std::string subject;
    std::string relation;
    std::string object;

    bool operator==(const Fact&) const = default;
};

enum class ItemKind { image, text };

/// A retrieved image (latent scene facts) or a text snippet.
struct RetrievedItem {
    ItemKind kind = ItemKind::image;
    std::vector<Fact> facts;            // images only, nonempty
    std::vector<std::string> snippet;   // texts only, tokenized
    std::string source_id;
};

/// Items in the order the retriever returned them.
struct RetrievalSet {
    std::vector<RetrievedItem> images;
    std::vector<RetrievedItem> texts;

    std::size_t size() const { return images.size() + texts.size(); }
    bool empty() const { return size() == 0; }
    /// First `m` images and first `n` texts.
    RetrievalSet head(std::size_t m, std::size_t n) const;
};

struct EncodedItem {
    nn::Tensor embeddings;  // [s_i x d_enc]
    ItemKind kind = ItemKind::image;
    std::string source_id;
};

struct ConceptEmbedding {
    nn::Tensor embeddings;  // [l_c x d_enc]
    std::vector<int> token_ids;
};

/// Frozen stand-in for a multi-modal query encoder. Images become one row per
/// fact: a fixed random projection of the concatenated one-hot codes of
/// (subject, relation, object), layer-normalized. Text becomes one row per
/// token from a frozen table living in the same output space, plus small
/// positional terms, layer-normalized.
class RetrievalEncoder {
  public:
    RetrievalEncoder(std::vector<std::string> entities, std::vector<std::string> relations,
                     std::vector<std::string> words, std::size_t d_enc, std::uint64_t seed,
                     std::size_t max_text_len = 64);

    std::size_t d_enc() const { return d_enc_; }
    std::uint64_t seed() const { return seed_; }
    std::uint64_t hash() const;

    EncodedItem encode_image(const std::vector<Fact>& facts) const;
    EncodedItem encode_text(const std::vector<std::string>& snippet) const;
    EncodedItem encode(const RetrievedItem& item) const;
    /// Rows of every image followed by every text, in set order.
    nn::Tensor encode_all(const RetrievalSet& set) const;
    ConceptEmbedding embed_concepts(const std::vector<std::string>& concepts) const;

  private:
    int word_id(const std::string& w) const;

    std::size_t d_enc_;
    std::uint64_t seed_;
    std::size_t n_entities_, n_relations_;
    std::unordered_map<std::string, int> entity_index_, relation_index_, word_index_;
    nn::Tensor projection_;  // [(2E + R) x d_enc]: subject codes, relation codes, object codes
    nn::Tensor text_table_;  // [W x d_enc]
    nn::Tensor positions_;   // [max_text_len x d_enc]
};

} // namespace more
