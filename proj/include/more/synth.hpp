// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "more/encoder.hpp"
#include "more/lm.hpp"
#include "more/vocab.hpp"

namespace more {

struct WorldSizes {
    std::size_t n_entities = 24;
    std::size_t n_relations = 12;
    std::size_t n_locations = 10;
    std::size_t n_adjectives = 8;
    std::size_t n_adverbs = 6;
    std::size_t templates_per_relation = 3;
    std::size_t n_pairs = 60;
    std::size_t options_per_pair = 2;
    std::vector<double> option_weights{0.6, 0.4};
};

struct RelationOption {
    std::string relation;
    bool forward = true;  // true: (a, relation, b); false: (b, relation, a)
    double weight = 0.0;  // normalized over the pair
};

/// An unordered entity pair (a < b by inventory order) and its admissible facts.
struct PairEntry {
    std::string a, b;
    std::vector<RelationOption> options;

    Fact fact(const RelationOption& option) const;
};

/// One realized scene: the fact plus its optional modifiers.
struct Scene {
    Fact fact;
    std::string location;
    std::string adjective;  // may be empty
    std::string adverb;     // may be empty
};

struct WorldSpec {
    std::uint64_t seed = 0;
    WorldSizes sizes;
    std::vector<std::string> entities, relations, locations, adjectives, adverbs;
    std::vector<PairEntry> pairs;
    std::vector<std::vector<std::string>> templates;  // per relation, patterns with {s} {v} {o} {loc} {adj} {adv}

    /// Function words, then entities, relations, locations, adjectives, adverbs.
    std::vector<std::string> words() const;
    Vocabulary vocabulary() const;
    std::size_t relation_index(const std::string& relation) const;

    std::vector<std::string> realize(const Scene& scene, std::size_t template_index) const;
    /// Parses a sentence against every template pattern of the world.
    std::optional<Fact> parse(const std::vector<std::string>& tokens) const;

    /// Relation accuracy of the best predictor that sees only the concept set.
    double concept_only_ceiling() const;
};

WorldSpec generate_world(std::uint64_t seed, const WorldSizes& sizes = {});

struct Example {
    std::string id;
    std::vector<std::string> concepts;
    std::vector<std::string> references;  // sentences, space-joined tokens
    std::vector<Fact> gold_facts;
    RetrievalSet retrieval;
    bool has_retrieval = false;
    bool distractor_only = false;
};

struct DatasetOptions {
    std::size_t min_items = 2;
    std::size_t max_items = 6;
    double distractor_only_fraction = 0.0;        // dev and test
    double train_distractor_only_fraction = 0.0;  // train
};

struct Dataset {
    std::vector<Example> train, dev, test;
};

std::string concept_key(std::vector<std::string> concepts);
Scene sample_scene(const WorldSpec& world, std::mt19937_64& rng);
std::vector<std::string> scene_concepts(const Scene& scene);

Dataset sample_dataset(const WorldSpec& world, std::size_t n_train, std::size_t n_dev, std::size_t n_test,
                       std::mt19937_64& rng, const DatasetOptions& options = {});

struct CorpusOptions {
    double concept_format = 0.75;   // remaining documents are plain sentences
    double relevant_context = 0.40;
    double irrelevant_context = 0.15;  // remaining documents carry no context
    std::size_t max_prefix = 16;
};

/// Pretraining documents drawn from the world, skipping `excluded` concept keys.
std::vector<PretrainDocument> sample_pretrain_corpus(const WorldSpec& world, const Vocabulary& vocab,
                                                     std::size_t n_docs, const std::set<std::string>& excluded,
                                                     std::mt19937_64& rng, const CorpusOptions& options = {});

// ---- files -----------------------------------------------------------------

void write_world(const WorldSpec& world, const std::string& path);
WorldSpec read_world(const std::string& path);

void write_examples_jsonl(const std::vector<Example>& examples, const std::string& path);
std::vector<Example> read_examples_jsonl(const std::string& path);
void write_retrieved_jsonl(const std::vector<Example>& examples, const std::string& path, bool append = false);
/// Attaches retrieval records to `examples` by id; ids without a record are left bare.
void attach_retrieved_jsonl(std::vector<Example>& examples, const std::string& path);

/// CommonGen-shaped JSON lines: {"concept_set": "a#b#c" or [..], "scene": [refs]}.
std::vector<Example> load_commongen(const std::string& path);
void write_commongen(const std::vector<Example>& examples, const std::string& path);

} // namespace more
