// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "more/config.hpp"
#include "more/decode.hpp"
#include "more/metrics.hpp"
#include "more/train.hpp"

namespace more {

enum class RetrievalMode { oracle, none, irrelevant, top_k };

struct RetrievalChoice {
    RetrievalMode mode = RetrievalMode::oracle;
    std::size_t k = 0;

    std::string label() const;
};

/// Comma list of "oracle", "none", "irrelevant" and "k=N1,N2,...".
std::vector<RetrievalChoice> parse_retrieval(const std::string& text);

/// Uniform random cyclic permutation (Sattolo): out[i] != i for n >= 2.
std::vector<std::size_t> derangement(std::size_t n, std::uint64_t seed);

struct Prediction {
    std::string id;
    std::vector<std::string> tokens;
    double score = 0.0;
};

struct EvalResult {
    RetrievalChoice choice;
    MetricBlock metrics;
    std::vector<Prediction> predictions;
};

EvalResult evaluate(const TrainedModel& model, const FrozenLM& lm, const RetrievalEncoder& encoder,
                    std::span<const Example> examples, const WorldSpec* world, const RetrievalChoice& choice,
                    const EvalConfig& config);

void write_predictions_jsonl(const std::vector<Prediction>& predictions, const std::string& path);

/// World, vocabulary, splits and encoder derived from a run configuration.
struct WorldBundle {
    WorldSpec world;
    Vocabulary vocab;
    Dataset data;
    std::unique_ptr<RetrievalEncoder> encoder;
};

RetrievalEncoder make_encoder(const WorldSpec& world, std::size_t d_enc, std::uint64_t seed);
WorldBundle build_world(const RunConfig& config);
/// Pretraining corpus that never shows a dev or test concept set.
std::vector<PretrainDocument> build_corpus(const RunConfig& config, const WorldBundle& bundle);

} // namespace more
