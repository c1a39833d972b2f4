// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "more/encoder.hpp"

namespace more {

using Tokens = std::vector<std::string>;

struct EvalRecord {
    std::string id;
    Tokens prediction;
    std::vector<Tokens> references;
    std::vector<std::string> concepts;
    std::vector<Fact> gold_facts;
};

inline constexpr double kRougeBeta = 1.2;
inline constexpr double kCiderSigma = 6.0;

/// Corpus BLEU-4: clipped multi-reference n-gram precisions, closest-length
/// brevity penalty, no smoothing.
double bleu4(std::span<const EvalRecord> corpus);
/// Sentence BLEU-4 with +1 smoothing on every n > 1. Diagnostic only.
double bleu4_diagnostic(const EvalRecord& record);

double rouge_l(std::span<const EvalRecord> corpus, double beta = kRougeBeta);

/// CIDEr-D with document frequencies taken from the references of `corpus`.
/// Per-record scores go to `per_record` when given.
double cider_d(std::span<const EvalRecord> corpus, std::vector<double>* per_record = nullptr,
               double sigma = kCiderSigma);

/// Candidate stems of a word: the word itself plus each single suffix strip
/// (s, es, ed, ing, d) leaving at least two characters.
std::vector<std::string> stem_variants(const std::string& word);
double concept_coverage(std::span<const EvalRecord> corpus);

using FactParser = std::function<std::optional<Fact>(const Tokens&)>;
/// Fraction of records whose parsed prediction is one of the gold facts.
double relation_accuracy(std::span<const EvalRecord> corpus, const FactParser& parse);

struct MetricBlock {
    double bleu4 = 0.0;
    double rouge_l = 0.0;
    double cider_d = 0.0;
    double coverage = 0.0;
    std::optional<double> relation_acc;
    std::size_t n = 0;

    std::string to_json() const;
};

MetricBlock score_corpus(std::span<const EvalRecord> corpus, const FactParser* parse = nullptr);

} // namespace more
