// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "more/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <map>
#include <set>

#include "json.hpp"
#include "more/error.hpp"

namespace more {

namespace {

constexpr std::size_t kMaxN = 4;
using NGram = std::vector<std::string>;
using Counts = std::map<NGram, double>;

Counts ngram_counts(const Tokens& tokens, std::size_t n) {
    Counts out;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        out[NGram(tokens.begin() + std::ptrdiff_t(i), tokens.begin() + std::ptrdiff_t(i + n))] += 1.0;
    }
    return out;
}

std::size_t closest_ref_length(const EvalRecord& r) {
    const auto c = double(r.prediction.size());
    std::size_t best = r.references.front().size();
    for (const auto& ref : r.references) {
        const double d = std::abs(double(ref.size()) - c), db = std::abs(double(best) - c);
        if (d < db || (d == db && ref.size() < best)) best = ref.size();
    }
    return best;
}

void require_refs(const EvalRecord& r) {
    if (r.references.empty()) throw DataError("record '" + r.id + "' has no references");
}

double lcs(const Tokens& a, const Tokens& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return double(prev[b.size()]);
}

struct CiderVec {
    std::array<Counts, kMaxN> vec;
    std::array<double, kMaxN> norm{};
    double length = 0.0;
};

CiderVec cider_vec(const Tokens& tokens, const std::map<NGram, double>& df, double log_n) {
    CiderVec out;
    for (std::size_t n = 1; n <= kMaxN; ++n) {
        for (const auto& [g, tf] : ngram_counts(tokens, n)) {
            const auto it = df.find(g);
            const double d = std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
            const double v = tf * (log_n - d);
            out.vec[n - 1][g] = v;
            out.norm[n - 1] += v * v;
        }
        out.norm[n - 1] = std::sqrt(out.norm[n - 1]);
    }
    out.length = double(tokens.size());
    return out;
}

std::array<double, kMaxN> cider_sim(const CiderVec& hyp, const CiderVec& ref, double sigma) {
    std::array<double, kMaxN> val{};
    const double delta = hyp.length - ref.length;
    for (std::size_t n = 0; n < kMaxN; ++n) {
        for (const auto& [g, v] : hyp.vec[n]) {
            const auto it = ref.vec[n].find(g);
            if (it != ref.vec[n].end()) val[n] += std::min(v, it->second) * it->second;
        }
        if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) val[n] /= hyp.norm[n] * ref.norm[n];
        val[n] *= std::exp(-(delta * delta) / (2.0 * sigma * sigma));
    }
    return val;
}

} // namespace

double bleu4(std::span<const EvalRecord> corpus) {
    if (corpus.empty()) throw DataError("bleu4 on an empty corpus");
    std::array<double, kMaxN> matched{}, total{};
    double c = 0.0, r = 0.0;
    for (const auto& rec : corpus) {
        require_refs(rec);
        c += double(rec.prediction.size());
        r += double(closest_ref_length(rec));
        for (std::size_t n = 1; n <= kMaxN; ++n) {
            Counts max_ref;
            for (const auto& ref : rec.references) {
                for (const auto& [g, k] : ngram_counts(ref, n)) max_ref[g] = std::max(max_ref[g], k);
            }
            for (const auto& [g, k] : ngram_counts(rec.prediction, n)) {
                const auto it = max_ref.find(g);
                matched[n - 1] += std::min(k, it == max_ref.end() ? 0.0 : it->second);
                total[n - 1] += k;
            }
        }
    }
    double log_p = 0.0;
    for (std::size_t n = 0; n < kMaxN; ++n) {
        if (matched[n] == 0.0 || total[n] == 0.0) return 0.0;
        log_p += std::log(matched[n] / total[n]) / double(kMaxN);
    }
    const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
    return bp * std::exp(log_p);
}

double bleu4_diagnostic(const EvalRecord& rec) {
    require_refs(rec);
    if (rec.prediction.empty()) return 0.0;
    double log_p = 0.0;
    for (std::size_t n = 1; n <= kMaxN; ++n) {
        Counts max_ref;
        for (const auto& ref : rec.references) {
            for (const auto& [g, k] : ngram_counts(ref, n)) max_ref[g] = std::max(max_ref[g], k);
        }
        double m = 0.0, t = 0.0;
        for (const auto& [g, k] : ngram_counts(rec.prediction, n)) {
            const auto it = max_ref.find(g);
            m += std::min(k, it == max_ref.end() ? 0.0 : it->second);
            t += k;
        }
        if (n > 1) {
            m += 1.0;
            t += 1.0;
        }
        if (m == 0.0) return 0.0;
        log_p += std::log(m / t) / double(kMaxN);
    }
    const double c = double(rec.prediction.size()), r = double(closest_ref_length(rec));
    return (c > r ? 1.0 : std::exp(1.0 - r / c)) * std::exp(log_p);
}

double rouge_l(std::span<const EvalRecord> corpus, double beta) {
    if (corpus.empty()) return 0.0;
    double total = 0.0;
    for (const auto& rec : corpus) {
        require_refs(rec);
        double best = 0.0;
        for (const auto& ref : rec.references) {
            const double l = lcs(rec.prediction, ref);
            if (l == 0.0) continue;
            const double p = l / double(rec.prediction.size()), r = l / double(ref.size());
            const double b2 = beta * beta;
            best = std::max(best, (1.0 + b2) * p * r / (r + b2 * p));
        }
        total += best;
    }
    return total / double(corpus.size());
}

double cider_d(std::span<const EvalRecord> corpus, std::vector<double>* per_record, double sigma) {
    if (corpus.empty()) throw DataError("cider_d on an empty corpus");
    if (corpus.size() == 1) std::cerr << "warning: CIDEr-D on a single record; idf is degenerate\n";
    std::map<NGram, double> df;
    for (const auto& rec : corpus) {
        require_refs(rec);
        std::set<NGram> seen;
        for (const auto& ref : rec.references) {
            for (std::size_t n = 1; n <= kMaxN; ++n) {
                for (const auto& kv : ngram_counts(ref, n)) seen.insert(kv.first);
            }
        }
        for (const auto& g : seen) df[g] += 1.0;
    }
    const double log_n = std::log(double(corpus.size()));
    if (per_record) per_record->clear();
    double total = 0.0;
    for (const auto& rec : corpus) {
        const CiderVec hyp = cider_vec(rec.prediction, df, log_n);
        std::array<double, kMaxN> acc{};
        for (const auto& ref : rec.references) {
            const auto s = cider_sim(hyp, cider_vec(ref, df, log_n), sigma);
            for (std::size_t n = 0; n < kMaxN; ++n) acc[n] += s[n];
        }
        double mean = 0.0;
        for (double v : acc) mean += v / double(kMaxN);
        const double score = 10.0 * mean / double(rec.references.size());
        if (per_record) per_record->push_back(score);
        total += score;
    }
    return total / double(corpus.size());
}

std::vector<std::string> stem_variants(const std::string& word) {
    std::vector<std::string> out{word};
    for (const std::string suffix : {"s", "es", "ed", "ing", "d"}) {
        if (word.size() >= suffix.size() + 2 && word.compare(word.size() - suffix.size(), suffix.size(), suffix) == 0) {
            out.push_back(word.substr(0, word.size() - suffix.size()));
        }
    }
    return out;
}

double concept_coverage(std::span<const EvalRecord> corpus) {
    std::size_t hit = 0, total = 0;
    for (const auto& rec : corpus) {
        std::set<std::string> pred;
        for (const auto& t : rec.prediction) {
            for (auto& s : stem_variants(t)) pred.insert(std::move(s));
        }
        for (const auto& c : rec.concepts) {
            ++total;
            const auto variants = stem_variants(c);
            if (std::any_of(variants.begin(), variants.end(), [&](const auto& v) { return pred.count(v) > 0; })) ++hit;
        }
    }
    return total ? double(hit) / double(total) : 0.0;
}

double relation_accuracy(std::span<const EvalRecord> corpus, const FactParser& parse) {
    if (corpus.empty()) return 0.0;
    std::size_t correct = 0;
    for (const auto& rec : corpus) {
        const auto fact = parse(rec.prediction);
        if (fact && std::find(rec.gold_facts.begin(), rec.gold_facts.end(), *fact) != rec.gold_facts.end()) ++correct;
    }
    return double(correct) / double(corpus.size());
}

std::string MetricBlock::to_json() const {
    nlohmann::ordered_json j;
    j["bleu4"] = bleu4;
    j["rouge_l"] = rouge_l;
    j["cider_d"] = cider_d;
    j["coverage"] = coverage;
    j["relation_acc"] = relation_acc ? nlohmann::ordered_json(*relation_acc) : nlohmann::ordered_json(nullptr);
    j["n"] = n;
    return j.dump();
}

MetricBlock score_corpus(std::span<const EvalRecord> corpus, const FactParser* parse) {
    MetricBlock m;
    m.n = corpus.size();
    if (corpus.empty()) return m;
    m.bleu4 = bleu4(corpus);
    m.rouge_l = rouge_l(corpus);
    m.cider_d = corpus.size() >= 2 ? cider_d(corpus) : 0.0;
    m.coverage = concept_coverage(corpus);
    if (parse) m.relation_acc = relation_accuracy(corpus, *parse);
    return m;
}

} // namespace more
