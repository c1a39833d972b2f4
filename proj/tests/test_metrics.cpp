// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "more/metrics.hpp"
#include "more/vocab.hpp"

using namespace more;

namespace {

EvalRecord rec(const std::string& pred, std::vector<std::string> refs, std::vector<std::string> concepts = {}) {
    EvalRecord r;
    r.prediction = tokenize(pred);
    for (const auto& s : refs) r.references.push_back(tokenize(s));
    r.concepts = std::move(concepts);
    return r;
}

// Straight-line CIDEr-D: tf-idf vectors per n, clipped cosine, Gaussian
// length penalty, mean over n and over references, times ten.
double cider_oracle_record(const std::vector<EvalRecord>& corpus, std::size_t index) {
    using Gram = std::vector<std::string>;
    auto grams = [](const Tokens& t, std::size_t n) {
        std::map<Gram, double> out;
        for (std::size_t i = 0; i + n <= t.size(); ++i) out[Gram(t.begin() + long(i), t.begin() + long(i + n))] += 1.0;
        return out;
    };
    std::map<Gram, double> df;
    for (const auto& r : corpus) {
        std::set<Gram> seen;
        for (const auto& ref : r.references) {
            for (std::size_t n = 1; n <= 4; ++n) {
                for (const auto& [g, c] : grams(ref, n)) seen.insert(g);
            }
        }
        for (const auto& g : seen) df[g] += 1.0;
    }
    const double log_docs = std::log(double(corpus.size()));
    auto weights = [&](const Tokens& t, std::size_t n) {
        auto v = grams(t, n);
        for (auto& [g, c] : v) c *= log_docs - std::log(std::max(1.0, df.count(g) ? df[g] : 0.0));
        return v;
    };
    const EvalRecord& r = corpus[index];
    double total = 0.0;
    for (const auto& ref : r.references) {
        double per_n = 0.0;
        for (std::size_t n = 1; n <= 4; ++n) {
            const auto h = weights(r.prediction, n);
            const auto g = weights(ref, n);
            double dot = 0.0, nh = 0.0, ng = 0.0;
            for (const auto& [k, x] : h) {
                nh += x * x;
                if (g.count(k)) dot += std::min(x, g.at(k)) * g.at(k);
            }
            for (const auto& [k, x] : g) ng += x * x;
            double val = (nh > 0 && ng > 0) ? dot / (std::sqrt(nh) * std::sqrt(ng)) : 0.0;
            const double delta = double(r.prediction.size()) - double(ref.size());
            val *= std::exp(-delta * delta / (2.0 * 36.0));
            per_n += val;
        }
        total += per_n / 4.0;
    }
    return 10.0 * total / double(r.references.size());
}

} // namespace

TEST_CASE("BLEU perfect, disjoint and hand-computed") {
    const std::vector<EvalRecord> same{rec("the dog chases the ball", {"the dog chases the ball"})};
    CHECK(bleu4(same) == doctest::Approx(1.0).epsilon(1e-12));
    const std::vector<EvalRecord> disjoint{rec("x y z w", {"the dog chases the ball"})};
    CHECK(bleu4(disjoint) == 0.0);
    const std::vector<EvalRecord> cat{rec("the cat sat on the mat", {"the cat sat on a mat"})};
    const double expected = std::pow(5.0 / 6 * 3.0 / 5 * 2.0 / 4 * 1.0 / 3, 0.25);
    CHECK(std::abs(bleu4(cat) - expected) < 1e-12);
    CHECK(std::abs(bleu4(cat) - 0.5372) < 1e-4);
}

TEST_CASE("BLEU clips to the max reference count and uses the closest length") {
    // "the the the the": unigram clip is 2 from the second reference.
    const std::vector<EvalRecord> c{rec("the the the the", {"the cat", "the the dog"})};
    CHECK(bleu4(c) == 0.0);  // no matching 4-gram
    const std::vector<EvalRecord> shorter{rec("a b c d", {"a b c d e f g h", "a b c d e"})};
    CHECK(std::abs(bleu4(shorter) - std::exp(1.0 - 5.0 / 4.0)) < 1e-12);
    const std::vector<EvalRecord> empty{rec("", {"a b c d"})};
    CHECK(bleu4(empty) == 0.0);
    CHECK(bleu4_diagnostic(rec("a b c x", {"a b c d"})) > 0.0);
}

TEST_CASE("ROUGE-L") {
    const std::vector<EvalRecord> same{rec("a b c d", {"a b c d"})};
    CHECK(rouge_l(same) == doctest::Approx(1.0).epsilon(1e-12));
    const std::vector<EvalRecord> disjoint{rec("a b", {"c d"})};
    CHECK(rouge_l(disjoint) == 0.0);
    const std::vector<EvalRecord> lcs{rec("a b c d", {"a c d e"})};
    CHECK(std::abs(rouge_l(lcs) - 0.75) < 1e-12);
    // P = 3/3, R = 3/6: F = (1 + b^2) P R / (R + b^2 P)
    const std::vector<EvalRecord> uneven{rec("a b c", {"a x b y c z", "q"})};
    const double b2 = 1.44, p = 1.0, r = 0.5;
    CHECK(std::abs(rouge_l(uneven) - (1 + b2) * p * r / (r + b2 * p)) < 1e-12);
}

TEST_CASE("CIDEr-D perfect match and disjoint") {
    const std::vector<EvalRecord> c{rec("red fox jumps high today", {"red fox jumps high today"}),
                                    rec("blue whale swims deep", {"green frog sits still"}),
                                    rec("old man reads books", {"young girl writes letters"})};
    std::vector<double> per;
    cider_d(c, &per);
    REQUIRE(per.size() == 3);
    CHECK(std::abs(per[0] - 10.0) < 1e-9);
    CHECK(per[1] == 0.0);
    CHECK(per[2] == 0.0);
}

TEST_CASE("CIDEr-D matches a straight-line oracle") {
    const std::vector<EvalRecord> c{
        rec("the dog chases the ball in the park", {"a dog chases a ball in the park", "the dog runs after the ball"}),
        rec("a cat sleeps on the mat", {"the cat sleeps on a mat", "a cat naps on the mat near the door"}),
        rec("the kid kicks a ball", {"the kid kicks the ball in the yard"}),
    };
    std::vector<double> per;
    const double corpus = cider_d(c, &per);
    double mean = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const double o = cider_oracle_record(c, i);
        CHECK(std::abs(per[i] - o) < 1e-9);
        mean += o / double(c.size());
    }
    CHECK(std::abs(corpus - mean) < 1e-9);
}

TEST_CASE("concept coverage with stems") {
    const std::vector<EvalRecord> a{rec("the dog runs", {"x"}, {"dog", "run"})};
    CHECK(concept_coverage(a) == 1.0);
    const std::vector<EvalRecord> b{rec("a dog sleeps", {"x"}, {"dog", "frisbee"})};
    CHECK(concept_coverage(b) == 0.5);
    const std::vector<EvalRecord> c{rec("", {"x"}, {"dog"})};
    CHECK(concept_coverage(c) == 0.0);
    const std::vector<EvalRecord> d{rec("she danced and watches", {"x"}, {"dance", "watch"})};
    CHECK(concept_coverage(d) == 1.0);
    const auto v = stem_variants("runs");
    CHECK(std::find(v.begin(), v.end(), "run") != v.end());
    CHECK(std::find(v.begin(), v.end(), "runs") != v.end());
    CHECK(stem_variants("is") == std::vector<std::string>{"is"});
}

TEST_CASE("relation accuracy through a parser") {
    const FactParser parse = [](const Tokens& t) -> std::optional<Fact> {
        if (t.size() != 3) return std::nullopt;
        return Fact{t[0], t[1], t[2]};
    };
    std::vector<EvalRecord> c{rec("dog chases ball", {"x"}), rec("dog eats ball", {"x"}), rec("nonsense", {"x"}),
                              rec("cat holds box", {"x"})};
    c[0].gold_facts = {{"dog", "chases", "ball"}};
    c[1].gold_facts = {{"dog", "chases", "ball"}};
    c[2].gold_facts = {{"dog", "chases", "ball"}};
    c[3].gold_facts = {{"cat", "holds", "box"}};
    CHECK(relation_accuracy(c, parse) == 0.5);

    const MetricBlock m = score_corpus(c, &parse);
    CHECK(m.n == 4);
    REQUIRE(m.relation_acc.has_value());
    CHECK(*m.relation_acc == 0.5);
    CHECK(m.to_json().find("\"relation_acc\":0.5") != std::string::npos);
    CHECK_FALSE(score_corpus(c).relation_acc.has_value());
}

TEST_CASE("duplicating a record moves corpus scores toward it") {
    const EvalRecord good = rec("the dog chases the ball", {"the dog chases the ball"});
    const EvalRecord bad = rec("a cat sat", {"the dog chases the ball"});
    const std::vector<EvalRecord> one{good, bad}, two{good, bad, good};
    CHECK(rouge_l(two) > rouge_l(one));
    CHECK(bleu4(two) >= bleu4(one));
    CHECK(rouge_l(two) <= 1.0);
}
