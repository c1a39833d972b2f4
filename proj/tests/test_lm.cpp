// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "more/error.hpp"
#include "more/lm.hpp"
#include "more/synth.hpp"

using namespace more;
using nn::Graph;
using nn::Tensor;
using nn::Var;

namespace {

LmConfig tiny_config() {
    LmConfig c;
    c.d_model = 8;
    c.n_layers = 2;
    c.n_heads = 2;
    c.context = 32;
    c.ffn_mult = 2;
    c.seed = 5;
    return c;
}

Vocabulary tiny_vocab() { return Vocabulary(std::vector<std::string>{"dog", "chases", "ball", "the", "park"}); }

Tensor random_prefix(std::size_t rows, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.3);
    Tensor t({rows, d});
    for (double& x : t.storage()) x = n(rng);
    return t;
}

// Scalar re-implementation of the decoder: explicit loops, no Eigen, no graph.
using Vec = std::vector<double>;

Vec ln(const Vec& x, const nn::Parameter& g, const nn::Parameter& b) {
    double mean = 0.0, var = 0.0;
    for (double v : x) mean += v;
    mean /= double(x.size());
    for (double v : x) var += (v - mean) * (v - mean);
    var /= double(x.size());
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * g.value[i] + b.value[i];
    return out;
}

Vec affine(const Vec& x, const nn::Parameter& w, const nn::Parameter* b) {
    const std::size_t in = w.value.shape()[0], outn = w.value.shape()[1];
    Vec out(outn, 0.0);
    for (std::size_t j = 0; j < outn; ++j) {
        for (std::size_t i = 0; i < in; ++i) out[j] += x[i] * w.value.at(i, j);
        if (b) out[j] += b->value[j];
    }
    return out;
}

double gelu_tanh(double x) { return 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x))); }

// log-softmax of the final-position logits.
Vec naive_next_log_probs(const FrozenLM& lm, const Tensor& prefix, const std::vector<int>& tokens) {
    const std::size_t d = lm.d_model(), H = lm.config().n_heads, dh = d / H;
    std::vector<Vec> x;
    for (std::size_t r = 0; r < prefix.rows(); ++r) x.emplace_back(prefix.row(r).begin(), prefix.row(r).end());
    for (int t : tokens) x.emplace_back(lm.tok_emb.value.row(t).begin(), lm.tok_emb.value.row(t).end());
    for (std::size_t p = 0; p < x.size(); ++p) {
        for (std::size_t c = 0; c < d; ++c) x[p][c] += lm.pos_emb.value.at(p, c);
    }
    for (const auto& b : lm.blocks) {
        std::vector<Vec> q, k, v;
        for (const auto& row : x) {
            const Vec h = ln(row, b.ln1_g, b.ln1_b);
            q.push_back(affine(h, b.wq, nullptr));
            k.push_back(affine(h, b.wk, nullptr));
            v.push_back(affine(h, b.wv, nullptr));
        }
        std::vector<Vec> next = x;
        for (std::size_t i = 0; i < x.size(); ++i) {
            Vec attn(d, 0.0);
            for (std::size_t h = 0; h < H; ++h) {
                Vec s(i + 1);
                double mx = -1e300, z = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) dot += q[i][h * dh + c] * k[j][h * dh + c];
                    s[j] = dot / std::sqrt(double(dh));
                    mx = std::max(mx, s[j]);
                }
                for (double& e : s) z += (e = std::exp(e - mx));
                for (std::size_t j = 0; j <= i; ++j) {
                    for (std::size_t c = 0; c < dh; ++c) attn[h * dh + c] += s[j] / z * v[j][h * dh + c];
                }
            }
            const Vec o = affine(attn, b.wo, &b.bo);
            for (std::size_t c = 0; c < d; ++c) next[i][c] += o[c];
            Vec f = affine(ln(next[i], b.ln2_g, b.ln2_b), b.w1, &b.b1);
            for (double& e : f) e = gelu_tanh(e);
            const Vec f2 = affine(f, b.w2, &b.b2);
            for (std::size_t c = 0; c < d; ++c) next[i][c] += f2[c];
        }
        x = std::move(next);
    }
    const Vec logits = affine(ln(x.back(), lm.lnf_g, lm.lnf_b), lm.head, nullptr);
    double mx = -1e300, z = 0.0;
    for (double l : logits) mx = std::max(mx, l);
    for (double l : logits) z += std::exp(l - mx);
    Vec out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - mx - std::log(z);
    return out;
}

std::vector<PretrainDocument> world_corpus(std::size_t n, std::uint64_t seed, Vocabulary* vocab_out = nullptr) {
    WorldSizes sizes;
    sizes.n_entities = 8;
    sizes.n_relations = 4;
    sizes.n_locations = 3;
    sizes.n_adjectives = 2;
    sizes.n_adverbs = 2;
    sizes.n_pairs = 6;
    sizes.templates_per_relation = 2;
    const WorldSpec w = generate_world(3, sizes);
    const Vocabulary vocab = w.vocabulary();
    if (vocab_out) *vocab_out = vocab;
    std::mt19937_64 rng(seed);
    return sample_pretrain_corpus(w, vocab, n, {}, rng);
}

} // namespace

TEST_CASE("embed_tokens is a table lookup") {
    const FrozenLM lm(tiny_config(), tiny_vocab());
    const std::vector<int> ids{Vocabulary::kPad, 7, 7};
    const Tensor e = embed_tokens(lm, ids);
    CHECK(e.shape() == nn::Shape{3, 8});
    for (std::size_t c = 0; c < 8; ++c) {
        CHECK(e.at(0, c) == lm.tok_emb.value.at(Vocabulary::kPad, c));
        CHECK(e.at(1, c) == e.at(2, c));
    }
    CHECK_THROWS_AS(embed_tokens(lm, std::vector<int>{999}), DataError);
}

TEST_CASE("uniform head gives ln V loss on one target") {
    FrozenLM lm(tiny_config(), tiny_vocab());
    std::fill(lm.head.value.storage().begin(), lm.head.value.storage().end(), 0.0);
    Graph g;
    const std::vector<int> tokens{Vocabulary::kBos}, targets{Vocabulary::kEos};
    const LmOutput out = lm_forward(g, lm, Var{}, tokens, std::span<const int>(targets));
    CHECK(std::abs(g.value(out.loss).item() - std::log(double(lm.vocab().size()))) < 0.01);
}

TEST_CASE("empty prefix matches a prefix-free call") {
    const FrozenLM lm(tiny_config(), tiny_vocab());
    const std::vector<int> tokens{1, 7, 8, 9};
    Graph a, b;
    const Var la = lm_forward(a, lm, Var{}, tokens).logits;
    const Var lb = lm_forward(b, lm, Var{}, tokens).logits;
    CHECK(std::equal(a.value(la).data().begin(), a.value(la).data().end(), b.value(lb).data().begin()));
}

TEST_CASE("EOS loss equals a hand-rolled scalar forward") {
    const FrozenLM lm(tiny_config(), tiny_vocab());
    const Tensor prefix = random_prefix(3, 8, 21);
    const std::vector<int> tokens{Vocabulary::kBos, 7, Vocabulary::kSep, 9, Vocabulary::kEq};
    std::vector<int> targets(tokens.size(), -1);
    targets.back() = Vocabulary::kEos;
    Graph g;
    const LmOutput out = lm_forward(g, lm, g.input(prefix), tokens, std::span<const int>(targets));
    const auto naive = naive_next_log_probs(lm, prefix, tokens);
    CHECK(out.n_targets == 1);
    CHECK(std::abs(g.value(out.loss).item() + naive[Vocabulary::kEos]) < 1e-10);

    LmSession session(lm, &prefix);
    session.feed(tokens);
    const auto cached = session.next_log_probs();
    for (std::size_t v = 0; v < cached.size(); ++v) CHECK(std::abs(cached[v] - naive[v]) < 1e-10);
}

TEST_CASE("logits are causal") {
    const FrozenLM lm(tiny_config(), tiny_vocab());
    const Tensor prefix = random_prefix(2, 8, 4);
    std::vector<int> a{1, 7, 8, 9, 10}, b{1, 7, 8, 11, 7};
    Graph ga, gb;
    const Tensor la = ga.value(lm_forward(ga, lm, ga.input(prefix), a).logits);
    const Tensor lb = gb.value(lm_forward(gb, lm, gb.input(prefix), b).logits);
    for (std::size_t t = 0; t < 3; ++t) {
        for (std::size_t c = 0; c < la.cols(); ++c) CHECK(la.at(t, c) == lb.at(t, c));
    }
    bool differs = false;
    for (std::size_t c = 0; c < la.cols(); ++c) differs |= la.at(3, c) != lb.at(3, c);
    CHECK(differs);
}

TEST_CASE("gradients reach the soft prefix but never the LM") {
    FrozenLM lm(tiny_config(), tiny_vocab());
    lm.freeze();
    nn::Parameter prefix("prefix", random_prefix(4, 8, 8));
    prefix.zero_grad();
    const auto hash = lm.hash();
    Graph g;
    const std::vector<int> tokens{1, 7, 8}, targets{-1, 8, 9};
    const LmOutput out = lm_forward(g, lm, g.param(prefix), tokens, std::span<const int>(targets));
    g.backward(out.loss);
    double norm = 0.0;
    for (double x : prefix.grad.data()) norm += x * x;
    CHECK(norm > 0.0);
    for (const auto* p : lm.parameters()) {
        for (double x : p->grad.data()) CHECK(x == 0.0);
    }
    CHECK(lm.hash() == hash);
}

TEST_CASE("lm_forward rejects overflow and misaligned targets") {
    const FrozenLM lm(tiny_config(), tiny_vocab());
    std::vector<int> long_tokens(40, 7);
    Graph g;
    CHECK_THROWS_AS(lm_forward(g, lm, Var{}, long_tokens), Error);
    const std::vector<int> tokens{1, 7}, targets{8};
    CHECK_THROWS_AS(lm_forward(g, lm, Var{}, tokens, std::span<const int>(targets)), ShapeError);
}

TEST_CASE("lm_source layout") {
    const Vocabulary v = tiny_vocab();
    const auto src = lm_source(v, {"dog", "ball"});
    CHECK(src == std::vector<int>{Vocabulary::kBos, v.id("dog"), Vocabulary::kSep, v.id("ball"), Vocabulary::kEq});
    CHECK(lm_source(v, {}) == std::vector<int>{Vocabulary::kBos});
}

TEST_CASE("pretraining memorizes a single sentence") {
    const Vocabulary v = tiny_vocab();
    PretrainDocument doc{{}, {Vocabulary::kBos}, {v.id("the"), v.id("dog"), v.id("chases"), v.id("the"), v.id("ball"),
                                                  Vocabulary::kEos}};
    PretrainConfig pc;
    pc.steps = 200;
    pc.batch_size = 4;
    pc.lr = 1e-2;
    pc.max_prefix = 0;
    std::vector<double> curve;
    const std::vector<PretrainDocument> corpus{doc};
    const FrozenLM lm = pretrain_lm(corpus, tiny_config(), pc, v, &curve);
    CHECK(curve.size() == 200);
    CHECK(curve.back() < 0.05);
    CHECK(lm.frozen());
}

TEST_CASE("pretraining is deterministic and resumable") {
    Vocabulary vocab;
    const auto corpus = world_corpus(200, 1, &vocab);
    PretrainConfig pc;
    pc.steps = 20;
    pc.batch_size = 4;
    pc.max_prefix = 8;
    const FrozenLM a = pretrain_lm(corpus, tiny_config(), pc, vocab);
    const FrozenLM b = pretrain_lm(corpus, tiny_config(), pc, vocab);
    CHECK(a.hash() == b.hash());

    const auto dir = std::filesystem::temp_directory_path() / "more_lm_test";
    std::filesystem::create_directories(dir);
    auto state = pretrain_init(tiny_config(), pc, vocab);
    pretrain_run(*state, corpus, pc, 9);
    save_pretrain_state(*state, (dir / "state.json").string());
    auto resumed = load_pretrain_state((dir / "state.json").string(), pc);
    CHECK(resumed->step == 9);
    pretrain_run(*resumed, corpus, pc, pc.steps);
    FrozenLM c(*resumed->lm);
    c.freeze();
    CHECK(c.hash() == a.hash());

    save_lm(a, (dir / "lm.json").string());
    const FrozenLM loaded = load_lm((dir / "lm.json").string());
    CHECK(loaded.hash() == a.hash());
    CHECK(loaded.frozen());
    CHECK(loaded.vocab() == a.vocab());
    std::filesystem::remove_all(dir);
}

TEST_CASE("pretrained model beats random init on held-out documents") {
    Vocabulary vocab;
    const auto corpus = world_corpus(5000, 2, &vocab);
    const auto held_out = world_corpus(300, 99);
    PretrainConfig pc;
    pc.steps = 150;
    pc.batch_size = 16;
    pc.max_prefix = 8;
    LmConfig lc = tiny_config();
    lc.d_model = 16;
    const FrozenLM trained = pretrain_lm(corpus, lc, pc, vocab);
    const FrozenLM random(lc, vocab);
    const double a = lm_eval_loss(trained, held_out, pc.max_prefix, 5);
    const double b = lm_eval_loss(random, held_out, pc.max_prefix, 5);
    CHECK(a < b);
}
