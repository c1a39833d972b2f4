// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "doctest.h"
#include "more/decode.hpp"
#include "more/error.hpp"
#include "toy_decoder.hpp"

using namespace more;
using nn::Tensor;
using more::testing::TableState;

namespace {

FrozenLM random_lm(std::uint64_t seed) {
    LmConfig c;
    c.d_model = 16;
    c.n_layers = 1;
    c.n_heads = 2;
    c.context = 48;
    c.seed = seed;
    c.embed_std = 0.8;
    FrozenLM lm(c, Vocabulary(std::vector<std::string>{"a", "b", "c", "d", "e", "f"}));
    lm.freeze();
    return lm;
}

Tensor random_prefix(std::mt19937_64& rng, std::size_t d) {
    std::normal_distribution<double> n(0.0, 1.0);
    Tensor t({2, d});
    for (double& x : t.storage()) x = n(rng);
    return t;
}

} // namespace

TEST_CASE("width 2 solves the toy problem greedy gets wrong") {
    const TableState start(&more::testing::toy_table(), 3);
    const Hypothesis greedy = greedy_decode(start, 0, 3);
    const Hypothesis b2 = beam_search(start, 0, 2, 3);
    const Hypothesis oracle = more::testing::exhaustive_best(start, 3, 0, 3);
    CHECK(greedy.tokens == std::vector<int>{1, 1});
    CHECK(b2.tokens == oracle.tokens);
    CHECK(b2.finished == oracle.finished);
    CHECK(std::abs(b2.score - oracle.score) < 1e-12);
    CHECK(b2.tokens == std::vector<int>{2, 1});
    CHECK(std::abs(b2.score - std::log(0.44 * 0.90 * 0.95)) < 1e-12);
    CHECK(greedy.score < b2.score);
}

TEST_CASE("width 1 equals greedy on random models") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const FrozenLM lm = random_lm(100 + trial / 10);
        const Tensor prefix = random_prefix(rng, 16);
        const std::vector<int> source{Vocabulary::kBos, 7 + int(rng() % 6)};
        const LmDecoderState start(lm, &prefix, source);
        const Hypothesis g = greedy_decode(start, Vocabulary::kEos, 12);
        const Hypothesis b = beam_search(start, Vocabulary::kEos, 1, 12);
        CHECK(g.tokens == b.tokens);
        CHECK(std::abs(g.score - b.score) < 1e-9);
    }
}

TEST_CASE("max_len 1 returns the argmax token") {
    const FrozenLM lm = random_lm(3);
    const std::vector<int> source{Vocabulary::kBos};
    const LmDecoderState start(lm, nullptr, source);
    const auto lp = start.next_log_probs();
    const int argmax = int(std::max_element(lp.begin(), lp.end()) - lp.begin());
    const Hypothesis h = beam_search(start, Vocabulary::kEos, 5, 1);
    if (argmax == Vocabulary::kEos) {
        CHECK(h.tokens.empty());
        CHECK(h.finished);
    } else {
        CHECK(h.tokens == std::vector<int>{argmax});
    }
    CHECK(std::abs(h.score - lp[std::size_t(argmax)]) < 1e-12);
}

TEST_CASE("returned score equals teacher-forced log probability") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const FrozenLM lm = random_lm(200 + trial);
        const Tensor prefix = random_prefix(rng, 16);
        const std::vector<int> source{Vocabulary::kBos, 8};
        const LmDecoderState start(lm, &prefix, source);
        const Hypothesis h = beam_search(start, Vocabulary::kEos, 4, 10);
        CHECK(std::abs(h.score - sequence_log_prob(start, h.tokens, Vocabulary::kEos, h.finished)) < 1e-9);
    }
}

TEST_CASE("wider beams never score worse here") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const FrozenLM lm = random_lm(300 + trial);
        const Tensor prefix = random_prefix(rng, 16);
        const std::vector<int> source{Vocabulary::kBos};
        const LmDecoderState start(lm, &prefix, source);
        double prev = -INFINITY;
        for (std::size_t b = 1; b <= 6; ++b) {
            const double s = beam_search(start, Vocabulary::kEos, b, 8).score;
            CHECK(s >= prev - 1e-12);
            prev = s;
        }
    }
}

TEST_CASE("decoder argument and context checks") {
    const FrozenLM lm = random_lm(1);
    const std::vector<int> source{Vocabulary::kBos};
    const LmDecoderState start(lm, nullptr, source);
    CHECK_THROWS_AS(beam_search(start, Vocabulary::kEos, 0, 5), ConfigError);
    CHECK_THROWS_AS(beam_search(start, Vocabulary::kEos, 2, 0), ConfigError);
    CHECK_THROWS_AS(LmDecoderState(lm, nullptr, std::vector<int>{}), ShapeError);
    const Tensor big({47, 16});
    const Hypothesis h = beam_search(lm, &big, source, 3, 32);
    CHECK(h.tokens.size() <= 1);
    const Tensor too_big({48, 16});
    CHECK_THROWS_AS(beam_search(lm, &too_big, source, 3, 32), Error);
}
