// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "doctest.h"
#include "more/error.hpp"
#include "more/tensor.hpp"

using more::nn::AttentionMask;
using more::nn::Tensor;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Tensor t({r, c});
    for (double& x : t.storage()) x = n(rng);
    return t;
}

// Straight-line attention: every head handled by explicit index arithmetic.
Tensor naive_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
    const std::size_t sq = q.rows(), sk = k.rows(), d = q.cols(), dh = d / heads;
    Tensor out({sq, d});
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < sq; ++i) {
            std::vector<double> s(sk);
            double mx = -1e300;
            for (std::size_t j = 0; j < sk; ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < dh; ++c) dot += q.at(i, h * dh + c) * k.at(j, h * dh + c);
                s[j] = dot / std::sqrt(double(dh));
                mx = std::max(mx, s[j]);
            }
            double z = 0.0;
            for (double& x : s) z += (x = std::exp(x - mx));
            for (std::size_t c = 0; c < dh; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < sk; ++j) acc += s[j] / z * v.at(j, h * dh + c);
                out.at(i, h * dh + c) = acc;
            }
        }
    }
    return out;
}

} // namespace

TEST_CASE("softmax closed forms") {
    auto a = more::nn::softmax(Tensor({2}, {0.0, 0.0}), -1);
    CHECK(a[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(a[1] == doctest::Approx(0.5).epsilon(1e-12));

    auto b = more::nn::softmax(Tensor({2}, {1000.0, 1000.0}), -1);
    CHECK(b.all_finite());
    CHECK(std::abs(b[0] - 0.5) < 1e-12);

    auto c = more::nn::softmax(Tensor({2}, {0.0, std::log(3.0)}), -1);
    CHECK(std::abs(c[0] - 0.25) < 1e-12);
    CHECK(std::abs(c[1] - 0.75) < 1e-12);
}

TEST_CASE("softmax rows sum to one along either axis") {
    std::mt19937_64 rng(3);
    const Tensor x = random_matrix(5, 7, rng);
    for (int axis : {0, 1}) {
        const Tensor s = more::nn::softmax(x, axis);
        if (axis == 1) {
            for (std::size_t r = 0; r < 5; ++r) {
                double total = 0.0;
                for (double v : s.row(r)) total += v;
                CHECK(std::abs(total - 1.0) < 1e-12);
            }
        } else {
            for (std::size_t c = 0; c < 7; ++c) {
                double total = 0.0;
                for (std::size_t r = 0; r < 5; ++r) total += s.at(r, c);
                CHECK(std::abs(total - 1.0) < 1e-12);
            }
        }
    }
}

TEST_CASE("tensor construction validates shapes") {
    CHECK_THROWS_AS(Tensor({2, 0}), more::ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), more::ShapeError);
    CHECK(Tensor::scalar(3.5).item() == 3.5);
}

TEST_CASE("attention with a single key returns that value row") {
    std::mt19937_64 rng(1);
    const Tensor q = random_matrix(3, 8, rng), k = random_matrix(1, 8, rng), v = random_matrix(1, 8, rng);
    const Tensor out = more::nn::multi_head_attention(q, k, v, 2);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(out.at(i, c) - v.at(0, c)) < 1e-15);
    }
}

TEST_CASE("attention with zero queries averages the values") {
    std::mt19937_64 rng(2);
    const Tensor q({2, 8}), k = random_matrix(3, 8, rng), v = random_matrix(3, 8, rng);
    const Tensor out = more::nn::multi_head_attention(q, k, v, 4);
    for (std::size_t c = 0; c < 8; ++c) {
        const double mean = (v.at(0, c) + v.at(1, c) + v.at(2, c)) / 3.0;
        CHECK(std::abs(out.at(0, c) - mean) < 1e-14);
        CHECK(std::abs(out.at(1, c) - mean) < 1e-14);
    }
}

TEST_CASE("attention matches a naive implementation") {
    std::mt19937_64 rng(4);
    const Tensor q = random_matrix(4, 8, rng), k = random_matrix(4, 8, rng), v = random_matrix(4, 8, rng);
    const Tensor fast = more::nn::multi_head_attention(q, k, v, 2);
    const Tensor slow = naive_attention(q, k, v, 2);
    for (std::size_t i = 0; i < fast.size(); ++i) CHECK(std::abs(fast[i] - slow[i]) < 1e-12);
}

TEST_CASE("attention probabilities are distributions, including under a causal mask") {
    std::mt19937_64 rng(5);
    const Tensor q = random_matrix(5, 8, rng), k = random_matrix(5, 8, rng), v = random_matrix(5, 8, rng);
    for (const auto& mask : {AttentionMask::none(), AttentionMask::causal()}) {
        std::vector<double> probs;
        more::nn::multi_head_attention(q, k, v, 2, mask, &probs);
        for (std::size_t row = 0; row < 2 * 5; ++row) {
            double total = 0.0;
            for (std::size_t j = 0; j < 5; ++j) {
                CHECK(probs[row * 5 + j] >= 0.0);
                total += probs[row * 5 + j];
            }
            CHECK(std::abs(total - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("attention errors") {
    std::mt19937_64 rng(6);
    const Tensor q = random_matrix(2, 8, rng), k = random_matrix(3, 8, rng), v = random_matrix(3, 8, rng);
    CHECK_THROWS_AS(more::nn::multi_head_attention(q, k, v, 3), more::ShapeError);
    CHECK_THROWS_AS(more::nn::multi_head_attention(q, random_matrix(3, 6, rng), v, 2), more::ShapeError);
    CHECK_THROWS_AS(more::nn::multi_head_attention(q, k, random_matrix(2, 8, rng), 2), more::ShapeError);
    CHECK_THROWS_AS(more::nn::multi_head_attention(q, Tensor(), Tensor(), 2), more::ShapeError);
}

TEST_CASE("attention is bit-for-bit deterministic") {
    std::mt19937_64 rng(7);
    const Tensor q = random_matrix(4, 8, rng), k = random_matrix(6, 8, rng), v = random_matrix(6, 8, rng);
    const Tensor a = more::nn::multi_head_attention(q, k, v, 4);
    const Tensor b = more::nn::multi_head_attention(q, k, v, 4);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}
