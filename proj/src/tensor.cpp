// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "more/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "more/error.hpp"

namespace more::nn {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "x" : "") << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor::Tensor(Shape shape, bool requires_grad)
    : shape_(std::move(shape)), data_(shape_size(shape_), 0.0), requires_grad_(requires_grad) {
    for (auto d : shape_) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : shape_(std::move(shape)), data_(std::move(data)), requires_grad_(requires_grad) {
    for (auto d : shape_) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
    if (shape_size(shape_) != data_.size()) {
        throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool AttentionMask::visible(std::size_t i, std::size_t j, std::size_t s_q, std::size_t s_k) const {
    switch (kind) {
    case Kind::none:
        return true;
    case Kind::causal:
        return j + s_q <= i + s_k;
    case Kind::explicit_allowed:
        return allowed[i * s_k + j] != 0;
    }
    return true;
}

Tensor softmax(const Tensor& x, int axis) {
    if (x.rank() == 0) throw ShapeError("softmax of an empty tensor");
    const int rank = static_cast<int>(x.rank());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError("softmax axis out of range");
    const std::size_t n = x.shape()[axis];
    std::size_t inner = 1;
    for (int d = axis + 1; d < rank; ++d) inner *= x.shape()[d];
    const std::size_t outer = x.size() / (n * inner);

    Tensor out(x.shape());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, x[base + i * inner]);
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double e = std::exp(x[base + i * inner] - mx);
                out[base + i * inner] = e;
                total += e;
            }
            for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= total;
        }
    }
    return out;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                            const AttentionMask& mask, std::vector<double>* probs) {
    const std::size_t s_q = q.rows(), s_k = k.rows(), d = q.cols();
    if (s_k == 0 || k.empty()) throw ShapeError("attention over an empty key set");
    if (k.cols() != d || v.cols() != d) {
        throw ShapeError("attention width mismatch: q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", v " + shape_string(v.shape()));
    }
    if (v.rows() != s_k) throw ShapeError("attention keys and values differ in length");
    if (n_heads == 0 || d % n_heads != 0) {
        throw ShapeError("width " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) +
                         " heads");
    }
    if (mask.kind == AttentionMask::Kind::explicit_allowed && mask.allowed.size() != s_q * s_k) {
        throw ShapeError("attention mask does not match [s_q x s_k]");
    }
    const std::size_t dh = d / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor out({s_q, d});
    if (probs) probs->assign(n_heads * s_q * s_k, 0.0);

    const auto Q = q.mat();
    const auto K = k.mat();
    const auto V = v.mat();
    auto O = out.mat();
    RowMatrix scores(s_q, s_k);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const auto off = Eigen::Index(h * dh);
        scores.noalias() = Q.middleCols(off, dh) * K.middleCols(off, dh).transpose();
        for (std::size_t i = 0; i < s_q; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < s_k; ++j) {
                if (mask.visible(i, j, s_q, s_k)) {
                    scores(i, j) *= scale;
                    mx = std::max(mx, scores(i, j));
                }
            }
            if (!std::isfinite(mx)) throw ShapeError("attention row with no visible key");
            double total = 0.0;
            for (std::size_t j = 0; j < s_k; ++j) {
                const double e = mask.visible(i, j, s_q, s_k) ? std::exp(scores(i, j) - mx) : 0.0;
                scores(i, j) = e;
                total += e;
            }
            scores.row(i) /= total;
        }
        O.middleCols(off, dh).noalias() = scores * V.middleCols(off, dh);
        if (probs) {
            std::copy(scores.data(), scores.data() + s_q * s_k, probs->data() + h * s_q * s_k);
        }
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    }
    Tensor out({a.rows(), b.cols()});
    out.mat().noalias() = a.mat() * b.mat();
    return out;
}

Tensor layer_norm_rows(const Tensor& x, double eps) {
    Tensor out(x.shape());
    const std::size_t n = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto in = x.row(r);
        double mean = 0.0;
        for (double value : in) mean += value;
        mean /= double(n);
        double var = 0.0;
        for (double value : in) var += (value - mean) * (value - mean);
        var /= double(n);
        const double inv = 1.0 / std::sqrt(var + eps);
        auto dst = out.row(r);
        for (std::size_t c = 0; c < n; ++c) dst[c] = (in[c] - mean) * inv;
    }
    return out;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
} // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_grad(double x) {
    const double u = kGeluC * (x + kGeluA * x * x * x);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

} // namespace more::nn
