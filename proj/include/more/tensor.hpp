// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace more::nn {

using Shape = std::vector<std::size_t>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

/// Dense row-major tensor of doubles. Rank 1 tensors behave as a single row
/// wherever a matrix is expected.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    static Tensor scalar(double value);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    std::size_t rows() const { return shape_.size() >= 2 ? shape_[0] : 1; }
    std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool value) { requires_grad_ = value; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& storage() { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double item() const;

    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }

    MatrixMap mat() { return {data_.data(), Eigen::Index(rows()), Eigen::Index(cols())}; }
    ConstMatrixMap mat() const { return {data_.data(), Eigen::Index(rows()), Eigen::Index(cols())}; }

    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  private:
    Shape shape_;
    std::vector<double> data_;
    bool requires_grad_ = false;
};

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Boolean mask over (query, key) pairs; `true` means the key is visible.
struct AttentionMask {
    enum class Kind { none, causal, explicit_allowed };
    Kind kind = Kind::none;
    std::vector<std::uint8_t> allowed;  // row-major [s_q x s_k] when explicit

    static AttentionMask none() { return {}; }
    /// Query i sees keys j <= i + (s_k - s_q), i.e. queries are aligned to the tail of the keys.
    static AttentionMask causal() { return {Kind::causal, {}}; }
    static AttentionMask from(std::vector<std::uint8_t> allowed) {
        return {Kind::explicit_allowed, std::move(allowed)};
    }

    bool visible(std::size_t i, std::size_t j, std::size_t s_q, std::size_t s_k) const;
};

/// Numerically stable softmax along `axis` (negative counts from the end).
Tensor softmax(const Tensor& x, int axis = -1);

/// Scaled dot-product attention with heads split along the feature axis.
/// When `probs` is given it receives per-head weights, laid out [heads][s_q][s_k].
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                            const AttentionMask& mask = AttentionMask::none(),
                            std::vector<double>* probs = nullptr);

Tensor matmul(const Tensor& a, const Tensor& b);

/// Per-row layer norm without affine terms.
Tensor layer_norm_rows(const Tensor& x, double eps = 1e-5);

double gelu(double x);
double gelu_grad(double x);

constexpr double kLayerNormEps = 1e-5;

} // namespace more::nn
