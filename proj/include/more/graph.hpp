// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "more/tensor.hpp"

namespace more::nn {

/// A named leaf that survives across graphs. `grad` accumulates over every
/// graph the parameter took part in until `zero_grad()`.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Tensor v, bool train = true);

    void zero_grad();
};

/// Stable-ordered view over parameters owned elsewhere.
using ParameterRefs = std::vector<Parameter*>;

/// FNV-1a over names, shapes and raw value bytes.
std::uint64_t parameter_hash(std::span<const Parameter* const> params);
std::uint64_t parameter_hash(const ParameterRefs& params);
std::string hash_hex(std::uint64_t hash);

struct Var {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t id = npos;
    bool valid() const { return id != npos; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order, so backward is a single reverse sweep.
class Graph {
  public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var input(Tensor value);
    /// Leaf that references `p` without copying; tracked when `p.trainable`.
    Var param(Parameter& p);
    /// Untracked reference leaf, for frozen weights.
    Var constant(const Parameter& p);

    const Tensor& value(Var v) const {
        const Node& n = nodes_.at(v.id);
        return n.ref ? *n.ref : n.value;
    }
    bool tracks_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
    /// Gradient of a tracked node after backward(); zeros if nothing reached it.
    Tensor grad(Var v) const;
    std::size_t size() const { return nodes_.size(); }

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double factor);
    Var add_bias(Var a, Var bias);
    Var gelu(Var a);
    Var layer_norm(Var x, Var gain, Var bias, double eps = kLayerNormEps);
    Var softmax(Var a);
    Var attention(Var q, Var k, Var v, std::size_t n_heads, AttentionMask mask = AttentionMask::none());
    Var gather_rows(Var table, std::span<const int> ids);
    Var concat_rows(std::span<const Var> parts);
    Var slice_rows(Var a, std::size_t begin, std::size_t count);
    /// Sum over rows of -log softmax(logits)[target]; negative targets are skipped.
    Var cross_entropy_sum(Var logits, std::span<const int> targets);
    Var sum(Var a);

    /// Propagates d(seed * loss) to every tracked node and accumulates into
    /// bound parameters. May run once per graph.
    void backward(Var loss, double seed = 1.0);

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        bool has_grad = false;
        std::function<void()> backward;
        Parameter* param = nullptr;
        const Tensor* ref = nullptr;
    };

    Var push(Tensor value, bool needs_grad, std::function<void()> backward = {});
    Tensor& grad_ref(std::size_t id);
    bool any_needs(std::initializer_list<Var> vars) const;

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

} // namespace more::nn
