// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "more/graph.hpp"

#include <cmath>
#include <cstring>
#include <iomanip>
#include <sstream>

#include "more/error.hpp"

namespace more::nn {

Parameter::Parameter(std::string n, Tensor v, bool train)
    : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}

void Parameter::zero_grad() {
    if (!grad.same_shape(value)) grad = Tensor(value.shape());
    std::fill(grad.storage().begin(), grad.storage().end(), 0.0);
}

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_mix(std::uint64_t& h, const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
}

} // namespace

std::uint64_t parameter_hash(std::span<const Parameter* const> params) {
    std::uint64_t h = kFnvOffset;
    for (const Parameter* p : params) {
        fnv_mix(h, p->name.data(), p->name.size());
        for (std::size_t d : p->value.shape()) {
            const auto dim = static_cast<std::uint64_t>(d);
            fnv_mix(h, &dim, sizeof dim);
        }
        const auto values = p->value.data();
        fnv_mix(h, values.data(), values.size() * sizeof(double));
    }
    return h;
}

std::uint64_t parameter_hash(const ParameterRefs& params) {
    std::vector<const Parameter*> view(params.begin(), params.end());
    return parameter_hash(std::span<const Parameter* const>(view));
}

std::string hash_hex(std::uint64_t hash) {
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << hash;
    return out.str();
}

Var Graph::push(Tensor value, bool needs_grad, std::function<void()> backward) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    if (needs_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

Tensor& Graph::grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Tensor((n.ref ? *n.ref : n.value).shape());
        n.has_grad = true;
    }
    return n.grad;
}

bool Graph::any_needs(std::initializer_list<Var> vars) const {
    for (Var v : vars) {
        if (nodes_.at(v.id).needs_grad) return true;
    }
    return false;
}

Tensor Graph::grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.has_grad) return n.grad;
    return Tensor(value(v).shape());
}

Var Graph::input(Tensor value) {
    const bool needs = value.requires_grad();
    return push(std::move(value), needs);
}

Var Graph::param(Parameter& p) {
    Var v = push(Tensor(), p.trainable);
    nodes_[v.id].ref = &p.value;
    nodes_[v.id].param = p.trainable ? &p : nullptr;
    return v;
}

Var Graph::constant(const Parameter& p) {
    Var v = push(Tensor(), false);
    nodes_[v.id].ref = &p.value;
    return v;
}

Var Graph::matmul(Var a, Var b) {
    Tensor out = nn::matmul(value(a), value(b));
    return push(std::move(out), any_needs({a, b}), [this, a, b, id = nodes_.size()] {
        const auto dC = nodes_[id].grad.mat();
        if (nodes_[a.id].needs_grad) grad_ref(a.id).mat().noalias() += dC * value(b).mat().transpose();
        if (nodes_[b.id].needs_grad) grad_ref(b.id).mat().noalias() += value(a).mat().transpose() * dC;
    });
}

Var Graph::add(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    if (!x.same_shape(y)) {
        throw ShapeError("add " + shape_string(x.shape()) + " + " + shape_string(y.shape()));
    }
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
    return push(std::move(out), any_needs({a, b}), [this, a, b, id = nodes_.size()] {
        const Tensor& g = nodes_[id].grad;
        for (Var v : {a, b}) {
            if (!nodes_[v.id].needs_grad) continue;
            Tensor& dst = grad_ref(v.id);
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        }
    });
}

Var Graph::mul(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    if (!x.same_shape(y)) {
        throw ShapeError("mul " + shape_string(x.shape()) + " * " + shape_string(y.shape()));
    }
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
    return push(std::move(out), any_needs({a, b}), [this, a, b, id = nodes_.size()] {
        const Tensor& g = nodes_[id].grad;
        if (nodes_[a.id].needs_grad) {
            Tensor& dst = grad_ref(a.id);
            const Tensor& other = value(b);
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * other[i];
        }
        if (nodes_[b.id].needs_grad) {
            Tensor& dst = grad_ref(b.id);
            const Tensor& other = value(a);
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * other[i];
        }
    });
}

Var Graph::scale(Var a, double factor) {
    Tensor out = value(a);
    for (double& x : out.storage()) x *= factor;
    return push(std::move(out), any_needs({a}), [this, a, factor, id = nodes_.size()] {
        const Tensor& g = nodes_[id].grad;
        Tensor& dst = grad_ref(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
    });
}

Var Graph::add_bias(Var a, Var bias) {
    const Tensor& x = value(a);
    const Tensor& b = value(bias);
    if (b.size() != x.cols()) {
        throw ShapeError("bias " + shape_string(b.shape()) + " for input " + shape_string(x.shape()));
    }
    Tensor out = x;
    const std::size_t n = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < n; ++c) out[r * n + c] += b[c];
    }
    return push(std::move(out), any_needs({a, bias}), [this, a, bias, n, id = nodes_.size()] {
        const Tensor& g = nodes_[id].grad;
        if (nodes_[a.id].needs_grad) {
            Tensor& dst = grad_ref(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        }
        if (nodes_[bias.id].needs_grad) {
            Tensor& dst = grad_ref(bias.id);
            for (std::size_t i = 0; i < g.size(); ++i) dst[i % n] += g[i];
        }
    });
}

Var Graph::gelu(Var a) {
    Tensor out = value(a);
    for (double& x : out.storage()) x = nn::gelu(x);
    return push(std::move(out), any_needs({a}), [this, a, id = nodes_.size()] {
        const Tensor& g = nodes_[id].grad;
        const Tensor& x = value(a);
        Tensor& dst = grad_ref(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * gelu_grad(x[i]);
    });
}

Var Graph::layer_norm(Var x, Var gain, Var bias, double eps) {
    const Tensor& in = value(x);
    const std::size_t n = in.cols(), rows = in.rows();
    if (value(gain).size() != n || value(bias).size() != n) {
        throw ShapeError("layer norm affine terms do not match width " + std::to_string(n));
    }
    Tensor normed = layer_norm_rows(in, eps);
    std::vector<double> inv(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto row = in.row(r);
        double mean = 0.0, var = 0.0;
        for (double v : row) mean += v;
        mean /= double(n);
        for (double v : row) var += (v - mean) * (v - mean);
        inv[r] = 1.0 / std::sqrt(var / double(n) + eps);
    }
    Tensor out(in.shape());
    const Tensor& g = value(gain);
    const Tensor& b = value(bias);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < n; ++c) out[r * n + c] = normed[r * n + c] * g[c] + b[c];
    }
    return push(std::move(out), any_needs({x, gain, bias}),
                [this, x, gain, bias, n, rows, normed = std::move(normed), inv = std::move(inv),
                 id = nodes_.size()] {
                    const Tensor& dy = nodes_[id].grad;
                    const Tensor& g = value(gain);
                    if (nodes_[gain.id].needs_grad) {
                        Tensor& dg = grad_ref(gain.id);
                        for (std::size_t i = 0; i < dy.size(); ++i) dg[i % n] += dy[i] * normed[i];
                    }
                    if (nodes_[bias.id].needs_grad) {
                        Tensor& db = grad_ref(bias.id);
                        for (std::size_t i = 0; i < dy.size(); ++i) db[i % n] += dy[i];
                    }
                    if (nodes_[x.id].needs_grad) {
                        Tensor& dx = grad_ref(x.id);
                        std::vector<double> dxhat(n);
                        for (std::size_t r = 0; r < rows; ++r) {
                            double s1 = 0.0, s2 = 0.0;
                            for (std::size_t c = 0; c < n; ++c) {
                                dxhat[c] = dy[r * n + c] * g[c];
                                s1 += dxhat[c];
                                s2 += dxhat[c] * normed[r * n + c];
                            }
                            for (std::size_t c = 0; c < n; ++c) {
                                dx[r * n + c] += inv[r] / double(n) *
                                                 (double(n) * dxhat[c] - s1 - normed[r * n + c] * s2);
                            }
                        }
                    }
                });
}

Var Graph::softmax(Var a) {
    Tensor out = nn::softmax(value(a), -1);
    return push(out, any_needs({a}), [this, a, id = nodes_.size()] {
        const Tensor& y = nodes_[id].value;
        const Tensor& dy = nodes_[id].grad;
        Tensor& dx = grad_ref(a.id);
        const std::size_t n = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < n; ++c) dot += dy[r * n + c] * y[r * n + c];
            for (std::size_t c = 0; c < n; ++c) dx[r * n + c] += y[r * n + c] * (dy[r * n + c] - dot);
        }
    });
}

Var Graph::attention(Var q, Var k, Var v, std::size_t n_heads, AttentionMask mask) {
    std::vector<double> probs;
    Tensor out = multi_head_attention(value(q), value(k), value(v), n_heads, mask, &probs);
    return push(std::move(out), any_needs({q, k, v}),
                [this, q, k, v, n_heads, probs = std::move(probs), id = nodes_.size()] {
                    const Tensor& Qt = value(q);
                    const Tensor& Kt = value(k);
                    const Tensor& Vt = value(v);
                    const std::size_t s_q = Qt.rows(), s_k = Kt.rows(), d = Qt.cols();
                    const std::size_t dh = d / n_heads;
                    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
                    const auto dO = nodes_[id].grad.mat();
                    const bool need_q = nodes_[q.id].needs_grad;
                    const bool need_k = nodes_[k.id].needs_grad;
                    const bool need_v = nodes_[v.id].needs_grad;
                    RowMatrix dP(s_q, s_k), dS(s_q, s_k);
                    for (std::size_t h = 0; h < n_heads; ++h) {
                        const auto off = Eigen::Index(h * dh);
                        const ConstMatrixMap P(probs.data() + h * s_q * s_k, Eigen::Index(s_q),
                                               Eigen::Index(s_k));
                        const auto dOh = dO.middleCols(off, dh);
                        if (need_v) {
                            grad_ref(v.id).mat().middleCols(off, dh).noalias() += P.transpose() * dOh;
                        }
                        if (!need_q && !need_k) continue;
                        dP.noalias() = dOh * Vt.mat().middleCols(off, dh).transpose();
                        for (std::size_t i = 0; i < s_q; ++i) {
                            const double dot = P.row(i).dot(dP.row(i));
                            for (std::size_t j = 0; j < s_k; ++j) {
                                dS(i, j) = P(i, j) * (dP(i, j) - dot) * scale;
                            }
                        }
                        if (need_q) {
                            grad_ref(q.id).mat().middleCols(off, dh).noalias() +=
                                dS * Kt.mat().middleCols(off, dh);
                        }
                        if (need_k) {
                            grad_ref(k.id).mat().middleCols(off, dh).noalias() +=
                                dS.transpose() * Qt.mat().middleCols(off, dh);
                        }
                    }
                });
}

Var Graph::gather_rows(Var table, std::span<const int> ids) {
    const Tensor& t = value(table);
    if (ids.empty()) throw ShapeError("gather of zero rows");
    const std::size_t n = t.cols();
    Tensor out({ids.size(), n});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || std::size_t(ids[i]) >= t.rows()) {
            throw ShapeError("row id " + std::to_string(ids[i]) + " outside table of " +
                             std::to_string(t.rows()) + " rows");
        }
        const auto src = t.row(std::size_t(ids[i]));
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return push(std::move(out), any_needs({table}),
                [this, table, n, ids = std::vector<int>(ids.begin(), ids.end()), id = nodes_.size()] {
                    const Tensor& g = nodes_[id].grad;
                    Tensor& dst = grad_ref(table.id);
                    for (std::size_t i = 0; i < ids.size(); ++i) {
                        for (std::size_t c = 0; c < n; ++c) dst[std::size_t(ids[i]) * n + c] += g[i * n + c];
                    }
                });
}

Var Graph::concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const std::size_t n = value(parts[0]).cols();
    std::size_t rows = 0;
    bool needs = false;
    for (Var p : parts) {
        if (value(p).cols() != n) throw ShapeError("concat rows with differing widths");
        rows += value(p).rows();
        needs = needs || nodes_[p.id].needs_grad;
    }
    std::vector<double> data;
    data.reserve(rows * n);
    for (Var p : parts) {
        const auto src = value(p).data();
        data.insert(data.end(), src.begin(), src.end());
    }
    return push(Tensor({rows, n}, std::move(data)), needs,
                [this, parts = std::vector<Var>(parts.begin(), parts.end()), id = nodes_.size()] {
                    const Tensor& g = nodes_[id].grad;
                    std::size_t offset = 0;
                    for (Var p : parts) {
                        const std::size_t count = value(p).size();
                        if (nodes_[p.id].needs_grad) {
                            Tensor& dst = grad_ref(p.id);
                            for (std::size_t i = 0; i < count; ++i) dst[i] += g[offset + i];
                        }
                        offset += count;
                    }
                });
}

Var Graph::slice_rows(Var a, std::size_t begin, std::size_t count) {
    const Tensor& x = value(a);
    if (count == 0 || begin + count > x.rows()) throw ShapeError("row slice out of range");
    const std::size_t n = x.cols();
    std::vector<double> data(x.data().begin() + std::ptrdiff_t(begin * n),
                             x.data().begin() + std::ptrdiff_t((begin + count) * n));
    return push(Tensor({count, n}, std::move(data)), any_needs({a}), [this, a, begin, n, id = nodes_.size()] {
        const Tensor& g = nodes_[id].grad;
        Tensor& dst = grad_ref(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) dst[begin * n + i] += g[i];
    });
}

Var Graph::cross_entropy_sum(Var logits, std::span<const int> targets) {
    const Tensor& z = value(logits);
    if (targets.size() != z.rows()) {
        throw ShapeError("targets (" + std::to_string(targets.size()) + ") do not align with logits rows (" +
                         std::to_string(z.rows()) + ")");
    }
    const std::size_t V = z.cols();
    Tensor probs = nn::softmax(z, -1);
    double total = 0.0;
    for (std::size_t r = 0; r < targets.size(); ++r) {
        if (targets[r] < 0) continue;
        if (std::size_t(targets[r]) >= V) throw ShapeError("target id outside vocabulary");
        total -= std::log(probs[r * V + std::size_t(targets[r])]);
    }
    return push(Tensor::scalar(total), any_needs({logits}),
                [this, logits, V, probs = std::move(probs),
                 targets = std::vector<int>(targets.begin(), targets.end()), id = nodes_.size()] {
                    const double g = nodes_[id].grad[0];
                    Tensor& dst = grad_ref(logits.id);
                    for (std::size_t r = 0; r < targets.size(); ++r) {
                        if (targets[r] < 0) continue;
                        for (std::size_t c = 0; c < V; ++c) dst[r * V + c] += g * probs[r * V + c];
                        dst[r * V + std::size_t(targets[r])] -= g;
                    }
                });
}

Var Graph::sum(Var a) {
    double total = 0.0;
    for (double x : value(a).data()) total += x;
    return push(Tensor::scalar(total), any_needs({a}), [this, a, id = nodes_.size()] {
        const double g = nodes_[id].grad[0];
        for (double& x : grad_ref(a.id).storage()) x += g;
    });
}

void Graph::backward(Var loss, double seed) {
    if (backward_done_) throw Error("backward already ran on this graph; build a new graph");
    const Node& root = nodes_.at(loss.id);
    if (value(loss).size() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_string(value(loss).shape()));
    if (!root.needs_grad) throw Error("loss is detached: no trainable leaf reaches it");
    backward_done_ = true;
    grad_ref(loss.id)[0] = seed;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad) continue;
        if (n.backward) n.backward();
        if (n.param) {
            if (!n.param->grad.same_shape(n.param->value)) n.param->zero_grad();
            auto& dst = n.param->grad.storage();
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += n.grad[j];
        }
    }
}

} // namespace more::nn
