// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "more/integrator.hpp"

#include <cmath>
#include <random>

#include "more/error.hpp"

namespace more {

using nn::Graph;
using nn::Parameter;
using nn::Tensor;
using nn::Var;

namespace {

Tensor normal_tensor(nn::Shape shape, double stddev, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& x : t.storage()) x = dist(rng);
    return t;
}

Tensor filled(std::size_t n, double value) {
    Tensor t({n});
    std::fill(t.storage().begin(), t.storage().end(), value);
    return t;
}

Parameter linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    return Parameter(name, normal_tensor({in, out}, 1.0 / std::sqrt(double(in)), rng));
}

template <class Params, class Bind>
Var selector_impl(Graph& g, Params& params, Bind bind, Var e_c, Var e_ra) {
    const auto& cfg = params.config();
    const Tensor& ra = g.value(e_ra);
    if (ra.empty() || ra.rows() == 0) throw ShapeError("selector: empty retrieval concatenation");
    if (ra.cols() != cfg.d_enc || g.value(e_c).cols() != cfg.d_enc) {
        throw ShapeError("selector: d_enc mismatch (expected " + std::to_string(cfg.d_enc) + ")");
    }
    Var x = e_c;
    for (auto& layer : params.layers) {
        Var h = g.layer_norm(x, bind(layer.ln_self_g), bind(layer.ln_self_b));
        Var s = g.attention(g.matmul(h, bind(layer.wq)), g.matmul(h, bind(layer.wk)), g.matmul(h, bind(layer.wv)),
                            cfg.n_heads);
        Var hs = g.layer_norm(s, bind(layer.ln_cross_g), bind(layer.ln_cross_b));
        Var c = g.add(s, g.attention(g.matmul(hs, bind(layer.mq)), g.matmul(e_ra, bind(layer.mk)),
                                     g.matmul(e_ra, bind(layer.mv)), cfg.n_heads));
        Var hc = g.layer_norm(c, bind(layer.ln_ffn_g), bind(layer.ln_ffn_b));
        Var f = g.gelu(g.add_bias(g.matmul(hc, bind(layer.f1)), bind(layer.f1_b)));
        x = g.add(x, g.add_bias(g.matmul(f, bind(layer.f2)), bind(layer.f2_b)));
    }
    return x;
}

template <class Params, class Bind>
Var former_impl(Graph& g, Params& params, Bind bind, Var h2) {
    const auto& cfg = params.config();
    const Tensor& h = g.value(h2);
    if (h.empty()) throw ShapeError("former: empty selector output");
    if (h.cols() != cfg.d_enc) throw ShapeError("former: d_enc mismatch (expected " + std::to_string(cfg.d_enc) + ")");
    auto& f = params.former;
    Var kv = g.layer_norm(h2, bind(f.ln_kv_g), bind(f.ln_kv_b));
    Var p = g.attention(g.matmul(bind(f.query), bind(f.mq)), g.matmul(kv, bind(f.mk)), g.matmul(kv, bind(f.mv)),
                        cfg.n_heads);
    Var hp = g.layer_norm(p, bind(f.ln_ffn_g), bind(f.ln_ffn_b));
    Var ff = g.gelu(g.add_bias(g.matmul(hp, bind(f.f1)), bind(f.f1_b)));
    p = g.add(p, g.add_bias(g.matmul(ff, bind(f.f2)), bind(f.f2_b)));
    return g.add_bias(g.matmul(p, bind(f.out)), bind(f.out_b));
}

template <class Params, class Bind>
Var integrate_impl(Graph& g, Params& params, Bind bind, const RetrievalEncoder& encoder,
                   const std::vector<std::string>& concepts, const RetrievalSet& retrieval) {
    if (encoder.d_enc() != params.config().d_enc) throw ShapeError("integrate: encoder width != d_enc");
    if (retrieval.empty()) throw DataError("integrate: empty retrieval set");
    Var e_ra = g.input(encoder.encode_all(retrieval));
    Var e_c = params.config().learnable_concepts ? bind(params.concept_slots)
                                                 : g.input(encoder.embed_concepts(concepts).embeddings);
    return former_impl(g, params, bind, selector_impl(g, params, bind, e_c, e_ra));
}

auto tracked(Graph& g) {
    return [&g](Parameter& p) { return g.param(p); };
}
auto frozen(Graph& g) {
    return [&g](const Parameter& p) { return g.constant(p); };
}

} // namespace

IntegratorParams::IntegratorParams(IntegratorConfig config) : config_(config) {
    const auto& c = config_;
    if (!c.d_enc || !c.d_int || !c.d_lm || !c.l_q || !c.n_heads || c.d_int % c.n_heads != 0) {
        throw ConfigError("integrator: widths must be positive and d_int divisible by n_heads");
    }
    if (c.learnable_concepts && c.n_concept_slots == 0) throw ConfigError("integrator: n_concept_slots must be > 0");
    std::mt19937_64 rng(c.seed);
    const std::size_t ff = c.d_int * c.ffn_mult;
    for (std::size_t l = 0; l < kSelectorDepth; ++l) {
        const std::string p = "selector" + std::to_string(l) + ".";
        auto& L = layers[l];
        L.ln_self_g = Parameter(p + "ln_self_g", filled(c.d_enc, 1.0));
        L.ln_self_b = Parameter(p + "ln_self_b", filled(c.d_enc, 0.0));
        L.wq = linear(p + "wq", c.d_enc, c.d_int, rng);
        L.wk = linear(p + "wk", c.d_enc, c.d_int, rng);
        L.wv = linear(p + "wv", c.d_enc, c.d_int, rng);
        L.ln_cross_g = Parameter(p + "ln_cross_g", filled(c.d_int, 1.0));
        L.ln_cross_b = Parameter(p + "ln_cross_b", filled(c.d_int, 0.0));
        L.mq = linear(p + "mq", c.d_int, c.d_int, rng);
        L.mk = linear(p + "mk", c.d_enc, c.d_int, rng);
        L.mv = linear(p + "mv", c.d_enc, c.d_int, rng);
        L.ln_ffn_g = Parameter(p + "ln_ffn_g", filled(c.d_int, 1.0));
        L.ln_ffn_b = Parameter(p + "ln_ffn_b", filled(c.d_int, 0.0));
        L.f1 = linear(p + "f1", c.d_int, ff, rng);
        L.f1_b = Parameter(p + "f1_b", filled(ff, 0.0));
        L.f2 = linear(p + "f2", ff, c.d_enc, rng);
        L.f2_b = Parameter(p + "f2_b", filled(c.d_enc, 0.0));
    }
    auto& F = former;
    F.query = Parameter("former.query", normal_tensor({c.l_q, c.d_int}, c.query_std, rng));
    F.ln_kv_g = Parameter("former.ln_kv_g", filled(c.d_enc, 1.0));
    F.ln_kv_b = Parameter("former.ln_kv_b", filled(c.d_enc, 0.0));
    F.mq = linear("former.mq", c.d_int, c.d_int, rng);
    F.mk = linear("former.mk", c.d_enc, c.d_int, rng);
    F.mv = linear("former.mv", c.d_enc, c.d_int, rng);
    F.ln_ffn_g = Parameter("former.ln_ffn_g", filled(c.d_int, 1.0));
    F.ln_ffn_b = Parameter("former.ln_ffn_b", filled(c.d_int, 0.0));
    F.f1 = linear("former.f1", c.d_int, ff, rng);
    F.f1_b = Parameter("former.f1_b", filled(ff, 0.0));
    F.f2 = linear("former.f2", ff, c.d_int, rng);
    F.f2_b = Parameter("former.f2_b", filled(c.d_int, 0.0));
    F.out = linear("former.out", c.d_int, c.d_lm, rng);
    F.out_b = Parameter("former.out_b", filled(c.d_lm, 0.0));
    if (c.learnable_concepts) {
        concept_slots = Parameter("concept_slots", normal_tensor({c.n_concept_slots, c.d_enc}, 1.0, rng));
    }
}

nn::ParameterRefs IntegratorParams::parameters() {
    nn::ParameterRefs out;
    for (auto& L : layers) {
        for (Parameter* p : {&L.ln_self_g, &L.ln_self_b, &L.wq, &L.wk, &L.wv, &L.ln_cross_g, &L.ln_cross_b, &L.mq,
                             &L.mk, &L.mv, &L.ln_ffn_g, &L.ln_ffn_b, &L.f1, &L.f1_b, &L.f2, &L.f2_b}) {
            out.push_back(p);
        }
    }
    auto& F = former;
    for (Parameter* p : {&F.query, &F.ln_kv_g, &F.ln_kv_b, &F.mq, &F.mk, &F.mv, &F.ln_ffn_g, &F.ln_ffn_b, &F.f1,
                         &F.f1_b, &F.f2, &F.f2_b, &F.out, &F.out_b}) {
        out.push_back(p);
    }
    if (config_.learnable_concepts) out.push_back(&concept_slots);
    return out;
}

std::vector<const Parameter*> IntegratorParams::parameters() const {
    auto refs = const_cast<IntegratorParams*>(this)->parameters();
    return {refs.begin(), refs.end()};
}

std::uint64_t IntegratorParams::hash() const {
    const auto ps = parameters();
    return nn::parameter_hash(std::span<const Parameter* const>(ps));
}

std::size_t IntegratorParams::parameter_count() const {
    std::size_t n = 0;
    for (const Parameter* p : parameters()) n += p->value.size();
    return n;
}

void IntegratorParams::set_output_bias(std::span<const double> row) {
    if (row.size() != config_.d_lm) throw ShapeError("output bias width != d_lm");
    std::copy(row.begin(), row.end(), former.out_b.value.storage().begin());
}

Var selector_forward(Graph& g, IntegratorParams& params, Var e_c, Var e_ra) {
    return selector_impl(g, params, tracked(g), e_c, e_ra);
}

Var former_forward(Graph& g, IntegratorParams& params, Var h2) { return former_impl(g, params, tracked(g), h2); }

Var integrate(Graph& g, IntegratorParams& params, const RetrievalEncoder& encoder,
              const std::vector<std::string>& concepts, const RetrievalSet& retrieval) {
    return integrate_impl(g, params, tracked(g), encoder, concepts, retrieval);
}

Tensor selector_forward(const IntegratorParams& params, const Tensor& e_c, const Tensor& e_ra) {
    Graph g;
    return g.value(selector_impl(g, params, frozen(g), g.input(e_c), g.input(e_ra)));
}

Tensor former_forward(const IntegratorParams& params, const Tensor& h2) {
    Graph g;
    return g.value(former_impl(g, params, frozen(g), g.input(h2)));
}

Tensor integrate(const IntegratorParams& params, const RetrievalEncoder& encoder,
                 const std::vector<std::string>& concepts, const RetrievalSet& retrieval) {
    Graph g;
    return g.value(integrate_impl(g, params, frozen(g), encoder, concepts, retrieval));
}

} // namespace more
