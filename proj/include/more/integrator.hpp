// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "more/encoder.hpp"
#include "more/graph.hpp"

namespace more {

struct IntegratorConfig {
    std::size_t d_enc = 64;
    std::size_t d_int = 64;
    std::size_t d_lm = 128;
    std::size_t l_q = 32;
    std::size_t n_heads = 4;
    std::size_t ffn_mult = 2;
    /// "w/o concept-input" ablation: the Selector starts from a learnable
    /// sequence of `n_concept_slots` rows instead of the concept embeddings.
    bool learnable_concepts = false;
    std::size_t n_concept_slots = 8;
    double query_std = 0.02;
    std::uint64_t seed = 1;
};

struct SelectorLayer {
    nn::Parameter ln_self_g, ln_self_b;
    nn::Parameter wq, wk, wv;        // d_enc -> d_int
    nn::Parameter ln_cross_g, ln_cross_b;
    nn::Parameter mq;                // d_int -> d_int
    nn::Parameter mk, mv;            // d_enc -> d_int
    nn::Parameter ln_ffn_g, ln_ffn_b;
    nn::Parameter f1, f1_b, f2, f2_b;  // d_int -> d_ff -> d_enc
};

struct FormerBlock {
    nn::Parameter query;             // l_q x d_int
    nn::Parameter ln_kv_g, ln_kv_b;
    nn::Parameter mq;                // d_int -> d_int
    nn::Parameter mk, mv;            // d_enc -> d_int
    nn::Parameter ln_ffn_g, ln_ffn_b;
    nn::Parameter f1, f1_b, f2, f2_b;  // d_int -> d_ff -> d_int
    nn::Parameter out, out_b;        // d_int -> d_lm
};

class IntegratorParams {
  public:
    static constexpr std::size_t kSelectorDepth = 2;

    explicit IntegratorParams(IntegratorConfig config);
    IntegratorParams(const IntegratorParams&) = delete;
    IntegratorParams& operator=(const IntegratorParams&) = delete;

    const IntegratorConfig& config() const { return config_; }

    nn::ParameterRefs parameters();
    std::vector<const nn::Parameter*> parameters() const;
    std::uint64_t hash() const;
    std::size_t parameter_count() const;

    /// Sets the output bias, e.g. to an LM embedding row so that an untrained
    /// prompt looks like padding to the LM.
    void set_output_bias(std::span<const double> row);

    SelectorLayer layers[kSelectorDepth];
    FormerBlock former;
    nn::Parameter concept_slots;  // allocated only with learnable_concepts

  private:
    IntegratorConfig config_;
};

/// h_2 from h_0 = e_c over retrieved rows e_ra: [l_c x d_enc].
nn::Var selector_forward(nn::Graph& g, IntegratorParams& params, nn::Var e_c, nn::Var e_ra);
/// Fixed-length prompt [l_q x d_lm] from h_2.
nn::Var former_forward(nn::Graph& g, IntegratorParams& params, nn::Var h2);
/// encode -> select -> form, with every Integrator parameter tracked.
nn::Var integrate(nn::Graph& g, IntegratorParams& params, const RetrievalEncoder& encoder,
                  const std::vector<std::string>& concepts, const RetrievalSet& retrieval);

/// Pure inference variants; parameters enter as constants.
nn::Tensor selector_forward(const IntegratorParams& params, const nn::Tensor& e_c, const nn::Tensor& e_ra);
nn::Tensor former_forward(const IntegratorParams& params, const nn::Tensor& h2);
nn::Tensor integrate(const IntegratorParams& params, const RetrievalEncoder& encoder,
                     const std::vector<std::string>& concepts, const RetrievalSet& retrieval);

} // namespace more
