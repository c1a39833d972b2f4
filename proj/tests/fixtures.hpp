// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>

#include "more/experiment.hpp"

namespace more::testing {

inline WorldSizes small_sizes() {
    WorldSizes s;
    s.n_entities = 8;
    s.n_relations = 4;
    s.n_locations = 3;
    s.n_adjectives = 2;
    s.n_adverbs = 2;
    s.templates_per_relation = 2;
    s.n_pairs = 8;
    return s;
}

/// A tiny world with its dataset, an untrained LM and an encoder.
struct SmallSetup {
    WorldSpec world;
    Vocabulary vocab;
    Dataset data;
    FrozenLM lm;
    RetrievalEncoder encoder;

    explicit SmallSetup(std::size_t n_train = 32, std::size_t d_lm = 16, std::size_t d_enc = 8)
        : world(generate_world(21, small_sizes())),
          vocab(world.vocabulary()),
          data(make_data(world, n_train)),
          lm(make_lm(vocab, d_lm)),
          encoder(make_encoder(world, d_enc, 99)) {}

    static Dataset make_data(const WorldSpec& w, std::size_t n_train) {
        std::mt19937_64 rng(22);
        return sample_dataset(w, n_train, 4, 4, rng);
    }
    static FrozenLM make_lm(const Vocabulary& v, std::size_t d) {
        LmConfig c;
        c.d_model = d;
        c.n_layers = 1;
        c.n_heads = 2;
        c.context = 64;
        c.ffn_mult = 2;
        c.seed = 23;
        FrozenLM lm(c, v);
        lm.freeze();
        return lm;
    }

    TrainConfig train_config(std::size_t d_enc = 8) const {
        TrainConfig t;
        t.T = 10;
        t.total_steps = 20;
        t.batch_size = 4;
        t.l_task = 3;
        t.M_used = 3;
        t.N_used = 3;
        t.integrator.d_enc = d_enc;
        t.integrator.d_int = 8;
        t.integrator.l_q = 3;
        t.integrator.n_heads = 2;
        t.integrator.n_concept_slots = 3;
        return t;
    }
};

} // namespace more::testing
