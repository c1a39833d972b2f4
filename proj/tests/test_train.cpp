// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "more/error.hpp"
#include "more/train.hpp"

using namespace more;
using more::testing::SmallSetup;

TEST_CASE("dropout schedule endpoints and monotonicity") {
    CHECK(std::abs(dropout_probability(0, 2000) - 1.0) < 1e-12);
    CHECK(std::abs(dropout_probability(1000, 2000) - 0.5) < 1e-12);
    CHECK(std::abs(dropout_probability(2000, 2000)) < 1e-12);
    CHECK(std::abs(dropout_probability(3000, 2000)) < 1e-12);
    double prev = 2.0;
    for (std::size_t t = 0; t <= 2400; t += 3) {
        const double p = dropout_probability(t, 2000);
        CHECK(p <= prev);
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
        prev = p;
    }
    CHECK(dropout_probability(5, 0) == 0.0);
}

TEST_CASE("config validation") {
    TrainConfig c;
    c.p_hat = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.T = c.total_steps + 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.M_used = c.N_used = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.mode = TrainMode::baseline_no_ra;
    CHECK_NOTHROW(c.validate());
    CHECK(parse_train_mode(to_string(TrainMode::prepend)) == TrainMode::prepend);
    CHECK_THROWS_AS(parse_train_mode("bogus"), ConfigError);
}

TEST_CASE("batches after the dropout phase ignore the rng") {
    const SmallSetup s;
    TrainConfig cfg = s.train_config();
    const std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5};
    std::mt19937_64 r1(1), r2(999);
    const auto a = build_training_batch(s.data.train, idx, cfg.T, cfg, r1, s.vocab);
    const auto b = build_training_batch(s.data.train, idx, cfg.T + 7, cfg, r2, s.vocab);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        CHECK_FALSE(a[i].dropped);
        CHECK(a[i].source == lm_source(s.vocab, s.data.train[i].concepts));
        CHECK(a[i].source == b[i].source);
        CHECK(a[i].retrieval_owner == i);
        CHECK(a[i].target.back() == Vocabulary::kEos);
    }
}

TEST_CASE("reference choice rotates with the step") {
    const SmallSetup s;
    const TrainConfig cfg = s.train_config();
    std::size_t i = 0;
    while (s.data.train[i].references.size() < 2) ++i;
    const std::vector<std::size_t> idx{i};
    std::mt19937_64 rng(1);
    const auto a = build_training_batch(s.data.train, idx, cfg.T, cfg, rng, s.vocab);
    const auto b = build_training_batch(s.data.train, idx, cfg.T + 1, cfg, rng, s.vocab);
    CHECK(a[0].target != b[0].target);
}

TEST_CASE("noise only follows dropout") {
    const SmallSetup s;
    TrainConfig cfg = s.train_config();
    cfg.T = 1000;
    cfg.total_steps = 1000;
    cfg.p_hat = 0.5;
    std::mt19937_64 rng(5);
    std::size_t dropped = 0, noisy = 0;
    std::vector<std::size_t> idx(10);
    for (std::size_t draw = 0; draw < 1000; ++draw) {
        for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = (draw + k) % s.data.train.size();
        for (const auto& item : build_training_batch(s.data.train, idx, draw, cfg, rng, s.vocab)) {
            dropped += item.dropped;
            noisy += item.noisy;
            if (item.noisy) {
                CHECK(item.dropped);
                CHECK(item.retrieval_owner != item.example);
                CHECK(item.target == std::vector<int>{Vocabulary::kEos});
            }
            if (item.dropped) CHECK(item.source == std::vector<int>{Vocabulary::kBos});
        }
    }
    // Mean p over a full schedule is 1/2, so about 5000 drops and 2500 noise events.
    CHECK(dropped > 4500);
    CHECK(dropped < 5500);
    CHECK(noisy > 2200);
    CHECK(noisy < 2800);
}

TEST_CASE("p_hat = 1 at t = 0 makes every drop noisy") {
    const SmallSetup s;
    TrainConfig cfg = s.train_config();
    cfg.p_hat = 1.0;
    std::mt19937_64 rng(8);
    std::vector<std::size_t> idx(s.data.train.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (const auto& item : build_training_batch(s.data.train, idx, 0, cfg, rng, s.vocab)) {
        CHECK(item.dropped);
        CHECK(item.noisy);
    }
}

TEST_CASE("ablations switch off masking and noise") {
    const SmallSetup s;
    std::vector<std::size_t> idx(s.data.train.size());
    std::iota(idx.begin(), idx.end(), 0);
    TrainConfig cfg = s.train_config();
    cfg.no_query_dropout = true;
    std::mt19937_64 rng(3);
    for (const auto& item : build_training_batch(s.data.train, idx, 0, cfg, rng, s.vocab)) {
        CHECK_FALSE(item.dropped);
        CHECK_FALSE(item.noisy);
    }
    cfg = s.train_config();
    cfg.no_noisy_ra = true;
    for (const auto& item : build_training_batch(s.data.train, idx, 0, cfg, rng, s.vocab)) {
        CHECK(item.dropped);
        CHECK_FALSE(item.noisy);
    }
    cfg = s.train_config();
    cfg.mode = TrainMode::baseline_no_ra;
    for (const auto& item : build_training_batch(s.data.train, idx, 0, cfg, rng, s.vocab)) {
        CHECK_FALSE(item.dropped);
    }
}

TEST_CASE("prepend baseline input") {
    const SmallSetup s;
    Example ex = s.data.train[0];
    CHECK(prepend_baseline_input(ex, 0, s.vocab) == lm_source(s.vocab, ex.concepts));

    ex.retrieval.texts = {RetrievedItem{ItemKind::text, {}, {s.world.entities[0]}, "t"}};
    const auto one = prepend_baseline_input(ex, 1, s.vocab);
    const auto base = lm_source(s.vocab, ex.concepts);
    CHECK(one.size() == base.size() + 2);
    CHECK(one[1] == s.vocab.id(s.world.entities[0]));
    CHECK(one[2] == Vocabulary::kSep);

    ex.retrieval.texts.assign(3, RetrievedItem{ItemKind::text, {}, std::vector<std::string>(20, "the"), "t"});
    const auto cut = prepend_baseline_input(ex, 3, s.vocab, base.size() + 5);
    CHECK(cut.size() == base.size() + 5);
    CHECK(cut.front() == Vocabulary::kBos);
    CHECK(std::equal(base.begin() + 1, base.end(), cut.end() - std::ptrdiff_t(base.size() - 1)));
}

TEST_CASE("batch loss is the token mean of -log p") {
    const SmallSetup s;
    TrainConfig cfg = s.train_config();
    auto state = train_init(cfg, s.lm, s.encoder);
    Example ex = s.data.train[0];
    ex.references = {s.world.entities[1]};
    const std::vector<Example> examples{ex};
    std::mt19937_64 rng(1);
    const std::vector<std::size_t> idx{0};
    const auto batch = build_training_batch(examples, idx, cfg.T, cfg, rng, s.vocab);
    REQUIRE(batch[0].target.size() == 2);
    const double loss = batch_loss(state->model, batch, examples, s.lm, s.encoder, false);

    const RetrievalSet used = ex.retrieval.head(cfg.M_used, cfg.N_used);
    const nn::Tensor prefix = state->model.prefix(s.encoder, ex.concepts, &used);
    LmSession session(s.lm, &prefix);
    session.feed(batch[0].source);
    const double a = session.next_log_probs()[batch[0].target[0]];
    session.feed(batch[0].target[0]);
    const double b = session.next_log_probs()[Vocabulary::kEos];
    CHECK(std::abs(loss + (a + b) / 2.0) < 1e-10);
}

TEST_CASE("optimizer groups stay separate") {
    const SmallSetup s;
    TrainConfig cfg = s.train_config();
    cfg.weight_decay = 0.0;
    auto state = train_init(cfg, s.lm, s.encoder);
    auto& model = state->model;
    REQUIRE(state->optimizer->groups().size() == 2);
    std::mt19937_64 rng(1);
    const std::vector<std::size_t> idx{0, 1};
    const auto batch = build_training_batch(s.data.train, idx, cfg.T, cfg, rng, s.vocab);

    state->optimizer->zero_grad();
    batch_loss(model, batch, s.data.train, s.lm, s.encoder, true);
    for (auto* p : model.integrator->parameters()) p->zero_grad();
    const auto ra_before = model.integrator->hash();
    const auto task_before = nn::parameter_hash(nn::ParameterRefs{&model.task_prompt});
    state->optimizer->step();
    CHECK(model.integrator->hash() == ra_before);
    CHECK(nn::parameter_hash(nn::ParameterRefs{&model.task_prompt}) != task_before);

    state->optimizer->zero_grad();
    batch_loss(model, batch, s.data.train, s.lm, s.encoder, true);
    model.task_prompt.zero_grad();
    const auto task_mid = nn::parameter_hash(nn::ParameterRefs{&model.task_prompt});
    const auto ra_mid = model.integrator->hash();
    state->optimizer->step();
    CHECK(nn::parameter_hash(nn::ParameterRefs{&model.task_prompt}) != task_mid);  // Adam momentum only
    CHECK(model.integrator->hash() != ra_mid);
}

TEST_CASE("training keeps the LM frozen and is deterministic") {
    const SmallSetup s;
    const auto lm_hash = s.lm.hash();
    const auto a = train(s.train_config(), s.data.train, s.lm, s.encoder);
    const auto b = train(s.train_config(), s.data.train, s.lm, s.encoder);
    CHECK(s.lm.hash() == lm_hash);
    REQUIRE(a->metrics.size() == 20);
    for (std::size_t i = 0; i < a->metrics.size(); ++i) CHECK(a->metrics[i].loss == b->metrics[i].loss);
    CHECK(a->model.integrator->hash() == b->model.integrator->hash());
    CHECK(a->metrics[0].p == 1.0);
    CHECK(a->metrics.back().p == 0.0);

    FrozenLM fresh(s.lm.config(), s.vocab);
    CHECK_THROWS_AS(train(s.train_config(), s.data.train, fresh, s.encoder), ConfigError);
}

TEST_CASE("checkpoint and metrics files round-trip") {
    const SmallSetup s;
    TrainConfig cfg = s.train_config();
    cfg.total_steps = 12;
    const auto st = train(cfg, s.data.train, s.lm, s.encoder);
    const auto dir = std::filesystem::temp_directory_path() / "more_train_test";
    std::filesystem::create_directories(dir);
    save_checkpoint(st->model, (dir / "ckpt.json").string());
    const TrainedModel loaded = load_checkpoint((dir / "ckpt.json").string());
    CHECK(loaded.integrator->hash() == st->model.integrator->hash());
    CHECK(loaded.lm_hash == s.lm.hash());
    CHECK(loaded.config.total_steps == 12);
    CHECK(std::ranges::equal(loaded.task_prompt.value.data(), st->model.task_prompt.value.data()));

    write_metrics_csv(st->metrics, (dir / "metrics.csv").string());
    std::ifstream in(dir / "metrics.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "step,loss,p,noise_rate");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 12);
    std::filesystem::remove_all(dir);
}

TEST_CASE("training overfits a 16-example subset") {
    const SmallSetup s(16, 32, 16);
    std::vector<Example> subset = s.data.train;
    for (auto& ex : subset) ex.references.resize(1);
    std::mt19937_64 rng(4);
    const auto corpus = sample_pretrain_corpus(s.world, s.vocab, 4000, {}, rng);
    LmConfig lc = s.lm.config();
    lc.d_model = 32;
    PretrainConfig pc;
    pc.steps = 400;
    pc.batch_size = 16;
    pc.max_prefix = 8;
    const FrozenLM lm = pretrain_lm(corpus, lc, pc, s.vocab);

    TrainConfig cfg = s.train_config(16);
    cfg.total_steps = 2000;
    cfg.T = 1;
    cfg.batch_size = 16;
    cfg.lr_task = 1e-2;
    cfg.lr_ra = 3e-3;
    cfg.weight_decay = 0.0;
    cfg.integrator.l_q = 4;
    cfg.integrator.d_int = 16;
    const auto st = train(cfg, subset, lm, s.encoder);
    CHECK(st->metrics.back().loss < 0.1);
}
