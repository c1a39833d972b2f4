// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"
#include "more/config.hpp"
#include "more/error.hpp"

using namespace more;

TEST_CASE("config text parses keys, comments and lists") {
    const RunConfig c = parse_run_config(
        "# desk run\n"
        "total_steps = 800\n"
        "T=200   # dropout phase\n"
        "\n"
        "option_weights = 0.7, 0.3\n"
        "mode = baseline_no_ra\n"
        "d_lm = 48\n"
        "lm_path = models/lm.json\n");
    CHECK(c.train.total_steps == 800);
    CHECK(c.train.T == 200);
    CHECK(c.data.sizes.option_weights == std::vector<double>{0.7, 0.3});
    CHECK(c.train.mode == TrainMode::baseline_no_ra);
    CHECK(c.lm.d_model == 48);
    CHECK(c.train.integrator.d_lm == 48);
    CHECK(c.lm_path == "models/lm.json");
}

TEST_CASE("config errors carry line numbers") {
    auto message = [](const std::string& text) {
        try {
            parse_run_config(text, "run.cfg");
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(message("T = 5\nbogus_key = 1\n").find("run.cfg:2") != std::string::npos);
    CHECK(message("T = 5\nT = 6\n").find("run.cfg:2") != std::string::npos);
    CHECK(message("T = five\n").find("run.cfg:1") != std::string::npos);
    CHECK(message("no equals sign\n").find("run.cfg:1") != std::string::npos);
    CHECK_THROWS_AS(parse_run_config("p_hat = 2\n").train.validate(), ConfigError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/run.cfg"), Error);
}

TEST_CASE("resolved entries round-trip") {
    RunConfig c;
    apply_key(c, "lr_ra", "0.0005");
    apply_key(c, "no_noisy_ra", "true");
    apply_key(c, "l_q", "16");
    const std::string text = format_entries(config_entries(c));
    const RunConfig back = parse_run_config(text);
    CHECK(format_entries(config_entries(back)) == text);
    CHECK(back.train.lr_ra == 0.0005);
    CHECK(back.train.no_noisy_ra);
    CHECK(back.train.integrator.l_q == 16);
}

TEST_CASE("train entries round-trip through the checkpoint echo") {
    TrainConfig t;
    t.seed = 42;
    t.mode = TrainMode::prepend;
    t.prepend_k = 2;
    t.integrator.n_heads = 8;
    TrainConfig back;
    for (const auto& [k, v] : train_config_entries(t)) apply_train_key(back, k, v);
    CHECK(back.seed == 42);
    CHECK(back.mode == TrainMode::prepend);
    CHECK(back.prepend_k == 2);
    CHECK(back.integrator.n_heads == 8);
    CHECK(train_config_entries(back) == train_config_entries(t));
    CHECK_THROWS_AS(apply_train_key(back, "nope", "1"), ConfigError);
}
