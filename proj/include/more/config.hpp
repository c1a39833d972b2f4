// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "more/lm.hpp"
#include "more/synth.hpp"
#include "more/train.hpp"

namespace more {

struct DataConfig {
    std::uint64_t world_seed = 11;
    std::uint64_t data_seed = 12;
    WorldSizes sizes;
    std::size_t n_train = 2000;
    std::size_t n_dev = 300;
    std::size_t n_test = 300;
    DatasetOptions options;
    std::size_t n_pretrain_docs = 20000;
    std::uint64_t corpus_seed = 13;
};

struct EvalConfig {
    std::size_t beam = 5;
    std::size_t max_len = 32;
    std::uint64_t derangement_seed = 2024;
};

/// Everything a run needs, settable from a flat key=value file.
struct RunConfig {
    DataConfig data;
    LmConfig lm;
    PretrainConfig pretrain;
    TrainConfig train;
    EvalConfig eval;
    std::uint64_t encoder_seed = 99;
    std::string data_dir = "data";
    std::string lm_path = "lm.json";
    std::string checkpoint = "checkpoint.json";

    /// Copies shared widths (d_lm, d_enc) into every sub-config.
    void sync();
};

using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

/// Applies one assignment; unknown keys and malformed values throw ConfigError.
void apply_key(RunConfig& config, const std::string& key, const std::string& value);
/// Resolved configuration, one entry per key, in a stable order.
ConfigEntries config_entries(const RunConfig& config);
std::string format_entries(const ConfigEntries& entries);

RunConfig parse_run_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_run_config(const std::string& path);

/// The TrainConfig subset, used for checkpoint echoes.
ConfigEntries train_config_entries(const TrainConfig& config);
void apply_train_key(TrainConfig& config, const std::string& key, const std::string& value);

} // namespace more
