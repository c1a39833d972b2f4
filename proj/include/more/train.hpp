// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "more/encoder.hpp"
#include "more/integrator.hpp"
#include "more/lm.hpp"
#include "more/optimizer.hpp"
#include "more/synth.hpp"

namespace more {

enum class TrainMode { more, baseline_no_ra, prepend };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& text);

struct TrainConfig {
    std::size_t T = 600;
    double p_hat = 0.3;
    std::size_t total_steps = 6000;
    double warmup_frac = 0.01;
    std::size_t batch_size = 32;
    double lr_task = 1e-3;
    double lr_ra = 3e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.05;
    double grad_clip = 0.0;  // 0 disables clipping
    std::uint64_t seed = 1;
    TrainMode mode = TrainMode::more;
    bool no_concept_input = false;
    bool no_query_dropout = false;
    bool no_noisy_ra = false;
    std::size_t M_used = 6;
    std::size_t N_used = 6;
    std::size_t l_task = 32;
    std::size_t prepend_k = 3;
    double prompt_init_std = 0.02;
    IntegratorConfig integrator;

    /// Throws ConfigError when an invariant is violated.
    void validate() const;
    bool uses_retrieval() const { return mode == TrainMode::more; }
};

/// p = 0.5 (1 - sin(pi (min(t/T, 1) - 1/2))).
double dropout_probability(std::size_t t, std::size_t T);

struct BatchItem {
    std::size_t example = 0;
    std::size_t retrieval_owner = 0;  // example whose retrieval set feeds the Integrator
    std::vector<int> source;          // LM input ahead of the target
    std::vector<int> target;          // EOS-terminated
    bool dropped = false;
    bool noisy = false;
};

/// LM input for the prepend baseline: [BOS, snippet_1, SEP, ..., snippet_k, SEP,
/// concepts..., =], with the oldest snippet tokens dropped first to fit `max_len`.
std::vector<int> prepend_baseline_input(const Example& example, std::size_t k, const Vocabulary& vocab,
                                        std::size_t max_len = 256);

/// Builds one batch at step `t`. Reference choice is a fixed function of
/// (t, example index), so with p = 0 the batch does not depend on `rng`.
std::vector<BatchItem> build_training_batch(std::span<const Example> examples, std::span<const std::size_t> indices,
                                            std::size_t t, const TrainConfig& config, std::mt19937_64& rng,
                                            const Vocabulary& vocab);

/// Trainable pieces: the task prompt and, in retrieval mode, the Integrator.
struct TrainedModel {
    TrainConfig config;
    nn::Parameter task_prompt;
    std::unique_ptr<IntegratorParams> integrator;
    std::uint64_t lm_hash = 0;
    std::uint64_t encoder_hash = 0;

    /// Soft prefix for evaluation: [p^ra; p^task], or [p^task] when
    /// `retrieval` is null or the model has no Integrator.
    nn::Tensor prefix(const RetrievalEncoder& encoder, const std::vector<std::string>& concepts,
                      const RetrievalSet* retrieval) const;
};

struct MetricsRow {
    std::size_t step = 0;
    double loss = 0.0;
    double p = 0.0;
    double noise_rate = 0.0;
};

struct TrainState {
    TrainedModel model;
    std::unique_ptr<AdamW> optimizer;
    std::size_t step = 0;
    std::mt19937_64 rng;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    std::vector<MetricsRow> metrics;
};

std::unique_ptr<TrainState> train_init(const TrainConfig& config, const FrozenLM& lm, const RetrievalEncoder& encoder);

/// Forward (and optionally backward) over one batch. Returns the mean
/// cross-entropy over every target token of the batch.
double batch_loss(TrainedModel& model, std::span<const BatchItem> batch, std::span<const Example> examples,
                  const FrozenLM& lm, const RetrievalEncoder& encoder, bool accumulate_grads);

/// Runs optimizer steps until `until_step` (capped at total_steps).
void train_steps(TrainState& state, std::span<const Example> examples, const FrozenLM& lm,
                 const RetrievalEncoder& encoder, std::size_t until_step);

/// Full run. Verifies that neither the LM nor the encoder changed.
std::unique_ptr<TrainState> train(const TrainConfig& config, std::span<const Example> examples, const FrozenLM& lm,
                                  const RetrievalEncoder& encoder);

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path);
void save_checkpoint(const TrainedModel& model, const std::string& path);
TrainedModel load_checkpoint(const std::string& path);

} // namespace more
