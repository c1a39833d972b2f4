// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "more/graph.hpp"
#include "more/optimizer.hpp"
#include "more/vocab.hpp"

namespace more {

struct LmConfig {
    std::size_t d_model = 128;
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t context = 256;
    std::size_t ffn_mult = 4;
    std::uint64_t seed = 1;
    double embed_std = 0.1;
};

struct DecoderBlock {
    nn::Parameter ln1_g, ln1_b;
    nn::Parameter wq, wk, wv, wo, bo;
    nn::Parameter ln2_g, ln2_b;
    nn::Parameter w1, b1, w2, b2;
};

/// Decoder-only transformer (pre-LN, learned positions, untied head) that
/// accepts a prefix of soft embeddings ahead of its token embeddings.
class FrozenLM {
  public:
    FrozenLM(LmConfig config, Vocabulary vocab);
    FrozenLM(const FrozenLM&) = default;
    FrozenLM(FrozenLM&&) = default;
    FrozenLM& operator=(const FrozenLM&) = delete;

    const LmConfig& config() const { return config_; }
    const Vocabulary& vocab() const { return vocab_; }
    std::size_t d_model() const { return config_.d_model; }

    nn::ParameterRefs parameters();
    std::vector<const nn::Parameter*> parameters() const;
    std::uint64_t hash() const;

    void freeze();
    bool frozen() const { return frozen_; }

    nn::Parameter tok_emb;
    nn::Parameter pos_emb;
    std::vector<DecoderBlock> blocks;
    nn::Parameter lnf_g, lnf_b;
    nn::Parameter head;

  private:
    LmConfig config_;
    Vocabulary vocab_;
    bool frozen_ = false;
};

/// Raw embedding-table rows for `ids`; positional terms are added later, at
/// the model's input stage.
nn::Tensor embed_tokens(const FrozenLM& lm, std::span<const int> ids);

struct LmOutput {
    nn::Var logits;      // [n_tokens x V], row t predicts the token after tokens[t]
    nn::Var loss_sum;    // valid only when targets were given
    nn::Var loss;        // mean over target positions
    std::size_t n_targets = 0;
};

/// Forward pass over [soft_prefix; tokens]. `targets` must have one entry per
/// token (negative = not scored). LM weights enter the graph as constants, so
/// only the prefix can receive gradients.
LmOutput lm_forward(nn::Graph& g, const FrozenLM& lm, nn::Var soft_prefix, std::span<const int> tokens,
                    std::optional<std::span<const int>> targets = std::nullopt);

/// Same computation with the LM weights tracked; used by pretraining only.
LmOutput lm_forward_trainable(nn::Graph& g, FrozenLM& lm, nn::Var soft_prefix, std::span<const int> tokens,
                              std::optional<std::span<const int>> targets = std::nullopt);

/// LM input layout: [BOS, c1, SEP, c2, ..., ck, =]; just [BOS] without concepts.
std::vector<int> lm_source(const Vocabulary& vocab, const std::vector<std::string>& concepts);

/// Input tokens (source ++ target minus its last token) and aligned targets.
struct TeacherForced {
    std::vector<int> tokens;
    std::vector<int> targets;
};
TeacherForced teacher_force(std::span<const int> source, std::span<const int> target);

/// Incremental inference with a key/value cache. Copyable, so beam search can
/// fork hypotheses cheaply.
class LmSession {
  public:
    LmSession(const FrozenLM& lm, const nn::Tensor* soft_prefix);

    void feed(int token);
    void feed(std::span<const int> tokens);
    /// log P(next token | everything fed so far).
    std::vector<double> next_log_probs() const;
    std::size_t length() const { return pos_; }

  private:
    void push_row(std::vector<double> x);

    const FrozenLM* lm_;
    std::vector<std::vector<double>> keys_, values_;
    std::vector<double> last_;
    std::size_t pos_ = 0;
};

// ---- pretraining -----------------------------------------------------------

/// One pretraining document: an optional context that is placed somewhere in
/// the prefix region, the LM source and the target sentence (EOS-terminated).
struct PretrainDocument {
    std::vector<int> context;
    std::vector<int> source;
    std::vector<int> target;
};

struct PretrainConfig {
    std::size_t steps = 2000;
    std::size_t batch_size = 32;
    double lr = 3e-3;
    double warmup_frac = 0.02;
    double weight_decay = 0.01;
    double grad_clip = 1.0;
    std::size_t max_prefix = 64;
    std::uint64_t seed = 7;
};

struct PretrainState {
    std::unique_ptr<FrozenLM> lm;
    AdamW optimizer;
    std::size_t step = 0;
    std::mt19937_64 rng;
    std::vector<double> losses;
};

std::unique_ptr<PretrainState> pretrain_init(const LmConfig& lm_config, const PretrainConfig& config,
                                             const Vocabulary& vocab);
/// Advances `state` until `until_step` (capped at config.steps).
void pretrain_run(PretrainState& state, std::span<const PretrainDocument> corpus, const PretrainConfig& config,
                  std::size_t until_step);
/// Full run from scratch; returns the frozen model.
FrozenLM pretrain_lm(std::span<const PretrainDocument> corpus, const LmConfig& lm_config,
                     const PretrainConfig& config, const Vocabulary& vocab, std::vector<double>* loss_curve = nullptr);

/// Mean target cross-entropy with a seeded, reproducible prefix layout.
double lm_eval_loss(const FrozenLM& lm, std::span<const PretrainDocument> docs, std::size_t max_prefix,
                    std::uint64_t seed);

// ---- checkpoints -----------------------------------------------------------

void save_lm(const FrozenLM& lm, const std::string& path);
FrozenLM load_lm(const std::string& path);
void save_pretrain_state(const PretrainState& state, const std::string& path);
std::unique_ptr<PretrainState> load_pretrain_state(const std::string& path, const PretrainConfig& config);

} // namespace more
