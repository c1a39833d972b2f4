// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <span>
#include <vector>

#include "more/lm.hpp"

namespace more {

/// Anything that can score the next token and be forked.
class DecoderState {
  public:
    virtual ~DecoderState() = default;
    virtual std::unique_ptr<DecoderState> clone() const = 0;
    virtual void feed(int token) = 0;
    virtual std::vector<double> next_log_probs() const = 0;
};

class LmDecoderState final : public DecoderState {
  public:
    LmDecoderState(const FrozenLM& lm, const nn::Tensor* soft_prefix, std::span<const int> source);

    std::unique_ptr<DecoderState> clone() const override { return std::make_unique<LmDecoderState>(*this); }
    void feed(int token) override;
    std::vector<double> next_log_probs() const override { return session_.next_log_probs(); }

  private:
    const FrozenLM* lm_;
    LmSession session_;
};

struct Hypothesis {
    std::vector<int> tokens;  // generated tokens, EOS excluded
    double score = 0.0;       // summed log-probability, EOS included when finished
    bool finished = false;    // ended with EOS rather than the length cap
};

/// Beam search with raw log-probability scores. Hypotheses that emit EOS move
/// to a completed pool; the search stops once no live hypothesis can beat the
/// best completed one.
Hypothesis beam_search(const DecoderState& initial, int eos, std::size_t beam, std::size_t max_len);
Hypothesis greedy_decode(const DecoderState& initial, int eos, std::size_t max_len);

Hypothesis beam_search(const FrozenLM& lm, const nn::Tensor* soft_prefix, std::span<const int> source,
                       std::size_t beam = 5, std::size_t max_len = 32);

/// Summed log-probability of `tokens` (plus EOS when `with_eos`) by teacher forcing.
double sequence_log_prob(const DecoderState& initial, std::span<const int> tokens, int eos, bool with_eos);

} // namespace more
