// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "more/decode.hpp"

#include <algorithm>
#include <limits>

#include "more/error.hpp"

namespace more {

namespace {

struct Live {
    std::unique_ptr<DecoderState> state;
    std::vector<int> tokens;
    double score = 0.0;
};

struct Candidate {
    std::size_t parent;
    int token;
    double score;
};

bool better(const Hypothesis& a, const Hypothesis& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.tokens != b.tokens) {
        const std::size_t n = std::min(a.tokens.size(), b.tokens.size());
        for (std::size_t i = 0; i < n; ++i) {
            if (a.tokens[i] != b.tokens[i]) return a.tokens[i] < b.tokens[i];
        }
    }
    return a.tokens.size() < b.tokens.size();
}

} // namespace

LmDecoderState::LmDecoderState(const FrozenLM& lm, const nn::Tensor* soft_prefix, std::span<const int> source)
    : lm_(&lm), session_(lm, soft_prefix) {
    if (source.empty()) throw ShapeError("decoder source must contain at least BOS");
    session_.feed(source);
}

void LmDecoderState::feed(int token) {
    if (session_.length() >= lm_->config().context) {
        throw Error("context overflow while decoding at position " + std::to_string(session_.length()));
    }
    session_.feed(token);
}

Hypothesis beam_search(const DecoderState& initial, int eos, std::size_t beam, std::size_t max_len) {
    if (beam == 0 || max_len == 0) throw ConfigError("beam width and max_len must be >= 1");
    std::vector<Live> live;
    live.push_back({initial.clone(), {}, 0.0});
    std::vector<Hypothesis> completed;
    for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
        std::vector<Candidate> cands;
        for (std::size_t h = 0; h < live.size(); ++h) {
            const auto lp = live[h].state->next_log_probs();
            for (std::size_t v = 0; v < lp.size(); ++v) cands.push_back({h, int(v), live[h].score + lp[v]});
        }
        // Parents are ordered best-first, so a parent-index tie break keeps
        // the stronger prefix; all candidates share one length here.
        std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.token < b.token;
        });
        std::vector<Live> next;
        for (const auto& c : cands) {
            if (next.size() >= beam) break;
            if (c.token == eos) {
                completed.push_back({live[c.parent].tokens, c.score, true});
                continue;
            }
            const bool last = step + 1 == max_len;
            Live n{last ? nullptr : live[c.parent].state->clone(), live[c.parent].tokens, c.score};
            n.tokens.push_back(c.token);
            if (!last) n.state->feed(c.token);
            next.push_back(std::move(n));
        }
        live = std::move(next);
        if (!live.empty() && step + 1 < max_len && !completed.empty()) {
            const auto best_done = std::max_element(completed.begin(), completed.end(),
                                                    [](const auto& a, const auto& b) { return better(b, a); });
            if (best_done->score >= live.front().score) {
                live.clear();
            }
        }
    }
    for (auto& l : live) completed.push_back({std::move(l.tokens), l.score, false});
    return *std::min_element(completed.begin(), completed.end(), better);
}

Hypothesis greedy_decode(const DecoderState& initial, int eos, std::size_t max_len) {
    if (max_len == 0) throw ConfigError("max_len must be >= 1");
    auto state = initial.clone();
    Hypothesis out;
    for (std::size_t step = 0; step < max_len; ++step) {
        const auto lp = state->next_log_probs();
        const auto best = std::size_t(std::max_element(lp.begin(), lp.end()) - lp.begin());
        out.score += lp[best];
        if (int(best) == eos) {
            out.finished = true;
            return out;
        }
        out.tokens.push_back(int(best));
        if (step + 1 < max_len) state->feed(int(best));
    }
    return out;
}

Hypothesis beam_search(const FrozenLM& lm, const nn::Tensor* soft_prefix, std::span<const int> source,
                       std::size_t beam, std::size_t max_len) {
    const std::size_t prefix = soft_prefix ? soft_prefix->rows() : 0;
    if (prefix + source.size() > lm.config().context) {
        throw Error("context overflow: decoder input needs " + std::to_string(prefix + source.size()) + " positions");
    }
    // Stay inside the positional table.
    const std::size_t room = lm.config().context - prefix - source.size() + 1;
    LmDecoderState start(lm, soft_prefix, source);
    return beam_search(start, Vocabulary::kEos, beam, std::min(max_len, room));
}

double sequence_log_prob(const DecoderState& initial, std::span<const int> tokens, int eos, bool with_eos) {
    auto state = initial.clone();
    double total = 0.0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        total += state->next_log_probs()[std::size_t(tokens[i])];
        state->feed(tokens[i]);
    }
    if (with_eos) total += state->next_log_probs()[std::size_t(eos)];
    return total;
}

} // namespace more
