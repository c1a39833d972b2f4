// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "more/graph.hpp"

namespace more {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

struct ParamGroup {
    std::string name;
    nn::ParameterRefs params;
    double lr = 1e-3;
};

/// Adam with decoupled weight decay; each group carries its own base rate.
class AdamW {
  public:
    AdamW() = default;
    AdamW(std::vector<ParamGroup> groups, AdamWConfig config);

    /// One update from the gradients currently held by the parameters.
    /// `lr_scale` multiplies every group's base rate (warmup).
    void step(double lr_scale = 1.0);
    void zero_grad();
    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    double clip_grad_norm(double max_norm);

    std::size_t steps_taken() const { return t_; }
    const std::vector<ParamGroup>& groups() const { return groups_; }
    const AdamWConfig& config() const { return config_; }

    // Moment buffers, flattened in group/parameter order, for checkpointing.
    std::vector<nn::Tensor>& first_moments() { return m_; }
    std::vector<nn::Tensor>& second_moments() { return v_; }
    void set_steps_taken(std::size_t t) { t_ = t; }

  private:
    std::vector<ParamGroup> groups_;
    AdamWConfig config_;
    std::vector<nn::Tensor> m_, v_;
    std::size_t t_ = 0;
};

/// Linear warmup over the first ceil(warmup_frac * total_steps) steps, then 1.
double warmup_scale(std::size_t step, std::size_t total_steps, double warmup_frac);

} // namespace more
