// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "more/optimizer.hpp"

#include <cmath>

#include "more/error.hpp"

namespace more {

AdamW::AdamW(std::vector<ParamGroup> groups, AdamWConfig config)
    : groups_(std::move(groups)), config_(config) {
    for (const auto& g : groups_) {
        for (const nn::Parameter* p : g.params) {
            if (!p->trainable) throw Error("optimizer given frozen parameter '" + p->name + "'");
            m_.emplace_back(p->value.shape());
            v_.emplace_back(p->value.shape());
        }
    }
}

void AdamW::step(double lr_scale) {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, double(t_));
    std::size_t slot = 0;
    for (auto& g : groups_) {
        const double lr = g.lr * lr_scale;
        for (nn::Parameter* p : g.params) {
            auto& w = p->value.storage();
            const auto& grad = p->grad.storage();
            auto& m = m_[slot].storage();
            auto& v = v_[slot].storage();
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad[i];
                v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
                const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
                w[i] -= lr * (update + config_.weight_decay * w[i]);
            }
            ++slot;
        }
    }
}

void AdamW::zero_grad() {
    for (auto& g : groups_) {
        for (nn::Parameter* p : g.params) p->zero_grad();
    }
}

double AdamW::clip_grad_norm(double max_norm) {
    double total = 0.0;
    for (auto& g : groups_) {
        for (nn::Parameter* p : g.params) {
            for (double x : p->grad.data()) total += x * x;
        }
    }
    const double norm = std::sqrt(total);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& g : groups_) {
            for (nn::Parameter* p : g.params) {
                for (double& x : p->grad.storage()) x *= s;
            }
        }
    }
    return norm;
}

double warmup_scale(std::size_t step, std::size_t total_steps, double warmup_frac) {
    const auto warm = static_cast<std::size_t>(std::ceil(warmup_frac * double(total_steps)));
    if (warm == 0 || step >= warm) return 1.0;
    return double(step + 1) / double(warm);
}

} // namespace more
