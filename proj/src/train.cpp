// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "more/train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <utility>

#include "json_util.hpp"
#include "more/config.hpp"
#include "more/error.hpp"

namespace more {

using nn::Graph;
using nn::Parameter;
using nn::Tensor;
using nn::Var;

std::string to_string(TrainMode mode) {
    switch (mode) {
    case TrainMode::more:
        return "more";
    case TrainMode::baseline_no_ra:
        return "baseline_no_ra";
    case TrainMode::prepend:
        return "prepend";
    }
    return "more";
}

TrainMode parse_train_mode(const std::string& text) {
    if (text == "more") return TrainMode::more;
    if (text == "baseline_no_ra") return TrainMode::baseline_no_ra;
    if (text == "prepend") return TrainMode::prepend;
    throw ConfigError("unknown mode '" + text + "' (expected more, baseline_no_ra or prepend)");
}

void TrainConfig::validate() const {
    if (!(p_hat >= 0.0 && p_hat <= 1.0)) throw ConfigError("p_hat must lie in [0, 1]");
    if (T > total_steps) throw ConfigError("T must not exceed total_steps");
    if (T == 0 && mode == TrainMode::more && !no_query_dropout) throw ConfigError("T must be >= 1 with query dropout");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (l_task == 0) throw ConfigError("l_task must be >= 1");
    if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0)) throw ConfigError("warmup_frac must lie in [0, 1]");
    if (!(lr_task > 0.0) || !(lr_ra > 0.0)) throw ConfigError("learning rates must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (uses_retrieval() && M_used + N_used == 0) throw ConfigError("M_used + N_used must be >= 1 in retrieval mode");
}

double dropout_probability(std::size_t t, std::size_t T) {
    if (T == 0) return 0.0;
    const double x = std::min(double(t) / double(T), 1.0);
    return 0.5 * (1.0 - std::sin(std::numbers::pi * (x - 0.5)));
}

std::vector<int> prepend_baseline_input(const Example& example, std::size_t k, const Vocabulary& vocab,
                                        std::size_t max_len) {
    std::vector<int> base = lm_source(vocab, example.concepts);
    if (k == 0) return base;
    const std::size_t n = std::min(k, example.retrieval.texts.size());
    std::vector<int> snippets;
    for (std::size_t i = 0; i < n; ++i) {
        for (int id : vocab.encode(example.retrieval.texts[i].snippet)) snippets.push_back(id);
        snippets.push_back(Vocabulary::kSep);
    }
    // base = [BOS, concepts..., =]; keep BOS in front and the concepts intact.
    const std::size_t room = max_len > base.size() ? max_len - base.size() : 0;
    if (snippets.size() > room) snippets.erase(snippets.begin(), snippets.end() - std::ptrdiff_t(room));
    std::vector<int> out{Vocabulary::kBos};
    out.insert(out.end(), snippets.begin(), snippets.end());
    out.insert(out.end(), base.begin() + 1, base.end());
    return out;
}

std::vector<BatchItem> build_training_batch(std::span<const Example> examples, std::span<const std::size_t> indices,
                                            std::size_t t, const TrainConfig& config, std::mt19937_64& rng,
                                            const Vocabulary& vocab) {
    const bool retrieval = config.uses_retrieval();
    const bool dropout = retrieval && !config.no_query_dropout;
    const double p = dropout ? dropout_probability(t, config.T) : 0.0;
    const double p_hat = config.no_noisy_ra ? 0.0 : config.p_hat;
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<BatchItem> batch;
    batch.reserve(indices.size());
    for (std::size_t slot = 0; slot < indices.size(); ++slot) {
        const std::size_t i = indices[slot];
        const Example& ex = examples[i];
        if (retrieval && !ex.has_retrieval) throw DataError("missing retrieval record for example '" + ex.id + "'");
        if (ex.references.empty()) throw DataError("example '" + ex.id + "' has no references");
        BatchItem item;
        item.example = i;
        item.retrieval_owner = i;
        if (p > 0.0 && unit(rng) < p) {
            item.dropped = true;
            if (p_hat > 0.0 && examples.size() > 1 && unit(rng) < p_hat) {
                item.noisy = true;
                std::size_t j = std::uniform_int_distribution<std::size_t>(0, examples.size() - 2)(rng);
                if (j >= i) ++j;
                item.retrieval_owner = j;
            }
        }
        if (item.dropped) {
            item.source = lm_source(vocab, {});
        } else if (config.mode == TrainMode::prepend) {
            item.source = prepend_baseline_input(ex, config.prepend_k, vocab);
        } else {
            item.source = lm_source(vocab, ex.concepts);
        }
        if (item.noisy) {
            item.target = {Vocabulary::kEos};
        } else {
            const auto& ref = ex.references[(t + i) % ex.references.size()];
            item.target = vocab.encode(tokenize(ref));
            item.target.push_back(Vocabulary::kEos);
        }
        batch.push_back(std::move(item));
    }
    return batch;
}

Tensor TrainedModel::prefix(const RetrievalEncoder& encoder, const std::vector<std::string>& concepts,
                            const RetrievalSet* retrieval) const {
    if (!integrator || !retrieval) return task_prompt.value;
    const Tensor ra = integrate(*integrator, encoder, concepts, *retrieval);
    std::vector<double> data(ra.data().begin(), ra.data().end());
    data.insert(data.end(), task_prompt.value.data().begin(), task_prompt.value.data().end());
    return Tensor({ra.rows() + task_prompt.value.rows(), ra.cols()}, std::move(data));
}

std::unique_ptr<TrainState> train_init(const TrainConfig& config, const FrozenLM& lm, const RetrievalEncoder& encoder) {
    config.validate();
    auto state = std::make_unique<TrainState>();
    TrainedModel& m = state->model;
    m.config = config;
    m.config.integrator.d_lm = lm.d_model();
    if (config.uses_retrieval() && config.integrator.d_enc != encoder.d_enc()) {
        throw ConfigError("d_enc " + std::to_string(config.integrator.d_enc) + " != encoder width " +
                          std::to_string(encoder.d_enc()));
    }
    m.config.integrator.learnable_concepts = config.no_concept_input;
    m.config.integrator.seed = config.seed * 1000003ULL + 17;
    m.lm_hash = lm.hash();
    m.encoder_hash = encoder.hash();

    std::mt19937_64 init_rng(config.seed);
    std::normal_distribution<double> noise(0.0, config.prompt_init_std);
    const auto pad = lm.tok_emb.value.row(Vocabulary::kPad);
    Tensor prompt({config.l_task, lm.d_model()});
    for (std::size_t r = 0; r < config.l_task; ++r) {
        for (std::size_t c = 0; c < lm.d_model(); ++c) prompt.at(r, c) = pad[c] + noise(init_rng);
    }
    m.task_prompt = Parameter("task_prompt", std::move(prompt));

    std::vector<ParamGroup> groups{{"task", {&m.task_prompt}, config.lr_task}};
    if (config.uses_retrieval()) {
        m.integrator = std::make_unique<IntegratorParams>(m.config.integrator);
        m.integrator->set_output_bias(pad);
        groups.push_back({"ra", m.integrator->parameters(), config.lr_ra});
    }
    state->optimizer = std::make_unique<AdamW>(
        std::move(groups), AdamWConfig{config.beta1, config.beta2, 1e-8, config.weight_decay});
    state->rng.seed(config.seed);
    return state;
}

double batch_loss(TrainedModel& model, std::span<const BatchItem> batch, std::span<const Example> examples,
                  const FrozenLM& lm, const RetrievalEncoder& encoder, bool accumulate_grads) {
    std::size_t total_targets = 0;
    for (const auto& item : batch) total_targets += item.target.size();
    if (total_targets == 0) throw DataError("batch without target tokens");
    const auto& cfg = model.config;
    double loss = 0.0;
    for (const auto& item : batch) {
        Graph g;
        Var prefix = g.param(model.task_prompt);
        if (model.integrator) {
            const Example& owner = examples[item.retrieval_owner];
            const RetrievalSet used = owner.retrieval.head(cfg.M_used, cfg.N_used);
            if (used.empty()) throw DataError("example '" + owner.id + "' has no retrieved items to use");
            const Var parts[] = {integrate(g, *model.integrator, encoder, examples[item.example].concepts, used),
                                 prefix};
            prefix = g.concat_rows(parts);
        }
        const TeacherForced tf = teacher_force(item.source, item.target);
        const LmOutput out = lm_forward(g, lm, prefix, tf.tokens, tf.targets);
        const double l = g.value(out.loss_sum).item();
        if (!std::isfinite(l)) {
            throw NumericError("non-finite loss on example '" + examples[item.example].id + "'");
        }
        loss += l;
        if (accumulate_grads) g.backward(out.loss_sum, 1.0 / double(total_targets));
    }
    return loss / double(total_targets);
}

void train_steps(TrainState& state, std::span<const Example> examples, const FrozenLM& lm,
                 const RetrievalEncoder& encoder, std::size_t until_step) {
    if (examples.empty()) throw DataError("training set is empty");
    const TrainConfig& cfg = state.model.config;
    const Vocabulary& vocab = lm.vocab();
    until_step = std::min(until_step, cfg.total_steps);
    std::vector<std::size_t> indices(cfg.batch_size);
    while (state.step < until_step) {
        for (auto& idx : indices) {
            if (state.cursor >= state.order.size()) {
                state.order.resize(examples.size());
                std::iota(state.order.begin(), state.order.end(), 0);
                std::shuffle(state.order.begin(), state.order.end(), state.rng);
                state.cursor = 0;
            }
            idx = state.order[state.cursor++];
        }
        const auto batch = build_training_batch(examples, indices, state.step, cfg, state.rng, vocab);
        state.optimizer->zero_grad();
        const double loss = batch_loss(state.model, batch, examples, lm, encoder, true);
        if (cfg.grad_clip > 0.0) state.optimizer->clip_grad_norm(cfg.grad_clip);
        state.optimizer->step(warmup_scale(state.step, cfg.total_steps, cfg.warmup_frac));

        std::size_t noisy = 0;
        for (const auto& item : batch) noisy += item.noisy ? 1 : 0;
        const bool dropout = cfg.uses_retrieval() && !cfg.no_query_dropout;
        state.metrics.push_back({state.step, loss, dropout ? dropout_probability(state.step, cfg.T) : 0.0,
                                 double(noisy) / double(batch.size())});
        ++state.step;
    }
}

std::unique_ptr<TrainState> train(const TrainConfig& config, std::span<const Example> examples, const FrozenLM& lm,
                                  const RetrievalEncoder& encoder) {
    if (!lm.frozen()) throw ConfigError("the language model must be pretrained and frozen before training");
    auto state = train_init(config, lm, encoder);
    train_steps(*state, examples, lm, encoder, config.total_steps);
    if (lm.hash() != state->model.lm_hash || encoder.hash() != state->model.encoder_hash) {
        throw Error("internal: frozen parameters changed during training");
    }
    return state;
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "step,loss,p,noise_rate\n" << std::setprecision(10);
    for (const auto& r : rows) out << r.step << ',' << r.loss << ',' << r.p << ',' << r.noise_rate << '\n';
}

void save_checkpoint(const TrainedModel& model, const std::string& path) {
    detail::json j;
    j["format"] = "more-train";
    j["version"] = 1;
    detail::json cfg = detail::json::object();
    for (const auto& [k, v] : train_config_entries(model.config)) cfg[k] = v;
    j["config"] = cfg;
    j["lm_hash"] = nn::hash_hex(model.lm_hash);
    j["encoder_hash"] = nn::hash_hex(model.encoder_hash);
    j["task_prompt"] = detail::tensor_to_json(model.task_prompt.value);
    if (model.integrator) {
        j["integrator"] = detail::params_to_json(std::as_const(*model.integrator).parameters());
        j["integrator_hash"] = nn::hash_hex(model.integrator->hash());
    } else {
        j["integrator"] = nullptr;
    }
    detail::write_json_file(j, path);
}

TrainedModel load_checkpoint(const std::string& path) {
    const detail::json j = detail::read_json_file(path);
    try {
        if (j.value("format", "") != "more-train") throw DataError(path + ": not a training checkpoint");
        TrainedModel m;
        for (const auto& [k, v] : j.at("config").items()) apply_train_key(m.config, k, v.get<std::string>());
        m.lm_hash = std::stoull(j.at("lm_hash").get<std::string>(), nullptr, 16);
        m.encoder_hash = std::stoull(j.at("encoder_hash").get<std::string>(), nullptr, 16);
        m.task_prompt = Parameter("task_prompt", detail::tensor_from_json(j.at("task_prompt")));
        if (!j.at("integrator").is_null()) {
            m.integrator = std::make_unique<IntegratorParams>(m.config.integrator);
            detail::params_from_json(j.at("integrator"), m.integrator->parameters());
            if (nn::hash_hex(m.integrator->hash()) != j.at("integrator_hash").get<std::string>()) {
                throw DataError(path + ": integrator hash mismatch");
            }
        }
        return m;
    } catch (const detail::json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
}

} // namespace more
