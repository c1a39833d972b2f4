// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "more/lm.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "json_util.hpp"
#include "more/error.hpp"

namespace more {

using nn::Graph;
using nn::Parameter;
using nn::Tensor;
using nn::Var;

namespace {

Tensor normal_tensor(nn::Shape shape, double stddev, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& x : t.storage()) x = dist(rng);
    return t;
}

Tensor filled(nn::Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.storage().begin(), t.storage().end(), value);
    return t;
}

void check_ids(const FrozenLM& lm, std::span<const int> ids) {
    for (int id : ids) {
        if (id < 0 || std::size_t(id) >= lm.vocab().size()) {
            throw DataError("unknown token id " + std::to_string(id));
        }
    }
}

} // namespace

FrozenLM::FrozenLM(LmConfig config, Vocabulary vocab) : config_(config), vocab_(std::move(vocab)) {
    const std::size_t d = config_.d_model, V = vocab_.size(), f = config_.d_model * config_.ffn_mult;
    if (d == 0 || config_.n_heads == 0 || d % config_.n_heads != 0) {
        throw ConfigError("d_lm must be a positive multiple of n_heads");
    }
    if (config_.n_layers == 0 || config_.context == 0) throw ConfigError("LM needs at least one layer and position");
    std::mt19937_64 rng(config_.seed);
    const double w_std = 1.0 / std::sqrt(double(d));
    const double out_std = w_std / std::sqrt(2.0 * double(config_.n_layers));
    tok_emb = Parameter("tok_emb", normal_tensor({V, d}, config_.embed_std, rng));
    pos_emb = Parameter("pos_emb", normal_tensor({config_.context, d}, config_.embed_std, rng));
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        const std::string p = "block" + std::to_string(l) + ".";
        DecoderBlock b;
        b.ln1_g = Parameter(p + "ln1_g", filled({d}, 1.0));
        b.ln1_b = Parameter(p + "ln1_b", filled({d}, 0.0));
        b.wq = Parameter(p + "wq", normal_tensor({d, d}, w_std, rng));
        b.wk = Parameter(p + "wk", normal_tensor({d, d}, w_std, rng));
        b.wv = Parameter(p + "wv", normal_tensor({d, d}, w_std, rng));
        b.wo = Parameter(p + "wo", normal_tensor({d, d}, out_std, rng));
        b.bo = Parameter(p + "bo", filled({d}, 0.0));
        b.ln2_g = Parameter(p + "ln2_g", filled({d}, 1.0));
        b.ln2_b = Parameter(p + "ln2_b", filled({d}, 0.0));
        b.w1 = Parameter(p + "w1", normal_tensor({d, f}, w_std, rng));
        b.b1 = Parameter(p + "b1", filled({f}, 0.0));
        b.w2 = Parameter(p + "w2", normal_tensor({f, d}, out_std / 2.0, rng));
        b.b2 = Parameter(p + "b2", filled({d}, 0.0));
        blocks.push_back(std::move(b));
    }
    lnf_g = Parameter("lnf_g", filled({d}, 1.0));
    lnf_b = Parameter("lnf_b", filled({d}, 0.0));
    head = Parameter("head", normal_tensor({d, V}, w_std, rng));
}

nn::ParameterRefs FrozenLM::parameters() {
    nn::ParameterRefs out{&tok_emb, &pos_emb};
    for (auto& b : blocks) {
        for (Parameter* p : {&b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo, &b.bo, &b.ln2_g, &b.ln2_b, &b.w1,
                             &b.b1, &b.w2, &b.b2}) {
            out.push_back(p);
        }
    }
    out.insert(out.end(), {&lnf_g, &lnf_b, &head});
    return out;
}

std::vector<const Parameter*> FrozenLM::parameters() const {
    auto refs = const_cast<FrozenLM*>(this)->parameters();
    return {refs.begin(), refs.end()};
}

std::uint64_t FrozenLM::hash() const {
    auto params = parameters();
    return nn::parameter_hash(std::span<const Parameter* const>(params));
}

void FrozenLM::freeze() {
    for (Parameter* p : parameters()) {
        p->trainable = false;
        p->grad = Tensor();
    }
    frozen_ = true;
}

Tensor embed_tokens(const FrozenLM& lm, std::span<const int> ids) {
    if (ids.empty()) throw ShapeError("embed_tokens needs at least one id");
    check_ids(lm, ids);
    const std::size_t d = lm.d_model();
    Tensor out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto src = lm.tok_emb.value.row(std::size_t(ids[i]));
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

namespace {

template <class Model, class Bind>
LmOutput forward_impl(Graph& g, Model& lm, Bind bind, Var prefix, std::span<const int> tokens,
                      std::optional<std::span<const int>> targets) {
    const std::size_t d = lm.d_model();
    const std::size_t p = prefix.valid() ? g.value(prefix).rows() : 0;
    if (prefix.valid() && g.value(prefix).cols() != d) {
        throw ShapeError("soft prefix width " + std::to_string(g.value(prefix).cols()) + " != d_lm " +
                         std::to_string(d));
    }
    const std::size_t n = tokens.size();
    if (n == 0) throw ShapeError("lm_forward needs at least one token");
    if (p + n > lm.config().context) {
        throw Error("context overflow: " + std::to_string(p + n) + " positions > limit " +
                    std::to_string(lm.config().context));
    }
    if (targets && targets->size() != n) {
        throw ShapeError("misaligned targets: " + std::to_string(targets->size()) + " for " + std::to_string(n) +
                         " tokens");
    }
    check_ids(lm, tokens);

    Var x = g.gather_rows(bind(lm.tok_emb), tokens);
    if (prefix.valid()) {
        const Var parts[] = {prefix, x};
        x = g.concat_rows(parts);
    }
    std::vector<int> positions(p + n);
    std::iota(positions.begin(), positions.end(), 0);
    x = g.add(x, g.gather_rows(bind(lm.pos_emb), positions));

    for (auto& b : lm.blocks) {
        Var h = g.layer_norm(x, bind(b.ln1_g), bind(b.ln1_b));
        Var q = g.matmul(h, bind(b.wq));
        Var k = g.matmul(h, bind(b.wk));
        Var v = g.matmul(h, bind(b.wv));
        Var a = g.attention(q, k, v, lm.config().n_heads, nn::AttentionMask::causal());
        x = g.add(x, g.add_bias(g.matmul(a, bind(b.wo)), bind(b.bo)));
        h = g.layer_norm(x, bind(b.ln2_g), bind(b.ln2_b));
        Var f = g.gelu(g.add_bias(g.matmul(h, bind(b.w1)), bind(b.b1)));
        x = g.add(x, g.add_bias(g.matmul(f, bind(b.w2)), bind(b.b2)));
    }
    x = g.layer_norm(x, bind(lm.lnf_g), bind(lm.lnf_b));
    if (p > 0) x = g.slice_rows(x, p, n);

    LmOutput out;
    out.logits = g.matmul(x, bind(lm.head));
    if (targets) {
        for (int t : *targets) out.n_targets += t >= 0 ? 1 : 0;
        if (out.n_targets == 0) throw ShapeError("misaligned targets: no scored position");
        out.loss_sum = g.cross_entropy_sum(out.logits, *targets);
        out.loss = g.scale(out.loss_sum, 1.0 / double(out.n_targets));
    }
    return out;
}

} // namespace

LmOutput lm_forward(Graph& g, const FrozenLM& lm, Var soft_prefix, std::span<const int> tokens,
                    std::optional<std::span<const int>> targets) {
    return forward_impl(g, lm, [&g](const Parameter& p) { return g.constant(p); }, soft_prefix, tokens, targets);
}

LmOutput lm_forward_trainable(Graph& g, FrozenLM& lm, Var soft_prefix, std::span<const int> tokens,
                              std::optional<std::span<const int>> targets) {
    if (lm.frozen()) throw Error("lm_forward_trainable on a frozen model");
    return forward_impl(g, lm, [&g](Parameter& p) { return g.param(p); }, soft_prefix, tokens, targets);
}

std::vector<int> lm_source(const Vocabulary& vocab, const std::vector<std::string>& concepts) {
    std::vector<int> out{Vocabulary::kBos};
    if (concepts.empty()) return out;
    for (std::size_t i = 0; i < concepts.size(); ++i) {
        if (i) out.push_back(Vocabulary::kSep);
        out.push_back(vocab.id(concepts[i]));
    }
    out.push_back(Vocabulary::kEq);
    return out;
}

TeacherForced teacher_force(std::span<const int> source, std::span<const int> target) {
    if (source.empty() || target.empty()) throw ShapeError("teacher forcing needs a source and a target");
    TeacherForced tf;
    tf.tokens.assign(source.begin(), source.end());
    tf.tokens.insert(tf.tokens.end(), target.begin(), target.end() - 1);
    tf.targets.assign(source.size() - 1, -1);
    tf.targets.insert(tf.targets.end(), target.begin(), target.end());
    return tf;
}

// ---- inference session -----------------------------------------------------

namespace {

using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using ConstVecMap = Eigen::Map<const RowVec>;

RowVec layer_norm_vec(const RowVec& x, const Parameter& g, const Parameter& b) {
    const double mean = x.mean();
    const double var = (x.array() - mean).square().mean();
    const double inv = 1.0 / std::sqrt(var + nn::kLayerNormEps);
    const ConstVecMap gain(g.value.data().data(), Eigen::Index(g.value.size()));
    const ConstVecMap bias(b.value.data().data(), Eigen::Index(b.value.size()));
    return ((x.array() - mean) * inv * gain.array() + bias.array()).matrix();
}

ConstVecMap vec(const Parameter& p) { return {p.value.data().data(), Eigen::Index(p.value.size())}; }

} // namespace

LmSession::LmSession(const FrozenLM& lm, const Tensor* soft_prefix)
    : lm_(&lm), keys_(lm.blocks.size()), values_(lm.blocks.size()) {
    if (soft_prefix && !soft_prefix->empty()) {
        if (soft_prefix->cols() != lm.d_model()) throw ShapeError("soft prefix width != d_lm");
        for (std::size_t r = 0; r < soft_prefix->rows(); ++r) {
            const auto row = soft_prefix->row(r);
            push_row(std::vector<double>(row.begin(), row.end()));
        }
    }
}

void LmSession::feed(int token) {
    if (token < 0 || std::size_t(token) >= lm_->vocab().size()) {
        throw DataError("unknown token id " + std::to_string(token));
    }
    const auto row = lm_->tok_emb.value.row(std::size_t(token));
    push_row(std::vector<double>(row.begin(), row.end()));
}

void LmSession::feed(std::span<const int> tokens) {
    for (int t : tokens) feed(t);
}

void LmSession::push_row(std::vector<double> input) {
    const auto& cfg = lm_->config();
    if (pos_ >= cfg.context) {
        throw Error("context overflow: more than " + std::to_string(cfg.context) + " positions");
    }
    const std::size_t d = cfg.d_model, heads = cfg.n_heads, dh = d / heads;
    const double scale = 1.0 / std::sqrt(double(dh));
    RowVec x = ConstVecMap(input.data(), Eigen::Index(d)) + lm_->pos_emb.value.mat().row(Eigen::Index(pos_));
    for (std::size_t l = 0; l < lm_->blocks.size(); ++l) {
        const DecoderBlock& b = lm_->blocks[l];
        const RowVec h = layer_norm_vec(x, b.ln1_g, b.ln1_b);
        const RowVec q = h * b.wq.value.mat();
        const RowVec k = h * b.wk.value.mat();
        const RowVec v = h * b.wv.value.mat();
        keys_[l].insert(keys_[l].end(), k.data(), k.data() + d);
        values_[l].insert(values_[l].end(), v.data(), v.data() + d);
        const std::size_t n = pos_ + 1;
        const nn::ConstMatrixMap K(keys_[l].data(), Eigen::Index(n), Eigen::Index(d));
        const nn::ConstMatrixMap V(values_[l].data(), Eigen::Index(n), Eigen::Index(d));
        RowVec attn(d);
        for (std::size_t hd = 0; hd < heads; ++hd) {
            const auto off = Eigen::Index(hd * dh);
            Eigen::VectorXd s = K.middleCols(off, dh) * q.segment(off, dh).transpose() * scale;
            s = (s.array() - s.maxCoeff()).exp();
            s /= s.sum();
            attn.segment(off, dh) = s.transpose() * V.middleCols(off, dh);
        }
        x += attn * b.wo.value.mat() + vec(b.bo);
        const RowVec h2 = layer_norm_vec(x, b.ln2_g, b.ln2_b);
        RowVec f = h2 * b.w1.value.mat() + vec(b.b1);
        for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = nn::gelu(f[i]);
        x += f * b.w2.value.mat() + vec(b.b2);
    }
    last_.assign(x.data(), x.data() + d);
    ++pos_;
}

std::vector<double> LmSession::next_log_probs() const {
    if (pos_ == 0) throw Error("next_log_probs before any input");
    const RowVec x = layer_norm_vec(ConstVecMap(last_.data(), Eigen::Index(last_.size())), lm_->lnf_g, lm_->lnf_b);
    const RowVec logits = x * lm_->head.value.mat();
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    std::vector<double> out(std::size_t(logits.size()));
    for (Eigen::Index i = 0; i < logits.size(); ++i) out[std::size_t(i)] = logits[i] - lse;
    return out;
}

// ---- pretraining -----------------------------------------------------------

namespace {

std::vector<int> layout_prefix(const PretrainDocument& doc, std::size_t max_prefix, std::mt19937_64& rng) {
    std::vector<int> ctx = doc.context;
    if (ctx.size() > max_prefix) ctx.erase(ctx.begin(), ctx.end() - std::ptrdiff_t(max_prefix));
    if (max_prefix == 0) return {};
    std::uniform_int_distribution<std::size_t> len_dist(ctx.size(), max_prefix);
    const std::size_t len = len_dist(rng);
    std::vector<int> ids(len, Vocabulary::kPad);
    std::uniform_int_distribution<std::size_t> off_dist(0, len - ctx.size());
    const std::size_t off = off_dist(rng);
    std::copy(ctx.begin(), ctx.end(), ids.begin() + std::ptrdiff_t(off));
    return ids;
}

} // namespace

std::unique_ptr<PretrainState> pretrain_init(const LmConfig& lm_config, const PretrainConfig& config,
                                             const Vocabulary& vocab) {
    if (config.max_prefix >= lm_config.context) throw ConfigError("max_prefix must be below the LM context");
    auto state = std::make_unique<PretrainState>();
    state->lm = std::make_unique<FrozenLM>(lm_config, vocab);
    AdamWConfig opt;
    opt.weight_decay = config.weight_decay;
    state->optimizer = AdamW({ParamGroup{"lm", state->lm->parameters(), config.lr}}, opt);
    state->rng.seed(config.seed);
    return state;
}

void pretrain_run(PretrainState& state, std::span<const PretrainDocument> corpus, const PretrainConfig& config,
                  std::size_t until_step) {
    if (corpus.empty()) throw DataError("pretraining corpus is empty");
    FrozenLM& lm = *state.lm;
    std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
    const std::size_t stop = std::min(until_step, config.steps);
    while (state.step < stop) {
        state.optimizer.zero_grad();
        std::vector<std::size_t> batch(config.batch_size);
        std::vector<std::vector<int>> prefixes(config.batch_size);
        std::size_t total = 0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            batch[i] = pick(state.rng);
            prefixes[i] = layout_prefix(corpus[batch[i]], config.max_prefix, state.rng);
            total += corpus[batch[i]].target.size();
        }
        double loss = 0.0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const PretrainDocument& doc = corpus[batch[i]];
            Graph g;
            Var prefix;
            if (!prefixes[i].empty()) prefix = g.gather_rows(g.param(lm.tok_emb), prefixes[i]);
            const TeacherForced tf = teacher_force(doc.source, doc.target);
            const LmOutput out = lm_forward_trainable(g, lm, prefix, tf.tokens, std::span<const int>(tf.targets));
            loss += g.value(out.loss_sum).item();
            g.backward(out.loss_sum, 1.0 / double(total));
        }
        loss /= double(total);
        if (!std::isfinite(loss)) {
            throw NumericError("pretraining diverged at step " + std::to_string(state.step));
        }
        state.optimizer.clip_grad_norm(config.grad_clip);
        state.optimizer.step(warmup_scale(state.step, config.steps, config.warmup_frac));
        state.losses.push_back(loss);
        ++state.step;
    }
}

FrozenLM pretrain_lm(std::span<const PretrainDocument> corpus, const LmConfig& lm_config,
                     const PretrainConfig& config, const Vocabulary& vocab, std::vector<double>* loss_curve) {
    if (corpus.empty()) throw DataError("pretraining corpus is empty");
    auto state = pretrain_init(lm_config, config, vocab);
    pretrain_run(*state, corpus, config, config.steps);
    if (loss_curve) *loss_curve = state->losses;
    FrozenLM lm(*state->lm);
    lm.freeze();
    return lm;
}

double lm_eval_loss(const FrozenLM& lm, std::span<const PretrainDocument> docs, std::size_t max_prefix,
                    std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    double total_loss = 0.0;
    std::size_t total = 0;
    for (const auto& doc : docs) {
        const std::vector<int> prefix_ids = layout_prefix(doc, max_prefix, rng);
        Graph g;
        Var prefix;
        if (!prefix_ids.empty()) prefix = g.input(embed_tokens(lm, prefix_ids));
        const TeacherForced tf = teacher_force(doc.source, doc.target);
        const LmOutput out = lm_forward(g, lm, prefix, tf.tokens, std::span<const int>(tf.targets));
        total_loss += g.value(out.loss_sum).item();
        total += out.n_targets;
    }
    return total == 0 ? 0.0 : total_loss / double(total);
}

// ---- checkpoints -----------------------------------------------------------

namespace {

using detail::json;

json lm_to_json(const FrozenLM& lm) {
    const auto& c = lm.config();
    return json{{"format", "more-lm"},
                {"version", 1},
                {"d_lm", c.d_model},
                {"n_layers", c.n_layers},
                {"n_heads", c.n_heads},
                {"context", c.context},
                {"ffn_mult", c.ffn_mult},
                {"seed", c.seed},
                {"embed_std", c.embed_std},
                {"frozen", lm.frozen()},
                {"vocab", lm.vocab().tokens()},
                {"hash", nn::hash_hex(lm.hash())},
                {"params", detail::params_to_json(lm.parameters())}};
}

FrozenLM lm_from_json(const json& j) {
    if (j.value("format", "") != "more-lm") throw DataError("not an LM checkpoint");
    if (j.at("version").get<int>() != 1) throw DataError("unsupported LM checkpoint version");
    LmConfig c;
    c.d_model = j.at("d_lm").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.context = j.at("context").get<std::size_t>();
    c.ffn_mult = j.at("ffn_mult").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.embed_std = j.at("embed_std").get<double>();
    FrozenLM lm(c, Vocabulary::from_tokens(j.at("vocab").get<std::vector<std::string>>()));
    detail::params_from_json(j.at("params"), lm.parameters());
    if (nn::hash_hex(lm.hash()) != j.at("hash").get<std::string>()) {
        throw DataError("LM checkpoint hash mismatch");
    }
    if (j.at("frozen").get<bool>()) lm.freeze();
    return lm;
}

} // namespace

void save_lm(const FrozenLM& lm, const std::string& path) { detail::write_json_file(lm_to_json(lm), path); }

FrozenLM load_lm(const std::string& path) {
    try {
        return lm_from_json(detail::read_json_file(path));
    } catch (const json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
}

void save_pretrain_state(const PretrainState& state, const std::string& path) {
    json j{{"format", "more-pretrain-state"}, {"lm", lm_to_json(*state.lm)}, {"step", state.step},
           {"losses", state.losses}, {"adam_t", state.optimizer.steps_taken()}};
    std::ostringstream rng;
    rng << state.rng;
    j["rng"] = rng.str();
    auto& opt = const_cast<AdamW&>(state.optimizer);
    json m = json::array(), v = json::array();
    for (const auto& t : opt.first_moments()) m.push_back(detail::tensor_to_json(t));
    for (const auto& t : opt.second_moments()) v.push_back(detail::tensor_to_json(t));
    j["m"] = std::move(m);
    j["v"] = std::move(v);
    detail::write_json_file(j, path);
}

std::unique_ptr<PretrainState> load_pretrain_state(const std::string& path, const PretrainConfig& config) {
    try {
        const json j = detail::read_json_file(path);
        if (j.value("format", "") != "more-pretrain-state") throw DataError(path + ": not a pretraining state");
        FrozenLM saved = lm_from_json(j.at("lm"));
        auto state = pretrain_init(saved.config(), config, saved.vocab());
        detail::params_from_json(j.at("lm").at("params"), state->lm->parameters());
        state->step = j.at("step").get<std::size_t>();
        state->losses = j.at("losses").get<std::vector<double>>();
        std::istringstream rng(j.at("rng").get<std::string>());
        rng >> state->rng;
        auto& m = state->optimizer.first_moments();
        auto& v = state->optimizer.second_moments();
        for (std::size_t i = 0; i < m.size(); ++i) {
            m[i] = detail::tensor_from_json(j.at("m").at(i));
            v[i] = detail::tensor_from_json(j.at("v").at(i));
        }
        state->optimizer.set_steps_taken(j.at("adam_t").get<std::size_t>());
        return state;
    } catch (const json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
}

} // namespace more
