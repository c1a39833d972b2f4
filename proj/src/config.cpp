// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "more/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "more/error.hpp"

namespace more {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_unsigned(const std::string& key, const std::string& v) {
    T out{};
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(out)) {
        throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

std::string fmt_double(double x) {
    std::ostringstream out;
    out.precision(17);
    out << x;
    return out.str();
}

template <class C>
struct Field {
    std::string key;
    std::function<std::string(const C&)> get;
    std::function<void(C&, const std::string&)> set;
};

template <class C, class T>
Field<C> size_field(std::string key, T C::*member) {
    return {key, [member](const C& c) { return std::to_string(c.*member); },
            [key, member](C& c, const std::string& v) { c.*member = parse_unsigned<T>(key, v); }};
}

template <class C>
Field<C> double_field(std::string key, double C::*member) {
    return {key, [member](const C& c) { return fmt_double(c.*member); },
            [key, member](C& c, const std::string& v) { c.*member = parse_double(key, v); }};
}

template <class C>
Field<C> bool_field(std::string key, bool C::*member) {
    return {key, [member](const C& c) { return std::string(c.*member ? "true" : "false"); },
            [key, member](C& c, const std::string& v) { c.*member = parse_bool(key, v); }};
}

template <class C>
Field<C> string_field(std::string key, std::string C::*member) {
    return {key, [member](const C& c) { return c.*member; },
            [member](C& c, const std::string& v) { c.*member = v; }};
}

// Lifts a field of a sub-object into the enclosing config.
template <class Outer, class Inner>
Field<Outer> nest(Field<Inner> f, Inner Outer::*sub) {
    return {f.key, [get = f.get, sub](const Outer& o) { return get(o.*sub); },
            [set = f.set, sub](Outer& o, const std::string& v) { set(o.*sub, v); }};
}

std::vector<Field<IntegratorConfig>> integrator_fields() {
    using I = IntegratorConfig;
    return {size_field("d_enc", &I::d_enc),          size_field("d_int", &I::d_int),
            size_field("d_lm", &I::d_lm),            size_field("l_q", &I::l_q),
            size_field("int_heads", &I::n_heads),    size_field("int_ffn_mult", &I::ffn_mult),
            size_field("concept_slots", &I::n_concept_slots), double_field("query_std", &I::query_std),
            size_field("integrator_seed", &I::seed)};
}

const std::vector<Field<TrainConfig>>& train_fields() {
    using C = TrainConfig;
    static const std::vector<Field<C>> fields = [] {
        std::vector<Field<C>> f = {
            size_field("T", &C::T),
            double_field("p_hat", &C::p_hat),
            size_field("total_steps", &C::total_steps),
            double_field("warmup_frac", &C::warmup_frac),
            size_field("batch_size", &C::batch_size),
            double_field("lr_task", &C::lr_task),
            double_field("lr_ra", &C::lr_ra),
            double_field("beta1", &C::beta1),
            double_field("beta2", &C::beta2),
            double_field("weight_decay", &C::weight_decay),
            double_field("grad_clip", &C::grad_clip),
            size_field("seed", &C::seed),
            {"mode", [](const C& c) { return to_string(c.mode); },
             [](C& c, const std::string& v) { c.mode = parse_train_mode(v); }},
            bool_field("no_concept_input", &C::no_concept_input),
            bool_field("no_query_dropout", &C::no_query_dropout),
            bool_field("no_noisy_ra", &C::no_noisy_ra),
            size_field("M_used", &C::M_used),
            size_field("N_used", &C::N_used),
            size_field("l_task", &C::l_task),
            size_field("prepend_k", &C::prepend_k),
            double_field("prompt_init_std", &C::prompt_init_std),
        };
        for (auto& i : integrator_fields()) {
            if (i.key == "integrator_seed") continue;
            f.push_back(nest(i, &C::integrator));
        }
        return f;
    }();
    return fields;
}

std::string join_weights(const std::vector<double>& w) {
    std::string out;
    for (double x : w) out += (out.empty() ? "" : ",") + fmt_double(x);
    return out;
}

const std::vector<Field<RunConfig>>& run_fields() {
    using R = RunConfig;
    static const std::vector<Field<R>> fields = [] {
        std::vector<Field<R>> f;
        for (const auto& t : train_fields()) {
            if (t.key == "d_lm" || t.key == "d_enc") continue;  // shared widths, handled below
            f.push_back(nest(t, &R::train));
        }
        f.push_back({"d_lm", [](const R& r) { return std::to_string(r.lm.d_model); },
                     [](R& r, const std::string& v) { r.lm.d_model = parse_unsigned<std::size_t>("d_lm", v); }});
        f.push_back({"d_enc", [](const R& r) { return std::to_string(r.train.integrator.d_enc); },
                     [](R& r, const std::string& v) {
                         r.train.integrator.d_enc = parse_unsigned<std::size_t>("d_enc", v);
                     }});
        f.push_back(size_field("encoder_seed", &R::encoder_seed));

        using L = LmConfig;
        for (auto& l : std::vector<Field<L>>{size_field("lm_layers", &L::n_layers), size_field("lm_heads", &L::n_heads),
                                             size_field("lm_context", &L::context),
                                             size_field("lm_ffn_mult", &L::ffn_mult), size_field("lm_seed", &L::seed),
                                             double_field("lm_embed_std", &L::embed_std)}) {
            f.push_back(nest(l, &R::lm));
        }
        using P = PretrainConfig;
        for (auto& p : std::vector<Field<P>>{
                 size_field("pretrain_steps", &P::steps), size_field("pretrain_batch", &P::batch_size),
                 double_field("pretrain_lr", &P::lr), double_field("pretrain_warmup", &P::warmup_frac),
                 double_field("pretrain_weight_decay", &P::weight_decay),
                 double_field("pretrain_grad_clip", &P::grad_clip), size_field("pretrain_max_prefix", &P::max_prefix),
                 size_field("pretrain_seed", &P::seed)}) {
            f.push_back(nest(p, &R::pretrain));
        }
        using D = DataConfig;
        using W = WorldSizes;
        std::vector<Field<D>> data = {size_field("world_seed", &D::world_seed),
                                      size_field("data_seed", &D::data_seed),
                                      size_field("n_train", &D::n_train),
                                      size_field("n_dev", &D::n_dev),
                                      size_field("n_test", &D::n_test),
                                      size_field("pretrain_docs", &D::n_pretrain_docs),
                                      size_field("corpus_seed", &D::corpus_seed)};
        for (auto& w : std::vector<Field<W>>{
                 size_field("n_entities", &W::n_entities), size_field("n_relations", &W::n_relations),
                 size_field("n_locations", &W::n_locations), size_field("n_adjectives", &W::n_adjectives),
                 size_field("n_adverbs", &W::n_adverbs), size_field("templates_per_relation", &W::templates_per_relation),
                 size_field("n_pairs", &W::n_pairs), size_field("options_per_pair", &W::options_per_pair),
                 {"option_weights", [](const W& w) { return join_weights(w.option_weights); },
                  [](W& w, const std::string& v) {
                      w.option_weights.clear();
                      std::stringstream in(v);
                      std::string item;
                      while (std::getline(in, item, ',')) w.option_weights.push_back(parse_double("option_weights", trim(item)));
                  }}}) {
            data.push_back(nest(w, &D::sizes));
        }
        using O = DatasetOptions;
        for (auto& o : std::vector<Field<O>>{size_field("min_items", &O::min_items), size_field("max_items", &O::max_items),
                                             double_field("distractor_only_fraction", &O::distractor_only_fraction),
                                             double_field("train_distractor_only_fraction",
                                                          &O::train_distractor_only_fraction)}) {
            data.push_back(nest(o, &D::options));
        }
        for (auto& d : data) f.push_back(nest(d, &R::data));
        using E = EvalConfig;
        for (auto& e : std::vector<Field<E>>{size_field("beam", &E::beam), size_field("max_len", &E::max_len),
                                             size_field("derangement_seed", &E::derangement_seed)}) {
            f.push_back(nest(e, &R::eval));
        }
        f.push_back(string_field("data_dir", &R::data_dir));
        f.push_back(string_field("lm_path", &R::lm_path));
        f.push_back(string_field("checkpoint", &R::checkpoint));
        return f;
    }();
    return fields;
}

} // namespace

void RunConfig::sync() {
    train.integrator.d_lm = lm.d_model;
}

void apply_key(RunConfig& config, const std::string& key, const std::string& value) {
    for (const auto& f : run_fields()) {
        if (f.key == key) {
            f.set(config, value);
            config.sync();
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

ConfigEntries config_entries(const RunConfig& config) {
    ConfigEntries out;
    for (const auto& f : run_fields()) out.emplace_back(f.key, f.get(config));
    return out;
}

std::string format_entries(const ConfigEntries& entries) {
    std::string out;
    for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
    return out;
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
    RunConfig config;
    config.sync();
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::string> seen;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = origin + ":" + std::to_string(lineno);
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
            throw ConfigError(where + ": key '" + key + "' assigned twice");
        }
        seen.push_back(key);
        try {
            apply_key(config, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }
    return config;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str(), path);
}

ConfigEntries train_config_entries(const TrainConfig& config) {
    ConfigEntries out;
    for (const auto& f : train_fields()) out.emplace_back(f.key, f.get(config));
    out.emplace_back("learnable_concepts", config.integrator.learnable_concepts ? "true" : "false");
    out.emplace_back("integrator_seed", std::to_string(config.integrator.seed));
    return out;
}

void apply_train_key(TrainConfig& config, const std::string& key, const std::string& value) {
    if (key == "integrator_seed") {
        config.integrator.seed = parse_unsigned<std::uint64_t>(key, value);
        return;
    }
    if (key == "learnable_concepts") {
        config.integrator.learnable_concepts = parse_bool(key, value);
        return;
    }
    for (const auto& f : train_fields()) {
        if (f.key == key) return f.set(config, value);
    }
    throw ConfigError("unknown training key '" + key + "'");
}

} // namespace more
