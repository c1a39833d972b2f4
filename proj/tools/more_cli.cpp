// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "more/error.hpp"
#include "more/experiment.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace more;

namespace {

struct Common {
    std::string config_path;
    std::string out = ".";
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "key = value configuration file");
    cmd->add_option("--out", c.out, "output directory; relative config paths resolve against it");
    cmd->add_option("--set", c.overrides, "extra key=value assignment (repeatable)");
}

std::string under(const Common& c, const std::string& path) {
    return fs::path(path).is_absolute() ? path : (fs::path(c.out) / path).string();
}

RunConfig resolve(const Common& c, const std::string& command) {
    RunConfig cfg = c.config_path.empty() ? parse_run_config("") : load_run_config(c.config_path);
    for (const auto& kv : c.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        apply_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    fs::create_directories(c.out);
    const std::string echo = format_entries(config_entries(cfg));
    std::ofstream(fs::path(c.out) / (command + ".config")) << echo;
    std::cerr << "[" << command << "] resolved configuration:\n" << echo;
    return cfg;
}

struct LoadedData {
    WorldSpec world;
    std::vector<Example> train, dev, test;
};

LoadedData load_data(const Common& c, const RunConfig& cfg, bool with_retrieval) {
    const std::string dir = under(c, cfg.data_dir);
    LoadedData d;
    d.world = read_world(dir + "/world.json");
    d.train = read_examples_jsonl(dir + "/examples/train.jsonl");
    d.dev = read_examples_jsonl(dir + "/examples/dev.jsonl");
    d.test = read_examples_jsonl(dir + "/examples/test.jsonl");
    if (with_retrieval) {
        for (auto* split : {&d.train, &d.dev, &d.test}) attach_retrieved_jsonl(*split, dir + "/retrieved.jsonl");
    }
    return d;
}

int gen_data(const Common& c, bool force) {
    const RunConfig cfg = resolve(c, "gen-data");
    const fs::path dir = under(c, cfg.data_dir);
    if (fs::exists(dir / "world.json") && !force) {
        throw DataError(dir.string() + " already holds a dataset; pass --force to overwrite");
    }
    fs::create_directories(dir / "examples");
    const WorldBundle b = build_world(cfg);
    write_world(b.world, (dir / "world.json").string());
    write_examples_jsonl(b.data.train, (dir / "examples/train.jsonl").string());
    write_examples_jsonl(b.data.dev, (dir / "examples/dev.jsonl").string());
    write_examples_jsonl(b.data.test, (dir / "examples/test.jsonl").string());
    write_retrieved_jsonl(b.data.train, (dir / "retrieved.jsonl").string());
    write_retrieved_jsonl(b.data.dev, (dir / "retrieved.jsonl").string(), true);
    write_retrieved_jsonl(b.data.test, (dir / "retrieved.jsonl").string(), true);
    json out;
    out["train"] = b.data.train.size();
    out["dev"] = b.data.dev.size();
    out["test"] = b.data.test.size();
    out["concept_only_ceiling"] = b.world.concept_only_ceiling();
    out["data_dir"] = dir.string();
    std::cout << out.dump() << std::endl;
    return 0;
}

int pretrain(const Common& c, bool resume, std::size_t stop_after) {
    const RunConfig cfg = resolve(c, "pretrain");
    const LoadedData d = load_data(c, cfg, false);
    WorldBundle bundle;
    bundle.world = d.world;
    bundle.vocab = d.world.vocabulary();
    bundle.data.dev = d.dev;
    bundle.data.test = d.test;
    const auto corpus = build_corpus(cfg, bundle);

    const std::string state_path = (fs::path(c.out) / "pretrain_state.json").string();
    std::unique_ptr<PretrainState> state;
    if (resume && fs::exists(state_path)) {
        state = load_pretrain_state(state_path, cfg.pretrain);
        std::cerr << "[pretrain] resuming at step " << state->step << "\n";
    } else {
        state = pretrain_init(cfg.lm, cfg.pretrain, bundle.vocab);
    }
    const std::size_t until = stop_after ? std::min(stop_after, cfg.pretrain.steps) : cfg.pretrain.steps;
    pretrain_run(*state, corpus, cfg.pretrain, until);
    save_pretrain_state(*state, state_path);

    std::ofstream curve(fs::path(c.out) / "pretrain_loss.csv");
    curve << "step,loss\n";
    for (std::size_t i = 0; i < state->losses.size(); ++i) curve << i << ',' << state->losses[i] << '\n';

    json out;
    out["step"] = state->step;
    out["final_loss"] = state->losses.empty() ? 0.0 : state->losses.back();
    if (state->step >= cfg.pretrain.steps) {
        FrozenLM lm(*state->lm);
        lm.freeze();
        const std::string lm_path = under(c, cfg.lm_path);
        save_lm(lm, lm_path);
        out["lm"] = lm_path;
        out["lm_hash"] = nn::hash_hex(lm.hash());
    } else {
        out["lm"] = nullptr;
    }
    std::cout << out.dump() << std::endl;
    return 0;
}

int train_cmd(const Common& c) {
    const RunConfig cfg = resolve(c, "train");
    const LoadedData d = load_data(c, cfg, cfg.train.uses_retrieval() || cfg.train.mode == TrainMode::prepend);
    const FrozenLM lm = load_lm(under(c, cfg.lm_path));
    const RetrievalEncoder encoder = make_encoder(d.world, cfg.train.integrator.d_enc, cfg.encoder_seed);
    const auto before = lm.hash();
    auto state = train(cfg.train, d.train, lm, encoder);
    const std::string ckpt = under(c, cfg.checkpoint);
    save_checkpoint(state->model, ckpt);
    write_metrics_csv(state->metrics, (fs::path(c.out) / "metrics.csv").string());
    json out;
    out["steps"] = state->step;
    out["final_loss"] = state->metrics.empty() ? 0.0 : state->metrics.back().loss;
    out["mode"] = to_string(cfg.train.mode);
    out["integrator"] = state->model.integrator != nullptr;
    out["lm_hash_before"] = nn::hash_hex(before);
    out["lm_hash_after"] = nn::hash_hex(lm.hash());
    out["checkpoint"] = ckpt;
    std::cout << out.dump() << std::endl;
    return 0;
}

int eval_cmd(const Common& c, const std::string& split, const std::string& retrieval) {
    const RunConfig cfg = resolve(c, "eval");
    const auto choices = parse_retrieval(retrieval);
    TrainedModel model = load_checkpoint(under(c, cfg.checkpoint));
    const bool wants_retrieval = model.integrator || model.config.mode == TrainMode::prepend;
    const LoadedData d = load_data(c, cfg, wants_retrieval);
    const FrozenLM lm = load_lm(under(c, cfg.lm_path));
    if (lm.hash() != model.lm_hash) throw DataError("checkpoint was trained against a different LM");
    const RetrievalEncoder encoder = make_encoder(d.world, model.config.integrator.d_enc, cfg.encoder_seed);
    const std::vector<Example>* examples = split == "train" ? &d.train : split == "dev" ? &d.dev : &d.test;
    if (split != "train" && split != "dev" && split != "test") throw ConfigError("unknown split '" + split + "'");
    for (const auto& choice : choices) {
        const EvalResult r = evaluate(model, lm, encoder, *examples, &d.world, choice, cfg.eval);
        std::string label = choice.label();
        std::replace(label.begin(), label.end(), '=', '_');
        write_predictions_jsonl(r.predictions, (fs::path(c.out) / ("predictions_" + split + "_" + label + ".jsonl")).string());
        json out = json::parse(r.metrics.to_json());
        out["retrieval"] = choice.label();
        out["split"] = split;
        std::cout << out.dump() << std::endl;
    }
    return 0;
}

int score_cmd(const std::string& pred_path, const std::string& examples_path, const std::string& world_path) {
    const auto examples = read_examples_jsonl(examples_path);
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < examples.size(); ++i) index[examples[i].id] = i;
    std::vector<EvalRecord> records;
    std::ifstream in(pred_path);
    if (!in) throw DataError("cannot read " + pred_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(pred_path + ":" + std::to_string(lineno) + ": malformed JSON");
        }
        const auto it = index.find(j.value("id", ""));
        if (it == index.end()) throw DataError(pred_path + ":" + std::to_string(lineno) + ": unknown id");
        const Example& ex = examples[it->second];
        EvalRecord r{ex.id, tokenize(j.value("prediction", "")), {}, ex.concepts, ex.gold_facts};
        for (const auto& ref : ex.references) r.references.push_back(tokenize(ref));
        records.push_back(std::move(r));
    }
    MetricBlock m;
    if (!world_path.empty()) {
        const WorldSpec world = read_world(world_path);
        const FactParser parse = [&world](const Tokens& t) { return world.parse(t); };
        m = score_corpus(records, &parse);
    } else {
        m = score_corpus(records);
    }
    std::cout << m.to_json() << std::endl;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Retrieval-augmented soft-prompt generation toolkit"};
    app.require_subcommand(1);

    Common gen_c, pre_c, train_c, eval_c;
    bool force = false, resume = false;
    std::size_t stop_after = 0;
    std::string split = "test", retrieval = "oracle", pred_path, examples_path, world_path;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic world, splits and retrieval records");
    add_common(gen, gen_c);
    gen->add_flag("--force", force, "overwrite an existing dataset");

    auto* pre = app.add_subcommand("pretrain", "pretrain and freeze the language model");
    add_common(pre, pre_c);
    pre->add_flag("--resume", resume, "continue from pretrain_state.json when present");
    pre->add_option("--stop-after", stop_after, "stop after this many steps (state is saved)");

    auto* tr = app.add_subcommand("train", "train the task prompt and Integrator");
    add_common(tr, train_c);

    auto* ev = app.add_subcommand("eval", "decode a split and score it");
    add_common(ev, eval_c);
    ev->add_option("--split", split, "train, dev or test");
    ev->add_option("--retrieval", retrieval, "oracle, none, irrelevant or k=N[,N...]");

    auto* sc = app.add_subcommand("score", "score a predictions file");
    sc->add_option("--pred", pred_path, "predictions JSONL")->required();
    sc->add_option("--examples", examples_path, "examples JSONL")->required();
    sc->add_option("--world", world_path, "world.json for relation accuracy");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    try {
        if (*gen) return gen_data(gen_c, force);
        if (*pre) return pretrain(pre_c, resume, stop_after);
        if (*tr) return train_cmd(train_c);
        if (*ev) return eval_cmd(eval_c, split, retrieval);
        if (*sc) return score_cmd(pred_path, examples_path, world_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
