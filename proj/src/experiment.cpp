// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "more/experiment.hpp"

#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "more/error.hpp"

namespace more {

std::string RetrievalChoice::label() const {
    switch (mode) {
    case RetrievalMode::oracle:
        return "oracle";
    case RetrievalMode::none:
        return "none";
    case RetrievalMode::irrelevant:
        return "irrelevant";
    case RetrievalMode::top_k:
        return "k=" + std::to_string(k);
    }
    return "oracle";
}

std::vector<RetrievalChoice> parse_retrieval(const std::string& text) {
    // Comma list; bare integers continue the most recent "k=" entry.
    std::vector<RetrievalChoice> out;
    std::stringstream in(text);
    std::string item;
    bool in_k = false;
    while (std::getline(in, item, ',')) {
        if (item == "oracle" || item == "none" || item == "irrelevant") {
            out.push_back({item == "oracle" ? RetrievalMode::oracle
                                            : item == "none" ? RetrievalMode::none : RetrievalMode::irrelevant,
                           0});
            in_k = false;
            continue;
        }
        if (item.rfind("k=", 0) == 0) {
            item = item.substr(2);
            in_k = true;
        } else if (!in_k) {
            throw ConfigError("unknown retrieval mode '" + item + "' (oracle, none, irrelevant or k=N[,N...])");
        }
        std::size_t pos = 0;
        unsigned long k = 0;
        try {
            k = std::stoul(item, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != item.size() || k == 0) throw ConfigError("retrieval count must be a positive integer: '" + item + "'");
        out.push_back({RetrievalMode::top_k, k});
    }
    if (out.empty()) throw ConfigError("empty retrieval choice");
    return out;
}

std::vector<std::size_t> derangement(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> out(n);
    std::iota(out.begin(), out.end(), 0);
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i-- > 1;) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
        std::swap(out[i], out[j]);
    }
    return out;
}

EvalResult evaluate(const TrainedModel& model, const FrozenLM& lm, const RetrievalEncoder& encoder,
                    std::span<const Example> examples, const WorldSpec* world, const RetrievalChoice& choice,
                    const EvalConfig& config) {
    const auto& cfg = model.config;
    const bool needs_retrieval = (model.integrator || cfg.mode == TrainMode::prepend) &&
                                 choice.mode != RetrievalMode::none;
    const auto perm = derangement(examples.size(), config.derangement_seed);
    const Vocabulary& vocab = lm.vocab();

    EvalResult result;
    result.choice = choice;
    std::vector<EvalRecord> records;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const Example& ex = examples[i];
        RetrievalSet used;
        if (needs_retrieval) {
            const Example& owner = choice.mode == RetrievalMode::irrelevant ? examples[perm[i]] : ex;
            if (!owner.has_retrieval) throw DataError("missing retrieval record for example '" + owner.id + "'");
            used = choice.mode == RetrievalMode::top_k ? owner.retrieval.head(choice.k, choice.k)
                                                       : owner.retrieval.head(cfg.M_used, cfg.N_used);
        }
        std::vector<int> source;
        if (cfg.mode == TrainMode::prepend) {
            Example view = ex;
            view.retrieval = used;
            source = prepend_baseline_input(view, needs_retrieval ? cfg.prepend_k : 0, vocab);
        } else {
            source = lm_source(vocab, ex.concepts);
        }
        const bool with_ra = model.integrator && needs_retrieval && !used.empty();
        const nn::Tensor prefix = model.prefix(encoder, ex.concepts, with_ra ? &used : nullptr);
        const Hypothesis h = beam_search(lm, &prefix, source, config.beam, config.max_len);

        Prediction pred{ex.id, vocab.decode(h.tokens), h.score};
        EvalRecord rec;
        rec.id = ex.id;
        rec.prediction = pred.tokens;
        for (const auto& r : ex.references) rec.references.push_back(tokenize(r));
        rec.concepts = ex.concepts;
        rec.gold_facts = ex.gold_facts;
        records.push_back(std::move(rec));
        result.predictions.push_back(std::move(pred));
    }
    if (world) {
        const FactParser parse = [world](const Tokens& t) { return world->parse(t); };
        result.metrics = score_corpus(records, &parse);
    } else {
        result.metrics = score_corpus(records);
    }
    return result;
}

void write_predictions_jsonl(const std::vector<Prediction>& predictions, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    for (const auto& p : predictions) {
        nlohmann::ordered_json j;
        j["id"] = p.id;
        j["prediction"] = join_tokens(p.tokens);
        j["score"] = p.score;
        out << j.dump() << '\n';
    }
}

RetrievalEncoder make_encoder(const WorldSpec& world, std::size_t d_enc, std::uint64_t seed) {
    return RetrievalEncoder(world.entities, world.relations, world.words(), d_enc, seed);
}

WorldBundle build_world(const RunConfig& config) {
    WorldBundle b;
    b.world = generate_world(config.data.world_seed, config.data.sizes);
    b.vocab = b.world.vocabulary();
    std::mt19937_64 rng(config.data.data_seed);
    b.data = sample_dataset(b.world, config.data.n_train, config.data.n_dev, config.data.n_test, rng,
                            config.data.options);
    b.encoder = std::make_unique<RetrievalEncoder>(make_encoder(b.world, config.train.integrator.d_enc,
                                                                config.encoder_seed));
    return b;
}

std::vector<PretrainDocument> build_corpus(const RunConfig& config, const WorldBundle& bundle) {
    std::set<std::string> excluded;
    for (const auto* split : {&bundle.data.dev, &bundle.data.test}) {
        for (const auto& ex : *split) excluded.insert(concept_key(ex.concepts));
    }
    std::mt19937_64 rng(config.data.corpus_seed);
    CorpusOptions opt;
    opt.max_prefix = config.pretrain.max_prefix;
    return sample_pretrain_corpus(bundle.world, bundle.vocab, config.data.n_pretrain_docs, excluded, rng, opt);
}

} // namespace more
