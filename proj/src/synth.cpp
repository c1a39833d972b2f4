// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#include "more/synth.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "more/error.hpp"

namespace more {

using json = nlohmann::ordered_json;

namespace {

const std::vector<std::string> kEntityPool = {
    "dog",    "cat",    "horse",  "child",  "woman", "man",    "girl",   "boy",    "farmer", "chef",
    "bird",   "fish",   "ball",   "kite",   "boat",  "car",    "bike",   "tree",   "apple",  "bread",
    "book",   "guitar", "hat",    "rope",   "fence", "bench",  "cup",    "table",  "chair",  "box",
    "cow",    "sheep",  "goat",   "baby",   "nurse", "doctor", "artist", "player", "dancer", "pilot",
    "rabbit", "duck",   "mouse",  "letter", "basket", "ladder", "bucket", "blanket"};
const std::vector<std::string> kRelationPool = {
    "chases", "holds",  "watches", "feeds",  "carries", "pushes", "pulls", "throws",
    "catches", "paints", "washes", "follows", "kicks",  "lifts",  "drops", "cleans",
    "rides",  "climbs", "fixes",  "sells",  "buys",    "hugs",   "drags", "finds"};
const std::vector<std::string> kLocationPool = {"park",   "kitchen", "garden", "street", "beach", "field",
                                                "yard",   "river",   "forest", "market", "house", "office",
                                                "school", "lake",    "farm",   "station"};
const std::vector<std::string> kAdjectivePool = {"small", "big",   "old",   "young", "happy", "tired",
                                                 "red",   "brown", "quiet", "busy",  "tall",  "little",
                                                 "hungry", "lazy", "proud", "clever"};
const std::vector<std::string> kAdverbPool = {"slowly",  "quickly", "gently",  "happily", "quietly",  "carefully",
                                              "eagerly", "calmly",  "proudly", "lazily",  "playfully", "bravely"};
const std::vector<std::string> kFunctionWords = {"the", "a", "in", "near", "at"};

const std::vector<std::string> kPatternPool = {
    "the {adj} {s} {v} the {o} {adv} in the {loc}",
    "in the {loc} the {adj} {s} {adv} {v} the {o}",
    "a {adj} {s} {v} a {o} {adv} near the {loc}",
    "at the {loc} the {adj} {s} {v} the {o} {adv}",
    "the {adj} {s} {adv} {v} a {o} at the {loc}",
    "near the {loc} a {adj} {s} {v} the {o} {adv}",
};

template <class T>
std::vector<T> take_shuffled(const std::vector<T>& pool, std::size_t n, std::mt19937_64& rng, const char* what) {
    if (n > pool.size()) {
        throw ConfigError(std::string("world asks for ") + std::to_string(n) + " " + what + ", pool has " +
                          std::to_string(pool.size()));
    }
    std::vector<T> items = pool;
    std::shuffle(items.begin(), items.end(), rng);
    items.resize(n);
    return items;
}

std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double unit(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

const RelationOption& pick_option(const PairEntry& pair, std::mt19937_64& rng) {
    double u = unit(rng);
    for (const auto& o : pair.options) {
        if (u < o.weight) return o;
        u -= o.weight;
    }
    return pair.options.back();
}

bool contains(const std::vector<std::string>& v, const std::string& w) {
    return std::find(v.begin(), v.end(), w) != v.end();
}

// Matches `pattern` (slot tokens) against tokens[pos..], filling a fact.
bool match(const WorldSpec& w, const std::vector<std::string>& pat, std::size_t pi,
           const std::vector<std::string>& tokens, std::size_t ti, Fact& fact) {
    if (pi == pat.size()) return ti == tokens.size();
    const std::string& p = pat[pi];
    if (p == "{adj}" || p == "{adv}") {
        const auto& pool = p == "{adj}" ? w.adjectives : w.adverbs;
        if (ti < tokens.size() && contains(pool, tokens[ti]) && match(w, pat, pi + 1, tokens, ti + 1, fact)) return true;
        return match(w, pat, pi + 1, tokens, ti, fact);
    }
    if (ti == tokens.size()) return false;
    const std::string& t = tokens[ti];
    if (p == "{s}" || p == "{o}") {
        if (!contains(w.entities, t)) return false;
        (p == "{s}" ? fact.subject : fact.object) = t;
    } else if (p == "{v}") {
        if (!contains(w.relations, t)) return false;
        fact.relation = t;
    } else if (p == "{loc}") {
        if (!contains(w.locations, t)) return false;
    } else if (p != t) {
        return false;
    }
    return match(w, pat, pi + 1, tokens, ti + 1, fact);
}

Fact distractor_fact(const WorldSpec& world, std::size_t avoid_pair, std::mt19937_64& rng) {
    std::size_t p = uniform(rng, 0, world.pairs.size() - 2);
    if (p >= avoid_pair) ++p;
    return world.pairs[p].fact(pick_option(world.pairs[p], rng));
}

std::vector<std::string> snippet(const Fact& f, std::mt19937_64& rng) {
    const std::string article = unit(rng) < 0.5 ? "the" : "a";
    return {article, f.subject, f.relation, article, f.object};
}

json fact_json(const Fact& f) { return json::array({f.subject, f.relation, f.object}); }

Fact fact_from(const json& j) {
    if (!j.is_array() || j.size() != 3) throw DataError("fact must be a [subject, relation, object] triple");
    return {j[0].get<std::string>(), j[1].get<std::string>(), j[2].get<std::string>()};
}

std::ofstream open_out(const std::string& path, bool append = false) {
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path);
    return in;
}

template <class F>
void for_each_json_line(const std::string& path, F&& fn) {
    auto in = open_in(path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
        }
        try {
            fn(j, lineno);
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

const json& field(const json& j, const char* name, const std::string& where) {
    if (!j.contains(name)) throw DataError(where + ": missing field '" + name + "'");
    return j.at(name);
}

} // namespace

Fact PairEntry::fact(const RelationOption& option) const {
    return option.forward ? Fact{a, option.relation, b} : Fact{b, option.relation, a};
}

std::vector<std::string> WorldSpec::words() const {
    std::vector<std::string> out = kFunctionWords;
    for (const auto* group : {&entities, &relations, &locations, &adjectives, &adverbs}) {
        out.insert(out.end(), group->begin(), group->end());
    }
    return out;
}

Vocabulary WorldSpec::vocabulary() const { return Vocabulary(words()); }

std::size_t WorldSpec::relation_index(const std::string& relation) const {
    const auto it = std::find(relations.begin(), relations.end(), relation);
    if (it == relations.end()) throw DataError("unknown relation '" + relation + "'");
    return std::size_t(it - relations.begin());
}

std::vector<std::string> WorldSpec::realize(const Scene& scene, std::size_t template_index) const {
    const auto& pats = templates.at(relation_index(scene.fact.relation));
    if (template_index >= pats.size()) throw DataError("template index out of range");
    std::vector<std::string> out;
    for (const auto& p : tokenize(pats[template_index])) {
        if (p == "{s}") out.push_back(scene.fact.subject);
        else if (p == "{v}") out.push_back(scene.fact.relation);
        else if (p == "{o}") out.push_back(scene.fact.object);
        else if (p == "{loc}") out.push_back(scene.location);
        else if (p == "{adj}") { if (!scene.adjective.empty()) out.push_back(scene.adjective); }
        else if (p == "{adv}") { if (!scene.adverb.empty()) out.push_back(scene.adverb); }
        else out.push_back(p);
    }
    return out;
}

std::optional<Fact> WorldSpec::parse(const std::vector<std::string>& tokens) const {
    std::set<std::string> seen;
    for (const auto& pats : templates) {
        for (const auto& p : pats) {
            if (!seen.insert(p).second) continue;
            Fact f;
            if (match(*this, tokenize(p), 0, tokens, 0, f)) return f;
        }
    }
    return std::nullopt;
}

double WorldSpec::concept_only_ceiling() const {
    if (pairs.empty()) return 0.0;
    double total = 0.0;
    for (const auto& p : pairs) {
        double best = 0.0;
        for (const auto& o : p.options) best = std::max(best, o.weight);
        total += best;
    }
    return total / double(pairs.size());
}

WorldSpec generate_world(std::uint64_t seed, const WorldSizes& sizes) {
    if (sizes.options_per_pair < 2) throw ConfigError("every pair needs at least 2 admissible relations");
    if (sizes.n_relations < sizes.options_per_pair) throw ConfigError("fewer relations than options per pair");
    if (sizes.n_entities < 3) throw ConfigError("world needs at least 3 entities");
    if (sizes.n_pairs == 0 || sizes.n_pairs > sizes.n_entities * (sizes.n_entities - 1) / 2) {
        throw ConfigError("n_pairs must be in [1, E(E-1)/2]");
    }
    if (sizes.templates_per_relation == 0 || sizes.templates_per_relation > kPatternPool.size()) {
        throw ConfigError("templates_per_relation must be in [1, " + std::to_string(kPatternPool.size()) + "]");
    }
    if (sizes.n_locations == 0) throw ConfigError("world needs at least one location");
    if (sizes.option_weights.size() != sizes.options_per_pair) {
        throw ConfigError("option_weights must list one weight per option");
    }
    const double wsum = std::accumulate(sizes.option_weights.begin(), sizes.option_weights.end(), 0.0);
    if (!(wsum > 0.0) || std::any_of(sizes.option_weights.begin(), sizes.option_weights.end(),
                                     [](double w) { return !(w > 0.0); })) {
        throw ConfigError("option weights must be positive");
    }

    std::mt19937_64 rng(seed);
    WorldSpec w;
    w.seed = seed;
    w.sizes = sizes;
    w.entities = take_shuffled(kEntityPool, sizes.n_entities, rng, "entities");
    w.relations = take_shuffled(kRelationPool, sizes.n_relations, rng, "relations");
    w.locations = take_shuffled(kLocationPool, sizes.n_locations, rng, "locations");
    w.adjectives = take_shuffled(kAdjectivePool, sizes.n_adjectives, rng, "adjectives");
    w.adverbs = take_shuffled(kAdverbPool, sizes.n_adverbs, rng, "adverbs");

    std::vector<std::pair<std::size_t, std::size_t>> all_pairs;
    for (std::size_t i = 0; i < w.entities.size(); ++i) {
        for (std::size_t j = i + 1; j < w.entities.size(); ++j) all_pairs.emplace_back(i, j);
    }
    std::shuffle(all_pairs.begin(), all_pairs.end(), rng);
    all_pairs.resize(sizes.n_pairs);
    std::sort(all_pairs.begin(), all_pairs.end());
    for (auto [i, j] : all_pairs) {
        PairEntry e{w.entities[i], w.entities[j], {}};
        const auto rels = take_shuffled(w.relations, sizes.options_per_pair, rng, "relations");
        for (std::size_t k = 0; k < rels.size(); ++k) {
            e.options.push_back({rels[k], unit(rng) < 0.5, sizes.option_weights[k] / wsum});
        }
        w.pairs.push_back(std::move(e));
    }
    for (std::size_t r = 0; r < w.relations.size(); ++r) {
        w.templates.push_back(take_shuffled(kPatternPool, sizes.templates_per_relation, rng, "templates"));
    }
    return w;
}

std::string concept_key(std::vector<std::string> concepts) {
    std::sort(concepts.begin(), concepts.end());
    std::string key;
    for (const auto& c : concepts) key += (key.empty() ? "" : "#") + c;
    return key;
}

Scene sample_scene(const WorldSpec& world, std::mt19937_64& rng) {
    const auto& pair = world.pairs[uniform(rng, 0, world.pairs.size() - 1)];
    Scene s;
    s.fact = pair.fact(pick_option(pair, rng));
    s.location = world.locations[uniform(rng, 0, world.locations.size() - 1)];
    const std::size_t k = uniform(rng, 3, 5);
    if (k >= 4 && !world.adjectives.empty()) s.adjective = world.adjectives[uniform(rng, 0, world.adjectives.size() - 1)];
    if (k >= 5 && !world.adverbs.empty()) s.adverb = world.adverbs[uniform(rng, 0, world.adverbs.size() - 1)];
    return s;
}

std::vector<std::string> scene_concepts(const Scene& scene) {
    std::vector<std::string> c{scene.fact.subject, scene.fact.object, scene.location};
    if (!scene.adjective.empty()) c.push_back(scene.adjective);
    if (!scene.adverb.empty()) c.push_back(scene.adverb);
    std::sort(c.begin(), c.end());
    return c;
}

namespace {

std::size_t pair_index(const WorldSpec& world, const Fact& f) {
    for (std::size_t i = 0; i < world.pairs.size(); ++i) {
        const auto& p = world.pairs[i];
        if ((p.a == f.subject && p.b == f.object) || (p.b == f.subject && p.a == f.object)) return i;
    }
    throw DataError("fact outside the compatibility table");
}

RetrievalSet sample_retrieval(const WorldSpec& world, const Example& ex, bool distractor_only, std::mt19937_64& rng,
                              const DatasetOptions& opt) {
    const Fact& gold = ex.gold_facts.front();
    const std::size_t avoid = pair_index(world, gold);
    const std::size_t m = uniform(rng, opt.min_items, opt.max_items);
    const std::size_t n = uniform(rng, opt.min_items, opt.max_items);
    const std::size_t rel_img = uniform(rng, 0, m - 1), rel_txt = uniform(rng, 0, n - 1);
    RetrievalSet set;
    for (std::size_t i = 0; i < m; ++i) {
        RetrievedItem item{ItemKind::image, {}, {}, ex.id + "/img" + std::to_string(i)};
        const bool relevant = i == rel_img && !distractor_only;
        const std::size_t extra = relevant ? uniform(rng, 0, 2) : uniform(rng, 1, 3);
        if (relevant) item.facts.push_back(gold);
        for (std::size_t k = 0; k < extra; ++k) item.facts.push_back(distractor_fact(world, avoid, rng));
        std::shuffle(item.facts.begin(), item.facts.end(), rng);
        set.images.push_back(std::move(item));
    }
    for (std::size_t j = 0; j < n; ++j) {
        RetrievedItem item{ItemKind::text, {}, {}, ex.id + "/txt" + std::to_string(j)};
        const bool relevant = j == rel_txt && !distractor_only;
        item.snippet = snippet(relevant ? gold : distractor_fact(world, avoid, rng), rng);
        set.texts.push_back(std::move(item));
    }
    return set;
}

} // namespace

Dataset sample_dataset(const WorldSpec& world, std::size_t n_train, std::size_t n_dev, std::size_t n_test,
                       std::mt19937_64& rng, const DatasetOptions& options) {
    if (world.pairs.size() < 2) throw ConfigError("dataset needs at least two entity pairs");
    if (options.min_items < 1 || options.min_items > options.max_items) {
        throw ConfigError("retrieved item range must satisfy 1 <= min <= max");
    }
    constexpr std::size_t kMaxTries = 1000;
    std::set<std::string> used;
    Dataset ds;
    std::size_t next_id = 0;
    auto fill = [&](std::vector<Example>& out, std::size_t count, const char* split, double distractor_only) {
        for (std::size_t e = 0; e < count; ++e) {
            Scene scene;
            std::size_t tries = 0;
            do {
                if (++tries > kMaxTries) {
                    throw DataError(std::string("world capacity exhausted while sampling split ") + split);
                }
                scene = sample_scene(world, rng);
            } while (!used.insert(concept_key(scene_concepts(scene))).second);

            Example ex;
            char buf[32];
            std::snprintf(buf, sizeof buf, "%s-%06zu", split, next_id++);
            ex.id = buf;
            ex.concepts = scene_concepts(scene);
            ex.gold_facts = {scene.fact};
            const std::size_t n_tmpl = world.templates[world.relation_index(scene.fact.relation)].size();
            std::vector<std::size_t> order(n_tmpl);
            std::iota(order.begin(), order.end(), 0);
            std::shuffle(order.begin(), order.end(), rng);
            const std::size_t n_refs = uniform(rng, 1, std::min<std::size_t>(3, n_tmpl));
            for (std::size_t r = 0; r < n_refs; ++r) ex.references.push_back(join_tokens(world.realize(scene, order[r])));
            ex.distractor_only = unit(rng) < distractor_only;
            std::mt19937_64 item_rng(rng());
            ex.retrieval = sample_retrieval(world, ex, ex.distractor_only, item_rng, options);
            ex.has_retrieval = true;
            out.push_back(std::move(ex));
        }
    };
    // Held-out splits first; their contents do not depend on n_train.
    fill(ds.test, n_test, "test", options.distractor_only_fraction);
    fill(ds.dev, n_dev, "dev", options.distractor_only_fraction);
    fill(ds.train, n_train, "train", options.train_distractor_only_fraction);
    return ds;
}

std::vector<PretrainDocument> sample_pretrain_corpus(const WorldSpec& world, const Vocabulary& vocab,
                                                     std::size_t n_docs, const std::set<std::string>& excluded,
                                                     std::mt19937_64& rng, const CorpusOptions& options) {
    if (n_docs == 0) throw ConfigError("pretraining corpus must be nonempty");
    std::vector<PretrainDocument> docs;
    docs.reserve(n_docs);
    std::size_t rejected = 0;
    while (docs.size() < n_docs) {
        const Scene scene = sample_scene(world, rng);
        const auto concepts = scene_concepts(scene);
        if (excluded.count(concept_key(concepts))) {
            if (++rejected > 100 * n_docs) throw DataError("every sampled concept set is excluded");
            continue;
        }
        const std::size_t n_tmpl = world.templates[world.relation_index(scene.fact.relation)].size();
        PretrainDocument doc;
        const bool with_concepts = unit(rng) < options.concept_format;
        doc.source = lm_source(vocab, with_concepts ? concepts : std::vector<std::string>{});
        doc.target = vocab.encode(world.realize(scene, uniform(rng, 0, n_tmpl - 1)));
        doc.target.push_back(Vocabulary::kEos);

        const double u = unit(rng);
        const std::size_t avoid = pair_index(world, scene.fact);
        std::vector<std::vector<std::string>> parts;
        if (u < options.relevant_context) {
            parts.push_back(snippet(scene.fact, rng));
            if (unit(rng) < 0.5) parts.push_back(snippet(distractor_fact(world, avoid, rng), rng));
        } else if (u < options.relevant_context + options.irrelevant_context) {
            const std::size_t k = uniform(rng, 1, 2);
            for (std::size_t i = 0; i < k; ++i) parts.push_back(snippet(distractor_fact(world, avoid, rng), rng));
        }
        std::shuffle(parts.begin(), parts.end(), rng);
        for (std::size_t i = 0; i < parts.size(); ++i) {
            if (i) doc.context.push_back(Vocabulary::kSep);
            for (int id : vocab.encode(parts[i])) doc.context.push_back(id);
        }
        if (doc.context.size() > options.max_prefix) doc.context.resize(options.max_prefix);
        docs.push_back(std::move(doc));
    }
    return docs;
}

// ---- files -----------------------------------------------------------------

void write_world(const WorldSpec& w, const std::string& path) {
    json j;
    j["format"] = "more-world";
    j["version"] = 1;
    j["seed"] = w.seed;
    j["sizes"] = {{"n_entities", w.sizes.n_entities},
                  {"n_relations", w.sizes.n_relations},
                  {"n_locations", w.sizes.n_locations},
                  {"n_adjectives", w.sizes.n_adjectives},
                  {"n_adverbs", w.sizes.n_adverbs},
                  {"templates_per_relation", w.sizes.templates_per_relation},
                  {"n_pairs", w.sizes.n_pairs},
                  {"options_per_pair", w.sizes.options_per_pair},
                  {"option_weights", w.sizes.option_weights}};
    j["entities"] = w.entities;
    j["relations"] = w.relations;
    j["locations"] = w.locations;
    j["adjectives"] = w.adjectives;
    j["adverbs"] = w.adverbs;
    json pairs = json::array();
    for (const auto& p : w.pairs) {
        json opts = json::array();
        for (const auto& o : p.options) {
            opts.push_back({{"relation", o.relation}, {"forward", o.forward}, {"weight", o.weight}});
        }
        pairs.push_back({{"a", p.a}, {"b", p.b}, {"options", opts}});
    }
    j["pairs"] = pairs;
    j["templates"] = w.templates;
    auto out = open_out(path);
    out << j.dump(1) << '\n';
}

WorldSpec read_world(const std::string& path) {
    auto in = open_in(path);
    json j;
    try {
        j = json::parse(in);
        if (j.value("format", "") != "more-world") throw DataError(path + ": not a world file");
        WorldSpec w;
        w.seed = j.at("seed").get<std::uint64_t>();
        const auto& s = j.at("sizes");
        w.sizes.n_entities = s.at("n_entities");
        w.sizes.n_relations = s.at("n_relations");
        w.sizes.n_locations = s.at("n_locations");
        w.sizes.n_adjectives = s.at("n_adjectives");
        w.sizes.n_adverbs = s.at("n_adverbs");
        w.sizes.templates_per_relation = s.at("templates_per_relation");
        w.sizes.n_pairs = s.at("n_pairs");
        w.sizes.options_per_pair = s.at("options_per_pair");
        w.sizes.option_weights = s.at("option_weights").get<std::vector<double>>();
        w.entities = j.at("entities").get<std::vector<std::string>>();
        w.relations = j.at("relations").get<std::vector<std::string>>();
        w.locations = j.at("locations").get<std::vector<std::string>>();
        w.adjectives = j.at("adjectives").get<std::vector<std::string>>();
        w.adverbs = j.at("adverbs").get<std::vector<std::string>>();
        for (const auto& p : j.at("pairs")) {
            PairEntry e{p.at("a"), p.at("b"), {}};
            for (const auto& o : p.at("options")) e.options.push_back({o.at("relation"), o.at("forward"), o.at("weight")});
            w.pairs.push_back(std::move(e));
        }
        w.templates = j.at("templates").get<std::vector<std::vector<std::string>>>();
        return w;
    } catch (const json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
}

void write_examples_jsonl(const std::vector<Example>& examples, const std::string& path) {
    auto out = open_out(path);
    for (const auto& ex : examples) {
        json j;
        j["id"] = ex.id;
        j["concepts"] = ex.concepts;
        j["references"] = ex.references;
        json facts = json::array();
        for (const auto& f : ex.gold_facts) facts.push_back(fact_json(f));
        j["gold_facts"] = facts;
        if (ex.distractor_only) j["distractor_only"] = true;
        out << j.dump() << '\n';
    }
}

std::vector<Example> read_examples_jsonl(const std::string& path) {
    std::vector<Example> out;
    for_each_json_line(path, [&](const json& j, std::size_t lineno) {
        const std::string where = path + ":" + std::to_string(lineno);
        Example ex;
        ex.id = field(j, "id", where).get<std::string>();
        ex.concepts = field(j, "concepts", where).get<std::vector<std::string>>();
        ex.references = field(j, "references", where).get<std::vector<std::string>>();
        if (j.contains("gold_facts")) {
            for (const auto& f : j.at("gold_facts")) ex.gold_facts.push_back(fact_from(f));
        }
        ex.distractor_only = j.value("distractor_only", false);
        if (ex.concepts.empty()) throw DataError(where + ": empty concept list");
        if (ex.references.empty()) throw DataError(where + ": no references");
        out.push_back(std::move(ex));
    });
    return out;
}

void write_retrieved_jsonl(const std::vector<Example>& examples, const std::string& path, bool append) {
    auto out = open_out(path, append);
    for (const auto& ex : examples) {
        json j;
        j["id"] = ex.id;
        json images = json::array();
        for (const auto& img : ex.retrieval.images) {
            json facts = json::array();
            for (const auto& f : img.facts) facts.push_back(fact_json(f));
            images.push_back({{"facts", facts}});
        }
        j["images"] = images;
        json texts = json::array();
        for (const auto& t : ex.retrieval.texts) texts.push_back(join_tokens(t.snippet));
        j["texts"] = texts;
        out << j.dump() << '\n';
    }
}

void attach_retrieved_jsonl(std::vector<Example>& examples, const std::string& path) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < examples.size(); ++i) index[examples[i].id] = i;
    for_each_json_line(path, [&](const json& j, std::size_t lineno) {
        const std::string where = path + ":" + std::to_string(lineno);
        const auto it = index.find(field(j, "id", where).get<std::string>());
        if (it == index.end()) return;
        Example& ex = examples[it->second];
        ex.retrieval = {};
        std::size_t i = 0;
        for (const auto& img : field(j, "images", where)) {
            RetrievedItem item{ItemKind::image, {}, {}, ex.id + "/img" + std::to_string(i++)};
            for (const auto& f : field(img, "facts", where)) item.facts.push_back(fact_from(f));
            if (item.facts.empty()) throw DataError(where + ": image with no facts");
            ex.retrieval.images.push_back(std::move(item));
        }
        std::size_t k = 0;
        for (const auto& t : field(j, "texts", where)) {
            RetrievedItem item{ItemKind::text, {}, tokenize(t.get<std::string>()), ex.id + "/txt" + std::to_string(k++)};
            if (item.snippet.empty()) throw DataError(where + ": empty text snippet");
            ex.retrieval.texts.push_back(std::move(item));
        }
        ex.has_retrieval = true;
    });
}

std::vector<Example> load_commongen(const std::string& path) {
    std::vector<Example> out;
    for_each_json_line(path, [&](const json& j, std::size_t lineno) {
        const std::string where = path + ":" + std::to_string(lineno);
        Example ex;
        const json& cs = field(j, "concept_set", where);
        if (cs.is_string()) {
            std::string s = cs.get<std::string>(), cur;
            for (char ch : s + "#") {
                if (ch == '#') {
                    for (auto& t : tokenize(cur)) ex.concepts.push_back(t);
                    cur.clear();
                } else {
                    cur += ch;
                }
            }
        } else {
            for (const auto& c : cs) {
                for (auto& t : tokenize(c.get<std::string>())) ex.concepts.push_back(t);
            }
        }
        const json& scene = field(j, "scene", where);
        for (const auto& ref : scene) ex.references.push_back(join_tokens(tokenize(ref.get<std::string>())));
        if (ex.concepts.empty()) throw DataError(where + ": empty concept_set");
        if (ex.references.empty()) throw DataError(where + ": empty scene");
        ex.id = j.contains("id") ? j.at("id").get<std::string>() : "cg-" + std::to_string(lineno);
        out.push_back(std::move(ex));
    });
    return out;
}

void write_commongen(const std::vector<Example>& examples, const std::string& path) {
    auto out = open_out(path);
    for (const auto& ex : examples) {
        json j;
        j["id"] = ex.id;
        std::string set;
        for (const auto& c : ex.concepts) set += (set.empty() ? "" : "#") + c;
        j["concept_set"] = set;
        j["scene"] = ex.references;
        out << j.dump() << '\n';
    }
}

} // namespace more
