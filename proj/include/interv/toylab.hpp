#pragma once

// Synthetic fact corpus, a small bilinear fact scorer trained from scratch,
// and an end-to-end suppress/promote experiment on top of them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "interv/bm25.hpp"
#include "interv/corpus.hpp"
#include "interv/evaluator.hpp"
#include "interv/io.hpp"
#include "interv/items.hpp"
#include "interv/matcher.hpp"
#include "interv/planner.hpp"
#include "interv/selector.hpp"

namespace interv {

struct relation_spec {
    std::string name;
    std::string pattern;  // "[X] words [Y]"

    friend bool operator==(const relation_spec&, const relation_spec&) = default;
};

struct synthetic_spec {
    std::vector<relation_spec> relations = {{"located_in", "[X] is located in [Y]"},
                                            {"citizen_of", "[X] is a citizen of [Y]"},
                                            {"product_of", "[X] is a product of [Y]"},
                                            {"created_in", "[X] was created in [Y]"}};
    std::size_t facts_per_relation = 40;
    std::size_t objects_per_relation = 30;
    std::size_t batches = 6;
    std::size_t sequence_length = 64;
    // Mentions of a fact: `debut_mentions` in its debut batch (drawn
    // uniformly), `later_mentions` in every batch after it. A non-empty
    // `schedule` gives every fact the same per-batch counts instead.
    std::size_t debut_mentions = 6;
    std::size_t later_mentions = 1;
    std::vector<std::size_t> schedule;
    double alias_fraction = 0.35;  // mentions that name the subject by its alias
    double distractor_rate = 0.5;  // filler-only docs per fact doc
    std::size_t min_distractors = 10;
    double spurious_rate = 0.2;  // docs naming one entity outside a fact sentence
    std::size_t filler_min = 2;
    std::size_t filler_max = 14;
    std::size_t filler_vocab = 300;
    std::size_t name_syllables = 3;
    std::uint64_t seed = 1;

    json to_json() const {
        json rels = json::array();
        for (const auto& r : relations) rels.push_back({{"name", r.name}, {"template", r.pattern}});
        return {{"relations", rels},
                {"facts_per_relation", facts_per_relation},
                {"objects_per_relation", objects_per_relation},
                {"batches", batches},
                {"sequence_length", sequence_length},
                {"debut_mentions", debut_mentions},
                {"later_mentions", later_mentions},
                {"schedule", schedule},
                {"alias_fraction", alias_fraction},
                {"distractor_rate", distractor_rate},
                {"min_distractors", min_distractors},
                {"spurious_rate", spurious_rate},
                {"filler_min", filler_min},
                {"filler_max", filler_max},
                {"filler_vocab", filler_vocab},
                {"name_syllables", name_syllables},
                {"seed", seed}};
    }

    /// Missing keys keep their defaults.
    static synthetic_spec from_json(const json& j) {
        synthetic_spec s;
        if (j.contains("relations")) {
            s.relations.clear();
            for (const auto& r : j["relations"]) {
                if (r.is_string()) {
                    s.relations.push_back({"R" + std::to_string(s.relations.size()), r.get<std::string>()});
                } else {
                    s.relations.push_back({r.at("name").get<std::string>(), r.at("template").get<std::string>()});
                }
            }
        }
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
        };
        get("facts_per_relation", s.facts_per_relation);
        get("objects_per_relation", s.objects_per_relation);
        get("batches", s.batches);
        get("sequence_length", s.sequence_length);
        get("debut_mentions", s.debut_mentions);
        get("later_mentions", s.later_mentions);
        get("schedule", s.schedule);
        get("alias_fraction", s.alias_fraction);
        get("distractor_rate", s.distractor_rate);
        get("min_distractors", s.min_distractors);
        get("spurious_rate", s.spurious_rate);
        get("filler_min", s.filler_min);
        get("filler_max", s.filler_max);
        get("filler_vocab", s.filler_vocab);
        get("name_syllables", s.name_syllables);
        get("seed", s.seed);
        return s;
    }
};

namespace detail {

inline std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ' ') {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

/// Words between [X] and [Y].
inline std::vector<std::string> template_words(const relation_spec& r) {
    auto w = split_words(r.pattern);
    if (w.size() < 3 || w.front() != "[X]" || w.back() != "[Y]")
        throw error("toylab", "relation " + r.name + ": template must look like '[X] words [Y]'");
    w.erase(w.begin());
    w.pop_back();
    for (const auto& x : w)
        if (x == "[X]" || x == "[Y]") throw error("toylab", "relation " + r.name + ": placeholder used twice");
    return w;
}

constexpr std::string_view consonants = "bdfgklmnprstvz";
constexpr std::string_view vowels = "aeiou";

inline std::string syllable_word(std::mt19937_64& rng, std::size_t syllables, bool capital) {
    std::uniform_int_distribution<std::size_t> c(0, consonants.size() - 1), v(0, vowels.size() - 1);
    std::string w;
    for (std::size_t i = 0; i < syllables; ++i) {
        w.push_back(consonants[c(rng)]);
        w.push_back(vowels[v(rng)]);
    }
    if (capital) w[0] = static_cast<char>(w[0] - 'a' + 'A');
    return w;
}

inline std::string zero_pad(std::size_t v, int width) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%0*zu", width, v);
    return buf;
}

}  // namespace detail

inline void validate(const synthetic_spec& s) {
    if (s.relations.empty()) throw error("toylab", "no relations");
    std::set<std::string> names;
    for (const auto& r : s.relations) {
        detail::template_words(r);
        if (!names.insert(r.name).second) throw error("toylab", "duplicate relation name " + r.name);
    }
    if (s.facts_per_relation == 0) throw error("toylab", "facts_per_relation must be positive");
    if (s.objects_per_relation < 4) throw error("toylab", "objects_per_relation must be at least 4 (gold + 3 distractors)");
    if (s.batches == 0) throw error("toylab", "batches must be positive");
    if (!s.schedule.empty() && s.schedule.size() != s.batches)
        throw error("toylab", "schedule has " + std::to_string(s.schedule.size()) + " entries for " +
                                  std::to_string(s.batches) + " batches");
    if (s.alias_fraction < 0 || s.alias_fraction > 1) throw error("toylab", "alias_fraction must lie in [0, 1]");
    if (s.distractor_rate < 0 || s.spurious_rate < 0) throw error("toylab", "rates must be non-negative");
    if (s.filler_min > s.filler_max) throw error("toylab", "filler_min exceeds filler_max");
    if (s.filler_vocab == 0) throw error("toylab", "filler_vocab must be positive");
    if (s.name_syllables == 0) throw error("toylab", "name_syllables must be positive");
    std::size_t longest = 0;
    for (const auto& r : s.relations) longest = std::max(longest, detail::template_words(r).size());
    if (s.filler_max + longest + 3 > s.sequence_length)
        throw error("toylab", "sequence_length too short for the longest document");
    const double space = std::pow(double(detail::consonants.size() * detail::vowels.size()), double(s.name_syllables));
    const double names_needed = double(s.relations.size()) * double(2 * s.facts_per_relation + s.objects_per_relation);
    if (names_needed > space / 4)
        throw error("toylab", "vocabulary too small for requested facts: " + std::to_string(std::size_t(names_needed)) +
                                  " entity names from " + std::to_string(std::size_t(space)) + " possible");
    const double filler_space = std::pow(double(detail::consonants.size() * detail::vowels.size()), 2.0);
    if (double(s.filler_vocab) > filler_space / 4) throw error("toylab", "filler_vocab too large");
}

/// Everything about the synthetic world except the batches themselves.
struct toy_world {
    struct relation {
        std::string name;
        std::vector<token_t> words;
        std::vector<std::size_t> objects;  // global object indices
    };
    struct fact {
        std::size_t subject, relation, object;
        std::size_t debut;  // 1-based batch
    };

    std::vector<std::string> vocab;
    std::unordered_map<std::string, token_t> ids;
    std::vector<relation> relations;
    std::vector<std::string> subjects, aliases, objects;
    std::vector<std::size_t> object_relation;
    std::vector<fact> facts;  // fact i has subject i
    // Token roles for the trainer.
    std::unordered_map<token_t, std::size_t> subject_of_token;  // canonical and alias
    std::unordered_map<token_t, std::size_t> object_of_token;
    std::unordered_map<std::string, std::size_t> relation_index;

    token_t id(const std::string& w) const { return ids.at(w); }

    std::size_t subject_index(const std::string& name) const {
        auto it = ids.find(name);
        if (it != ids.end())
            if (auto s = subject_of_token.find(it->second); s != subject_of_token.end()) return s->second;
        throw error("toylab", "unknown subject " + name);
    }
    std::size_t object_index(const std::string& name) const {
        auto it = ids.find(name);
        if (it != ids.end())
            if (auto o = object_of_token.find(it->second); o != object_of_token.end()) return o->second;
        throw error("toylab", "unknown object " + name);
    }
};

struct toy_corpus {
    synthetic_spec spec;
    std::shared_ptr<const toy_world> world;
    std::vector<data_batch> batches;
    std::vector<eval_item> items;  // items[i] asks about facts[i]
    // Planted mentions per fact and batch, split by subject surface form.
    std::vector<std::vector<std::size_t>> canonical_mentions, alias_mentions;

    corpus_manifest manifest() const {
        corpus_manifest m;
        m.tokenizer_id = "toy-word-v1";
        m.sequence_length = spec.sequence_length;
        m.pad_token = 0;
        return m;
    }
};

inline toy_corpus generate_corpus(const synthetic_spec& spec) {
    validate(spec);
    std::mt19937_64 rng(spec.seed);
    auto uniform = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    auto coin = [&](double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; };

    auto world = std::make_shared<toy_world>();
    auto add_word = [&](const std::string& w) {
        auto [it, inserted] = world->ids.emplace(w, static_cast<token_t>(world->vocab.size()));
        if (inserted) world->vocab.push_back(w);
        return it->second;
    };
    add_word("<pad>");
    add_word(".");
    for (std::size_t r = 0; r < spec.relations.size(); ++r) {
        toy_world::relation rel{spec.relations[r].name, {}, {}};
        for (const auto& w : detail::template_words(spec.relations[r])) rel.words.push_back(add_word(w));
        world->relation_index[rel.name] = r;
        world->relations.push_back(std::move(rel));
    }
    std::vector<token_t> filler;
    while (filler.size() < spec.filler_vocab) {
        auto w = detail::syllable_word(rng, uniform(1, 2), false);
        if (!world->ids.count(w)) filler.push_back(add_word(w));
    }

    // Entity names all have the same length, so none is a substring of another.
    std::set<std::string> taken;
    auto fresh_name = [&] {
        for (;;) {
            auto w = detail::syllable_word(rng, spec.name_syllables, true);
            if (taken.insert(w).second) return w;
        }
    };
    for (std::size_t r = 0; r < spec.relations.size(); ++r) {
        for (std::size_t k = 0; k < spec.objects_per_relation; ++k) {
            world->relations[r].objects.push_back(world->objects.size());
            world->objects.push_back(fresh_name());
            world->object_relation.push_back(r);
            world->object_of_token[add_word(world->objects.back())] = world->objects.size() - 1;
        }
    }
    for (std::size_t r = 0; r < spec.relations.size(); ++r) {
        const auto& objs = world->relations[r].objects;
        for (std::size_t k = 0; k < spec.facts_per_relation; ++k) {
            const std::size_t s = world->subjects.size();
            world->subjects.push_back(fresh_name());
            world->aliases.push_back(fresh_name());
            world->subject_of_token[add_word(world->subjects.back())] = s;
            world->subject_of_token[add_word(world->aliases.back())] = s;
            world->facts.push_back({s, r, objs[uniform(0, objs.size() - 1)], uniform(1, spec.batches)});
        }
    }

    toy_corpus out;
    out.spec = spec;
    const std::size_t n_facts = world->facts.size();
    out.canonical_mentions.assign(n_facts, std::vector<std::size_t>(spec.batches, 0));
    out.alias_mentions.assign(n_facts, std::vector<std::size_t>(spec.batches, 0));

    auto filler_words = [&](std::size_t n) {
        std::vector<token_t> w(n);
        for (auto& t : w) t = filler[uniform(0, filler.size() - 1)];
        return w;
    };

    const std::size_t L = spec.sequence_length;
    batch_id_t step = 0;
    for (std::size_t b = 1; b <= spec.batches; ++b) {
        std::vector<std::vector<token_t>> docs;
        for (std::size_t f = 0; f < n_facts; ++f) {
            const auto& fact = world->facts[f];
            std::size_t m = 0;
            if (!spec.schedule.empty())
                m = spec.schedule[b - 1];
            else if (b == fact.debut)
                m = spec.debut_mentions;
            else if (b > fact.debut)
                m = spec.later_mentions;
            for (std::size_t k = 0; k < m; ++k) {
                const bool alias = coin(spec.alias_fraction);
                ++(alias ? out.alias_mentions : out.canonical_mentions)[f][b - 1];
                std::vector<token_t> sentence{world->id(alias ? world->aliases[fact.subject] : world->subjects[fact.subject])};
                const auto& rel = world->relations[fact.relation];
                sentence.insert(sentence.end(), rel.words.begin(), rel.words.end());
                sentence.push_back(world->id(world->objects[fact.object]));
                sentence.push_back(world->id("."));
                const std::size_t n = uniform(spec.filler_min, spec.filler_max);
                const std::size_t before = uniform(0, n);
                auto doc = filler_words(before);
                doc.insert(doc.end(), sentence.begin(), sentence.end());
                auto tail = filler_words(n - before);
                doc.insert(doc.end(), tail.begin(), tail.end());
                docs.push_back(std::move(doc));
            }
        }
        const std::size_t fact_docs = docs.size();
        const auto n_distractors = std::max<std::size_t>(
            spec.min_distractors, static_cast<std::size_t>(std::llround(spec.distractor_rate * double(fact_docs))));
        for (std::size_t k = 0; k < n_distractors; ++k) {
            auto doc = filler_words(uniform(std::max<std::size_t>(spec.filler_min, 1), spec.filler_max));
            doc.push_back(world->id("."));
            docs.push_back(std::move(doc));
        }
        const auto n_spurious = static_cast<std::size_t>(std::llround(spec.spurious_rate * double(fact_docs)));
        for (std::size_t k = 0; k < n_spurious; ++k) {
            auto doc = filler_words(uniform(std::max<std::size_t>(spec.filler_min, 1), spec.filler_max));
            const bool subject = coin(0.5);
            const auto& name = subject ? world->subjects[uniform(0, world->subjects.size() - 1)]
                                       : world->objects[uniform(0, world->objects.size() - 1)];
            doc.insert(doc.begin() + static_cast<std::ptrdiff_t>(uniform(0, doc.size())), world->id(name));
            doc.push_back(world->id("."));
            docs.push_back(std::move(doc));
        }
        std::shuffle(docs.begin(), docs.end(), rng);

        std::vector<token_t> tokens;
        std::vector<document> table;
        for (std::size_t k = 0; k < docs.size(); ++k) {
            document d;
            d.doc_id = "b" + detail::zero_pad(b, 2) + "-" + detail::zero_pad(k, 6);
            d.token_start = tokens.size();
            tokens.insert(tokens.end(), docs[k].begin(), docs[k].end());
            d.token_end = tokens.size();
            for (std::size_t i = 0; i < docs[k].size(); ++i) {
                if (i) d.text += ' ';
                d.text += world->vocab[docs[k][i]];
            }
            table.push_back(std::move(d));
        }
        if (tokens.empty()) tokens.push_back(0);
        tokens.resize((tokens.size() + L - 1) / L * L, 0);
        step += static_cast<batch_id_t>(tokens.size() / L);
        for (auto& d : table) d.batch_id = step;
        out.batches.emplace_back(step, std::move(tokens), std::move(table));
    }

    for (std::size_t f = 0; f < n_facts; ++f) {
        const auto& fact = world->facts[f];
        const auto& objs = world->relations[fact.relation].objects;
        std::vector<std::size_t> others;
        for (auto o : objs)
            if (o != fact.object) others.push_back(o);
        std::shuffle(others.begin(), others.end(), rng);
        std::vector<std::size_t> choice_objs{fact.object, others[0], others[1], others[2]};
        std::shuffle(choice_objs.begin(), choice_objs.end(), rng);

        eval_item it;
        it.item_id = "q" + detail::zero_pad(f, 5);
        const auto words = detail::template_words(spec.relations[fact.relation]);
        it.question = world->subjects[fact.subject];
        for (const auto& w : words) it.question += " " + w;
        for (auto o : choice_objs) it.choices.push_back(world->objects[o]);
        it.answer_index = static_cast<std::size_t>(std::find(choice_objs.begin(), choice_objs.end(), fact.object) -
                                                   choice_objs.begin());
        it.subject = world->subjects[fact.subject];
        it.object = world->objects[fact.object];
        it.relation = world->relations[fact.relation].name;
        it.dataset = "toy";
        out.items.push_back(std::move(it));
    }
    out.world = std::move(world);
    return out;
}

/// Writes batches, manifest.json and items.jsonl under `dir`.
inline corpus_manifest write_corpus(const toy_corpus& c, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto m = c.manifest();
    m.base_dir = dir;
    for (const auto& b : c.batches) m.batches.push_back(write_batch(b, dir));
    write_manifest(m, dir / "manifest.json");
    save_items(dir / "items.jsonl", c.items);
    return m;
}

struct toy_train_config {
    std::size_t dim = 16;
    double learning_rate = 0.1;
    double init_scale = 0.01;
    double noise_std = 0.2;      // std of the Gaussian noise added to every gradient entry
    double weight_decay = 0.05;  // L2 pull on subject and object embeddings
    std::uint64_t seed = 0;      // initialisation and noise of the reference run

    json to_json() const {
        return {{"dim", dim}, {"learning_rate", learning_rate}, {"init_scale", init_scale},
                {"noise_std", noise_std}, {"weight_decay", weight_decay}, {"seed", seed}};
    }

    static toy_train_config from_json(const json& j) {
        toy_train_config c;
        c.dim = j.value("dim", c.dim);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.init_scale = j.value("init_scale", c.init_scale);
        c.noise_std = j.value("noise_std", c.noise_std);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.seed = j.value("seed", c.seed);
        return c;
    }
};

/// score(s, r, o) = sum_k E[s,k] * R[r,k] * W[o,k], softmax over the objects
/// of relation r.
class toy_model {
public:
    toy_model() = default;

    toy_model(std::shared_ptr<const toy_world> world, const toy_train_config& cfg)
        : world_(std::move(world)), dim_(cfg.dim), lr_(cfg.learning_rate), noise_std_(cfg.noise_std),
          decay_(cfg.weight_decay) {
        if (dim_ == 0) throw error("toylab", "dim must be positive");
        std::mt19937_64 rng(cfg.seed ^ 0x5eedULL);
        std::normal_distribution<double> init(0.0, cfg.init_scale);
        E_.resize(world_->subjects.size() * dim_);
        W_.resize(world_->objects.size() * dim_);
        R_.assign(world_->relations.size() * dim_, 1.0);
        for (auto& x : E_) x = init(rng);
        for (auto& x : W_) x = init(rng);
    }

    std::int64_t step() const { return step_; }
    const toy_world& world() const { return *world_; }

    /// Log-probabilities over the objects of `relation`, in relation order.
    std::vector<double> log_probs(std::size_t subject, std::size_t relation) const {
        const auto& objs = world_->relations[relation].objects;
        std::vector<double> z(objs.size());
        const double* e = &E_[subject * dim_];
        const double* r = &R_[relation * dim_];
        for (std::size_t j = 0; j < objs.size(); ++j) {
            const double* w = &W_[objs[j] * dim_];
            double s = 0;
            for (std::size_t k = 0; k < dim_; ++k) s += e[k] * r[k] * w[k];
            z[j] = s;
        }
        const double mx = *std::max_element(z.begin(), z.end());
        double sum = 0;
        for (double v : z) sum += std::exp(v - mx);
        const double lse = mx + std::log(sum);
        for (auto& v : z) v -= lse;
        return z;
    }

    /// One SGD step over the fact sentences in `seq`; returns the summed loss.
    double train_step(std::span<const token_t> seq, std::mt19937_64& noise) {
        gE_.assign(E_.size(), 0.0);
        gR_.assign(R_.size(), 0.0);
        gW_.assign(W_.size(), 0.0);
        double loss = 0;
        for (std::size_t i = 0; i < seq.size(); ++i) {
            auto s = world_->subject_of_token.find(seq[i]);
            if (s == world_->subject_of_token.end()) continue;
            for (std::size_t r = 0; r < world_->relations.size(); ++r) {
                const auto& words = world_->relations[r].words;
                const std::size_t o_pos = i + 1 + words.size();
                if (o_pos >= seq.size()) continue;
                if (!std::equal(words.begin(), words.end(), seq.begin() + static_cast<std::ptrdiff_t>(i + 1))) continue;
                auto o = world_->object_of_token.find(seq[o_pos]);
                if (o == world_->object_of_token.end() || world_->object_relation[o->second] != r) continue;
                loss += accumulate(s->second, r, o->second);
            }
        }
        if (!std::isfinite(loss)) throw error("toylab", "non-finite loss at step " + std::to_string(step_ + 1));
        apply(E_, gE_, decay_, noise);
        apply(R_, gR_, 0.0, noise);
        apply(W_, gW_, decay_, noise);
        ++step_;
        return loss;
    }

    /// Trains one step per sequence of `batch`.
    void train_batch(const data_batch& batch, std::size_t sequence_length, std::mt19937_64& noise) {
        const auto toks = batch.tokens();
        for (std::size_t b = 0; b < toks.size(); b += sequence_length)
            train_step(toks.subspan(b, std::min(sequence_length, toks.size() - b)), noise);
    }

    friend bool operator==(const toy_model& a, const toy_model& b) {
        return a.E_ == b.E_ && a.R_ == b.R_ && a.W_ == b.W_ && a.step_ == b.step_;
    }

private:
    double accumulate(std::size_t s, std::size_t r, std::size_t o) {
        const auto& objs = world_->relations[r].objects;
        const auto lp = log_probs(s, r);
        const double* e = &E_[s * dim_];
        const double* rv = &R_[r * dim_];
        double loss = 0;
        for (std::size_t j = 0; j < objs.size(); ++j) {
            const double g = std::exp(lp[j]) - (objs[j] == o ? 1.0 : 0.0);
            if (objs[j] == o) loss = -lp[j];
            const double* w = &W_[objs[j] * dim_];
            double* gw = &gW_[objs[j] * dim_];
            for (std::size_t k = 0; k < dim_; ++k) {
                gw[k] += g * e[k] * rv[k];
                gE_[s * dim_ + k] += g * w[k] * rv[k];
                gR_[r * dim_ + k] += g * w[k] * e[k];
            }
        }
        return loss;
    }

    void apply(std::vector<double>& p, const std::vector<double>& g, double decay, std::mt19937_64& noise) {
        std::normal_distribution<double> n(0.0, 1.0);
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr_ * (g[i] + decay * p[i] + noise_std_ * n(noise));
    }

    std::shared_ptr<const toy_world> world_;
    std::size_t dim_ = 0;
    double lr_ = 0, noise_std_ = 0, decay_ = 0;
    std::vector<double> E_, R_, W_;
    std::vector<double> gE_, gR_, gW_;
    std::int64_t step_ = 0;
};

/// Scores choices with a toy model. Items must carry subject and relation.
class toy_scorer : public choice_scorer {
public:
    explicit toy_scorer(const toy_model& m) : m_(m) {}

    std::vector<choice_score> score(const eval_item& item) const override {
        const auto& w = m_.world();
        if (!item.subject || !item.relation) throw error("toylab", item.item_id + ": needs subject and relation");
        auto r = w.relation_index.find(*item.relation);
        if (r == w.relation_index.end()) throw error("toylab", "unknown relation " + *item.relation);
        const auto lp = m_.log_probs(w.subject_index(*item.subject), r->second);
        const auto& objs = w.relations[r->second].objects;
        const double prior = -std::log(double(objs.size()));
        std::vector<choice_score> out;
        for (std::size_t i = 0; i < item.choices.size(); ++i) {
            const auto o = w.object_index(item.choices[i]);
            const auto pos = std::find(objs.begin(), objs.end(), o);
            if (pos == objs.end()) throw error("toylab", item.choices[i] + " is not an object of " + *item.relation);
            out.push_back({item.item_id, i, lp[static_cast<std::size_t>(pos - objs.begin())], 1,
                           utf8_length(item.choices[i]), prior});
        }
        return out;
    }

private:
    const toy_model& m_;
};

struct training_run {
    std::vector<toy_model> checkpoints;  // checkpoints[0] is the initial model
    correctness_matrix matrix;
};

inline std::map<std::string, bool> grade_model(const toy_model& m, std::span<const eval_item> items) {
    return grade(items, toy_scorer(m), normalization::none);
}

/// Trains over `batches` in order, checkpointing at every batch boundary.
/// Checkpoint steps are the batch ids, which count sequences seen so far.
inline training_run train(toy_model model, std::span<const data_batch> batches, std::span<const eval_item> items,
                          std::size_t sequence_length, std::uint64_t noise_seed) {
    std::mt19937_64 noise(noise_seed);
    training_run run;
    std::vector<step_t> steps{model.step()};
    run.checkpoints.push_back(model);
    for (const auto& b : batches) {
        model.train_batch(b, sequence_length, noise);
        if (model.step() != b.id())
            throw error("toylab", "batch " + std::to_string(b.id()) + " ends at step " + std::to_string(model.step()));
        steps.push_back(model.step());
        run.checkpoints.push_back(model);
    }
    std::vector<std::string> ids;
    for (const auto& it : items) ids.push_back(it.item_id);
    std::vector<std::uint8_t> cells(ids.size() * steps.size());
    for (std::size_t s = 0; s < steps.size(); ++s) {
        const auto correct = grade_model(run.checkpoints[s], items);
        for (std::size_t i = 0; i < ids.size(); ++i) cells[i * steps.size() + s] = correct.at(ids[i]) ? 1 : 0;
    }
    run.matrix = correctness_matrix(std::move(ids), std::move(steps), std::move(cells));
    return run;
}

/// Central 95% band of Binomial(n, p) as fractions of n.
inline std::pair<double, double> binomial_band(std::size_t n, double p = 0.25, double alpha = 0.05) {
    if (n == 0) throw error("toylab", "empty binomial band");
    double cdf = 0;
    std::optional<std::size_t> lo, hi;
    for (std::size_t k = 0; k <= n; ++k) {
        const double logpmf = std::lgamma(double(n) + 1) - std::lgamma(double(k) + 1) - std::lgamma(double(n - k) + 1) +
                              double(k) * std::log(p) + double(n - k) * std::log1p(-p);
        cdf += std::exp(logpmf);
        if (!lo && cdf >= alpha / 2) lo = k;
        if (!hi && cdf >= 1 - alpha / 2) hi = k;
    }
    if (!hi) hi = n;
    return {double(*lo) / double(n), double(*hi) / double(n)};
}

struct experiment_options {
    intervention_mode mode = intervention_mode::suppress;
    match_method method = match_method::cooccurrence;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::size_t per_item_k = 5;  // scored methods only
    unsigned threads = 1;
};

struct condition_summary {
    std::string condition;
    run_summary target, control;
    double target_delta = 0, control_delta = 0;
};

struct experiment_report {
    intervention_mode mode{};
    match_method method{};
    step_t step = 0;  // t: the batch rewritten is D_t
    target_selection selection;
    intervention_plan plan;
    swap_report swaps;
    double replacement_fraction = 0;
    std::size_t tokens_before = 0, tokens_after = 0;
    std::vector<run_result> target_runs, control_runs;  // both conditions, seed order
    std::vector<condition_summary> summaries;           // retrained first
    std::pair<double, double> chance_band{0, 0};

    std::string condition() const { return to_string(mode) + "-" + to_string(method); }

    const condition_summary& summary(const std::string& cond) const {
        for (const auto& s : summaries)
            if (s.condition == cond) return s;
        throw error("toylab", "no summary for condition " + cond);
    }

    std::vector<json> records(const std::string& config_hash = {}) const {
        json head = {{"type", "experiment"},
                     {"mode", to_string(mode)},
                     {"method", to_string(method)},
                     {"step", step},
                     {"targets", selection.targets.size()},
                     {"controls", selection.controls.size()},
                     {"replacements", plan.replacements.size()},
                     {"replacement_fraction", replacement_fraction},
                     {"exact_rate", swaps.exact_rate()},
                     {"tokens_before", tokens_before},
                     {"tokens_after", tokens_after},
                     {"tokens_conserved", tokens_before == tokens_after}};
        if (!config_hash.empty()) head["config_hash"] = config_hash;
        std::vector<json> out{head};
        out.push_back({{"type", "chance_band"},
                       {"p", 0.25},
                       {"n", selection.targets.size() * (target_runs.size() / 2)},
                       {"lo", chance_band.first},
                       {"hi", chance_band.second}});
        for (std::size_t i = 0; i < target_runs.size(); ++i)
            out.push_back({{"type", "run"},
                           {"condition", target_runs[i].condition},
                           {"seed", target_runs[i].seed},
                           {"target_accuracy", target_runs[i].accuracy},
                           {"control_accuracy", control_runs[i].accuracy}});
        for (const auto& s : summaries)
            out.push_back({{"type", "summary"},
                           {"condition", s.condition},
                           {"runs", s.target.runs},
                           {"target_mean", s.target.mean},
                           {"target_std", s.target.std},
                           {"control_mean", s.control.mean},
                           {"control_std", s.control.std},
                           {"target_delta", s.target_delta},
                           {"control_delta", s.control_delta}});
        return out;
    }
};

namespace detail {

/// Matches used to pick targets: entity methods are filtered by
/// cooccurrence, bm25 by itself.
inline match_set toy_match(const data_batch& batch, std::span<const eval_item> items, match_method method,
                           std::size_t per_item_k) {
    switch (method) {
        case match_method::cooccurrence: return match_cooccurrence(batch, items);
        case match_method::occurrence: return match_occurrence(batch, items);
        case match_method::bm25: return match_bm25(build_bm25(batch), items, {per_item_k, std::nullopt});
        default: throw error("toylab", "method " + to_string(method) + " is not available in the toy lab");
    }
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    return fnv1a(std::to_string(seed) + ":" + std::to_string(salt));
}

}  // namespace detail

/// Picks the intervention step from the reference run: for suppress, the
/// step with most items learned at it; for promote, the step before the one
/// with most items learned. The last batch is never rewritten.
inline target_selection toy_selection(const toy_corpus& c, const training_run& ref, intervention_mode mode,
                                      match_method method, std::size_t per_item_k) {
    const auto& steps = ref.matrix.steps();
    if (steps.size() < 3) throw error("toylab", "experiment needs at least 2 batches");
    const auto rule = learned_at_rule();
    std::vector<step_t> cands;
    if (mode == intervention_mode::suppress)
        cands.assign(steps.begin() + 1, steps.end() - 1);
    else
        cands.assign(steps.begin() + 2, steps.end());
    step_t t = argmax_step(ref.matrix, rule, cands);
    if (mode == intervention_mode::promote) t = steps[*ref.matrix.step_index(t) - 1];
    auto sel = select_targets(ref.matrix, t, mode);

    const std::size_t b = *ref.matrix.step_index(t) - 1 + (mode == intervention_mode::promote ? 1 : 0);
    std::vector<eval_item> cand_items;
    const std::set<std::string> tset(sel.targets.begin(), sel.targets.end());
    for (const auto& it : c.items)
        if (tset.count(it.item_id)) cand_items.push_back(it);
    const auto filter_method = method == match_method::bm25 ? match_method::bm25 : match_method::cooccurrence;
    return filter_by_matches(sel, detail::toy_match(c.batches[b], cand_items, filter_method, per_item_k), 1);
}

/// Retrains D_t from the checkpoint before t, once on the original batch
/// and once on `rewritten`, for every seed, and fills the run, summary and
/// chance-band fields of `rep` (whose selection and step must be set).
inline void compare_retraining(const toy_corpus& c, const training_run& ref, const data_batch& rewritten,
                               std::span<const std::uint64_t> seeds, unsigned threads, experiment_report& rep) {
    if (seeds.size() < 2) throw error("toylab", "an experiment needs at least 2 seeds");
    auto idx = ref.matrix.step_index(rep.step);
    if (!idx || *idx == 0) throw error("toylab", "step " + std::to_string(rep.step) + " does not end a batch");
    const std::size_t ti = *idx;
    const data_batch& batch_t = c.batches.at(ti - 1);
    if (rewritten.token_count() != batch_t.token_count())
        throw error("toylab", "token count changed by the intervention");

    struct seed_result {
        std::map<std::string, bool> retrained, intervened;
    };
    auto one_seed = [&](std::uint64_t seed) {
        const std::uint64_t ns = detail::mix_seed(seed, static_cast<std::uint64_t>(rep.step));
        seed_result r;
        for (int variant = 0; variant < 2; ++variant) {
            toy_model m = ref.checkpoints[ti - 1];
            std::mt19937_64 noise(ns);
            m.train_batch(variant == 0 ? batch_t : rewritten, c.spec.sequence_length, noise);
            (variant == 0 ? r.retrained : r.intervened) = grade_model(m, c.items);
        }
        return r;
    };
    std::vector<seed_result> results(seeds.size());
    if (threads <= 1) {
        for (std::size_t i = 0; i < seeds.size(); ++i) results[i] = one_seed(seeds[i]);
    } else {
        std::vector<std::future<seed_result>> jobs;
        for (auto s : seeds) jobs.push_back(std::async(std::launch::async, one_seed, s));
        for (std::size_t i = 0; i < jobs.size(); ++i) results[i] = jobs[i].get();
    }

    rep.target_runs.clear();
    rep.control_runs.clear();
    rep.summaries.clear();
    const auto cond = rep.condition();
    for (const auto& [label, pick] : {std::pair<std::string, int>{"retrained", 0}, {cond, 1}}) {
        std::vector<run_result> tr, cr;
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            const auto& correct = pick == 0 ? results[i].retrained : results[i].intervened;
            tr.push_back(make_run(label, seeds[i], correct, rep.selection.targets));
            cr.push_back(rep.selection.controls.empty() ? run_result{label, seeds[i], correct, 0.0}
                                                        : make_run(label, seeds[i], correct, rep.selection.controls));
        }
        rep.summaries.push_back({label, aggregate_runs(tr, label), aggregate_runs(cr, label), 0, 0});
        rep.target_runs.insert(rep.target_runs.end(), tr.begin(), tr.end());
        rep.control_runs.insert(rep.control_runs.end(), cr.begin(), cr.end());
    }
    for (auto& s : rep.summaries) {
        s.target_delta = delta_accuracy(s.target, rep.summaries.front().target);
        s.control_delta = delta_accuracy(s.control, rep.summaries.front().control);
    }
    rep.chance_band = binomial_band(rep.selection.targets.size() * seeds.size());
}

/// Selects targets on the reference run, plans and applies the
/// intervention on D_t, and compares retraining on D_t and D_t^int.
inline experiment_report run_experiment(const toy_corpus& c, const training_run& ref, const experiment_options& opt) {
    if (opt.seeds.size() < 2) throw error("toylab", "an experiment needs at least 2 seeds");
    experiment_report rep;
    rep.mode = opt.mode;
    rep.method = opt.method;
    rep.selection = toy_selection(c, ref, opt.mode, opt.method, opt.per_item_k);
    rep.step = rep.selection.step;
    if (rep.selection.targets.empty()) throw error("toylab", "no target items at step " + std::to_string(rep.step));

    const std::size_t ti = *ref.matrix.step_index(rep.step);  // D_t is batches[ti - 1]
    const data_batch& batch_t = c.batches[ti - 1];
    const data_batch& batch_next = c.batches[ti];

    std::vector<eval_item> targets;
    const std::set<std::string> tset(rep.selection.targets.begin(), rep.selection.targets.end());
    for (const auto& it : c.items)
        if (tset.count(it.item_id)) targets.push_back(it);
    const auto m_t = detail::toy_match(batch_t, targets, opt.method, opt.per_item_k);
    const auto m_next = detail::toy_match(batch_next, targets, opt.method, opt.per_item_k);
    plan_config pcfg;
    pcfg.per_item_k = opt.per_item_k;
    pcfg.max_source_length = c.spec.sequence_length;
    rep.plan = opt.mode == intervention_mode::suppress
                   ? plan_suppress(m_t, m_next, rep.selection.targets, batch_t, batch_next, pcfg)
                   : plan_promote(m_next, m_t, rep.selection.targets, batch_t, batch_next, pcfg);
    auto [rewritten, swaps] = apply_plan(rep.plan, batch_t, batch_next, {c.spec.sequence_length, 0});
    rep.swaps = std::move(swaps);
    rep.replacement_fraction = replacement_fraction(rep.plan, batch_t);
    rep.tokens_before = batch_t.token_count();
    rep.tokens_after = rewritten.token_count();
    compare_retraining(c, ref, rewritten, opt.seeds, opt.threads, rep);
    return rep;
}

}  // namespace interv
