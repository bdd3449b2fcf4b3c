#pragma once

// Cloze-style multiple-choice scoring, accuracy aggregation, the majority
// baseline, and the document-relevance audit utilities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "interv/io.hpp"
#include "interv/items.hpp"
#include "interv/matcher.hpp"

namespace interv {

enum class normalization { none, per_char, pmi };

inline normalization parse_normalization(std::string_view s) {
    if (s == "none") return normalization::none;
    if (s == "char") return normalization::per_char;
    if (s == "pmi") return normalization::pmi;
    throw error("evaluator", "unknown normalization '" + std::string(s) + "'");
}

inline std::string to_string(normalization n) {
    switch (n) {
        case normalization::none: return "none";
        case normalization::per_char: return "char";
        case normalization::pmi: return "pmi";
    }
    return "?";
}

/// Number of Unicode scalar values in a UTF-8 string (continuation bytes
/// are not counted). This is the denominator for per-char normalization.
inline std::size_t utf8_length(std::string_view s) {
    return static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

struct choice_score {
    std::string item_id;
    std::size_t choice_index = 0;
    double logprob = 0.0;  // summed token log-probabilities given the prompt
    std::size_t num_tokens = 1;
    std::size_t num_chars = 1;
    std::optional<double> prior_logprob;  // log-probability with no question, for PMI
};

inline json to_json(const choice_score& c) {
    json j = {{"item_id", c.item_id},
              {"choice_index", c.choice_index},
              {"logprob", c.logprob},
              {"num_tokens", c.num_tokens},
              {"num_chars", c.num_chars}};
    if (c.prior_logprob) j["prior_logprob"] = *c.prior_logprob;
    return j;
}

inline choice_score choice_score_from_json(const json& j) {
    choice_score c;
    c.item_id = j.at("item_id").get<std::string>();
    c.choice_index = j.at("choice_index").get<std::size_t>();
    c.logprob = j.at("logprob").get<double>();
    c.num_tokens = j.at("num_tokens").get<std::size_t>();
    c.num_chars = j.at("num_chars").get<std::size_t>();
    if (j.contains("prior_logprob") && !j["prior_logprob"].is_null()) c.prior_logprob = j["prior_logprob"].get<double>();
    if (c.num_tokens < 1 || c.num_chars < 1)
        throw error("evaluator", c.item_id + ": num_tokens and num_chars must be at least 1");
    if (!std::isfinite(c.logprob) || (c.prior_logprob && !std::isfinite(*c.prior_logprob)))
        throw error("evaluator", c.item_id + ": non-finite log-probability");
    return c;
}

/// Zero-shot cloze prompt.
inline std::string render_prompt(const eval_item& item) {
    if (item.question.empty()) throw error("evaluator", item.item_id + ": empty question");
    return "Question: " + item.question + "\nAnswer:";
}

/// Index of the best choice under `norm`; ties go to the lowest index.
inline std::size_t rank_choices(std::span<const choice_score> scores, normalization norm) {
    if (scores.size() < 2) throw error("evaluator", "ranking needs at least 2 choices");
    std::set<std::size_t> seen;
    for (const auto& c : scores) {
        if (c.item_id != scores.front().item_id) throw error("evaluator", "choices from different items");
        if (!seen.insert(c.choice_index).second)
            throw error("evaluator", c.item_id + ": duplicate choice_index " + std::to_string(c.choice_index));
        if (norm == normalization::pmi && !c.prior_logprob)
            throw error("evaluator", c.item_id + ": pmi normalization needs prior_logprob");
    }
    auto value = [&](const choice_score& c) {
        switch (norm) {
            case normalization::none: return c.logprob;
            case normalization::per_char: return c.logprob / static_cast<double>(c.num_chars);
            case normalization::pmi: return c.logprob - *c.prior_logprob;
        }
        return c.logprob;
    };
    const choice_score* best = nullptr;
    double best_v = 0;
    for (const auto& c : scores) {
        const double v = value(c);
        if (!best || v > best_v || (v == best_v && c.choice_index < best->choice_index)) {
            best = &c;
            best_v = v;
        }
    }
    return best->choice_index;
}

/// Source of choice scores for an item: a model, or a file of scores
/// computed elsewhere.
class choice_scorer {
public:
    virtual ~choice_scorer() = default;
    virtual std::vector<choice_score> score(const eval_item& item) const = 0;
};

/// Reads line-delimited choice_score records.
class score_file : public choice_scorer {
public:
    explicit score_file(const std::filesystem::path& path) {
        for_each_record(path, "evaluator", [&](const json& r, std::size_t) {
            auto c = choice_score_from_json(r);
            by_item_[c.item_id].push_back(std::move(c));
        });
    }

    std::vector<choice_score> score(const eval_item& item) const override {
        auto it = by_item_.find(item.item_id);
        if (it == by_item_.end()) throw error("evaluator", "no scores for item " + item.item_id);
        return it->second;
    }

    bool has(const std::string& item_id) const { return by_item_.count(item_id) != 0; }

private:
    std::unordered_map<std::string, std::vector<choice_score>> by_item_;
};

/// Per-item correctness: the top-ranked choice is the gold answer.
inline std::map<std::string, bool> grade(std::span<const eval_item> items, const choice_scorer& scorer, normalization norm) {
    std::map<std::string, bool> out;
    for (const auto& it : items) {
        const auto scores = scorer.score(it);
        out[it.item_id] = rank_choices(scores, norm) == it.answer_index;
    }
    return out;
}

inline double accuracy(const std::map<std::string, bool>& correct, std::span<const std::string> item_set) {
    if (item_set.empty()) throw error("evaluator", "accuracy over an empty item set");
    std::size_t hits = 0;
    for (const auto& id : item_set) {
        auto it = correct.find(id);
        if (it == correct.end()) throw error("evaluator", "no prediction for item " + id);
        hits += it->second ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(item_set.size());
}

/// Predicts the most common training object of each relation (ties by
/// lexicographic order).
class majority_baseline {
public:
    explicit majority_baseline(std::span<const eval_item> train) {
        std::map<std::string, std::map<std::string, std::size_t>> counts;
        for (const auto& it : train) {
            if (!it.relation || !it.object) throw error("evaluator", it.item_id + ": baseline needs relation and object");
            ++counts[*it.relation][*it.object];
        }
        for (const auto& [rel, objs] : counts) {
            const std::pair<const std::string, std::size_t>* best = nullptr;
            for (const auto& kv : objs)
                if (!best || kv.second > best->second) best = &kv;  // map order breaks ties
            mode_[rel] = best->first;
        }
    }

    const std::string& predict(const std::string& relation) const {
        auto it = mode_.find(relation);
        if (it == mode_.end()) throw error("evaluator", "relation " + relation + " absent from training set");
        return it->second;
    }

    bool correct(const eval_item& item) const {
        if (!item.relation || !item.object) throw error("evaluator", item.item_id + ": baseline needs relation and object");
        return predict(*item.relation) == *item.object;
    }

    double accuracy(std::span<const eval_item> items) const {
        if (items.empty()) throw error("evaluator", "accuracy over an empty item set");
        std::size_t hits = 0;
        for (const auto& it : items) hits += correct(it) ? 1 : 0;
        return static_cast<double>(hits) / static_cast<double>(items.size());
    }

    const std::map<std::string, std::string>& modes() const { return mode_; }

private:
    std::map<std::string, std::string> mode_;
};

struct run_result {
    std::string condition;
    std::uint64_t seed = 0;
    std::map<std::string, bool> correct;
    double accuracy = 0.0;  // over the item set the run was scored on
};

inline run_result make_run(std::string condition, std::uint64_t seed, std::map<std::string, bool> correct,
                           std::span<const std::string> item_set) {
    run_result r{std::move(condition), seed, std::move(correct), 0.0};
    r.accuracy = interv::accuracy(r.correct, item_set);
    return r;
}

struct run_summary {
    double mean = 0.0;
    double std = 0.0;  // population standard deviation
    std::size_t runs = 0;
};

inline run_summary aggregate_runs(std::span<const run_result> runs, const std::string& condition) {
    if (runs.empty()) throw error("evaluator", "no runs for condition " + condition);
    double sum = 0;
    for (const auto& r : runs) {
        if (r.condition != condition)
            throw error("evaluator", "mixed conditions: " + r.condition + " vs " + condition);
        sum += r.accuracy;
    }
    const double n = static_cast<double>(runs.size());
    const double mean = sum / n;
    double ss = 0;
    for (const auto& r : runs) ss += (r.accuracy - mean) * (r.accuracy - mean);
    return {mean, runs.size() > 1 ? std::sqrt(ss / n) : 0.0, runs.size()};
}

/// Accuracy change relative to the retrained (unmodified data) condition.
inline double delta_accuracy(const run_summary& condition, const run_summary& retrained) {
    return condition.mean - retrained.mean;
}

// --- relevance audit ------------------------------------------------------

enum class audit_prompt { correct_answer, educated_guess, related_topic };

inline std::string to_string(audit_prompt p) {
    switch (p) {
        case audit_prompt::correct_answer: return "correct answer";
        case audit_prompt::educated_guess: return "educated guess";
        case audit_prompt::related_topic: return "related topic";
    }
    return "?";
}

inline audit_prompt parse_audit_prompt(std::string_view s) {
    if (s == "correct answer" || s == "correct-answer") return audit_prompt::correct_answer;
    if (s == "educated guess" || s == "educated-guess") return audit_prompt::educated_guess;
    if (s == "related topic" || s == "related-topic") return audit_prompt::related_topic;
    throw error("evaluator", "unknown audit prompt '" + std::string(s) + "'");
}

inline std::string audit_instruction(audit_prompt p) {
    const std::string lead = "You will be given a question or question stem and its correct answer, along with a document. ";
    const std::string tail = "Only output \"yes\" or \"no\".";
    const std::string not_required =
        "The document does not have to have enough information to be able to correctly answer the question. ";
    switch (p) {
        case audit_prompt::correct_answer:
            return lead +
                   "Output \"yes\" if the document contains enough information to correctly answer the question, "
                   "and \"no\" otherwise. " +
                   tail;
        case audit_prompt::educated_guess:
            return lead +
                   "Output \"yes\" if the document contains enough information to make an educated guess about the "
                   "answer, and \"no\" otherwise. " +
                   not_required + tail;
        case audit_prompt::related_topic:
            return lead +
                   "Output \"yes\" if the document is topically related to the question and answer, and \"no\" "
                   "otherwise. " +
                   not_required + tail;
    }
    return {};
}

inline std::string render_audit_prompt(audit_prompt p, std::string_view question, std::string_view answer,
                                       std::string_view document) {
    std::string out = audit_instruction(p);
    out += "\n\nQuestion: ";
    out += question;
    out += "\nAnswer: ";
    out += answer;
    out += "\nDocument: ";
    out += document;
    return out;
}

struct audit_export {
    std::vector<json> records;  // {item_id, doc_id, prompt_name, prompt}
    std::vector<std::string> warnings;
};

/// Picks up to `top_n` matched docs per item: the best-scoring ones for
/// scored methods, a seeded uniform sample for boolean ones.
inline audit_export export_audit(std::span<const eval_item> items, const match_set& ms,
                                 const std::function<const std::string*(const std::string&)>& doc_text,
                                 std::size_t top_n = 20, audit_prompt prompt = audit_prompt::correct_answer,
                                 std::uint64_t seed = 0) {
    audit_export out;
    if (top_n == 0) return out;
    std::mt19937_64 rng(seed);
    for (const auto& item : items) {
        auto it = ms.entries.find(item.item_id);
        if (it == ms.entries.end()) continue;
        std::vector<doc_score> docs = it->second;
        if (docs.size() < top_n)
            out.warnings.push_back(item.item_id + ": only " + std::to_string(docs.size()) + " matched docs (top_n " +
                                   std::to_string(top_n) + ")");
        if (is_boolean(ms.method)) {
            std::sort(docs.begin(), docs.end(), [](const doc_score& a, const doc_score& b) { return a.doc_id < b.doc_id; });
            // Partial Fisher-Yates with an explicit bounded draw, so the sample
            // depends only on the seed and not on the standard library.
            const std::size_t take = std::min(top_n, docs.size());
            for (std::size_t i = 0; i < take; ++i) {
                const std::uint64_t range = docs.size() - i;
                const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % range;
                std::uint64_t x;
                do x = rng(); while (x >= limit);
                std::swap(docs[i], docs[i + x % range]);
            }
            docs.resize(take);
        } else {
            std::sort(docs.begin(), docs.end(), [](const doc_score& a, const doc_score& b) {
                return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
            });
            if (docs.size() > top_n) docs.resize(top_n);
        }
        for (const auto& d : docs) {
            const std::string* text = doc_text(d.doc_id);
            if (!text) throw error("evaluator", "no text for doc " + d.doc_id);
            out.records.push_back({{"item_id", item.item_id},
                                   {"doc_id", d.doc_id},
                                   {"prompt_name", to_string(prompt)},
                                   {"prompt", render_audit_prompt(prompt, item.question, item.answer(), *text)}});
        }
    }
    return out;
}

struct annotation_record {
    std::string item_id;
    std::string doc_id;
    audit_prompt prompt = audit_prompt::correct_answer;
    bool yes = false;
    std::string annotator;
};

inline annotation_record annotation_from_json(const json& j) {
    const auto label = j.at("label").get<std::string>();
    if (label != "yes" && label != "no") throw error("evaluator", "label must be yes or no, got " + label);
    return {j.at("item_id").get<std::string>(), j.at("doc_id").get<std::string>(),
            parse_audit_prompt(j.at("prompt_name").get<std::string>()), label == "yes", j.value("annotator", "")};
}

inline std::vector<annotation_record> load_annotations(const std::filesystem::path& path) {
    std::vector<annotation_record> out;
    for_each_record(path, "evaluator", [&](const json& r, std::size_t) { out.push_back(annotation_from_json(r)); });
    return out;
}

/// Cohen's kappa over yes/no labels of two annotators on the same
/// (item, doc, prompt) keys.
inline double cohens_kappa(std::span<const annotation_record> a, std::span<const annotation_record> b) {
    using key = std::tuple<std::string, std::string, audit_prompt>;
    auto index = [](std::span<const annotation_record> recs) {
        std::map<key, bool> m;
        for (const auto& r : recs)
            if (!m.emplace(key{r.item_id, r.doc_id, r.prompt}, r.yes).second)
                throw error("evaluator", "duplicate annotation for (" + r.item_id + ", " + r.doc_id + ")");
        return m;
    };
    const auto ma = index(a), mb = index(b);
    if (ma.size() != mb.size()) throw error("evaluator", "annotation key mismatch");
    if (ma.empty()) throw error("evaluator", "no annotations");
    double yy = 0, yn = 0, ny = 0, nn = 0;
    for (const auto& [k, la] : ma) {
        auto it = mb.find(k);
        if (it == mb.end()) throw error("evaluator", "annotation key mismatch at (" + std::get<0>(k) + ", " + std::get<1>(k) + ")");
        const bool lb = it->second;
        (la ? (lb ? yy : yn) : (lb ? ny : nn)) += 1;
    }
    const double n = yy + yn + ny + nn;
    const double po = (yy + nn) / n;
    const double pe = ((yy + yn) / n) * ((yy + ny) / n) + ((ny + nn) / n) * ((yn + nn) / n);
    if (pe == 1.0) {
        if (po == 1.0) return 1.0;
        throw error("evaluator", "kappa undefined: chance agreement is 1");
    }
    return (po - pe) / (1.0 - pe);
}

}  // namespace interv
