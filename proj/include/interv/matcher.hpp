#pragma once

// Document-to-item matching: exact entity search (occurrence and
// cooccurrence), the per-item match set container shared by every method,
// dense-score ingestion, and the target-group disjunction.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "interv/aho_corasick.hpp"
#include "interv/corpus.hpp"
#include "interv/io.hpp"
#include "interv/items.hpp"

namespace interv {

struct term_hit {
    std::string doc_id;
    std::size_t char_start = 0;
    std::size_t char_end = 0;  // exclusive
    std::string term;

    friend bool operator==(const term_hit&, const term_hit&) = default;
    friend auto operator<=>(const term_hit&, const term_hit&) = default;
};

enum class match_method { cooccurrence, occurrence, bm25, dense };

inline std::string to_string(match_method m) {
    switch (m) {
        case match_method::cooccurrence: return "cooccurrence";
        case match_method::occurrence: return "occurrence";
        case match_method::bm25: return "bm25";
        case match_method::dense: return "dense";
    }
    return "?";
}

/// Accepts the long names and the CLI short forms (cooc, occ).
inline match_method parse_match_method(std::string_view s) {
    if (s == "cooccurrence" || s == "cooc") return match_method::cooccurrence;
    if (s == "occurrence" || s == "occ") return match_method::occurrence;
    if (s == "bm25") return match_method::bm25;
    if (s == "dense") return match_method::dense;
    throw error("matcher", "unknown matching method '" + std::string(s) + "'");
}

inline bool is_boolean(match_method m) {
    return m == match_method::cooccurrence || m == match_method::occurrence;
}

struct doc_score {
    std::string doc_id;
    double score = 1.0;

    friend bool operator==(const doc_score&, const doc_score&) = default;
};

/// How a real-valued score becomes a match indicator: top-k per item, or
/// score >= threshold. Both may be set; top-k applies after the threshold.
struct match_cutoff {
    std::optional<std::size_t> top_k;
    std::optional<double> threshold;

    friend bool operator==(const match_cutoff&, const match_cutoff&) = default;
};

struct match_set {
    match_method method = match_method::cooccurrence;
    std::map<std::string, std::vector<doc_score>> entries;  // item_id -> matched docs
    match_cutoff cutoff;
    std::vector<std::string> skipped;  // items that could not be matched (and why)

    std::size_t count(const std::string& item_id) const {
        auto it = entries.find(item_id);
        return it == entries.end() ? 0 : it->second.size();
    }

    bool covers(const std::string& item_id) const { return entries.count(item_id) != 0; }

    friend bool operator==(const match_set&, const match_set&) = default;
};

struct search_options {
    /// Require non-alphanumeric (ASCII) characters on both sides of a hit.
    bool word_boundary = false;
};

struct cooccurrence_options {
    search_options search;
    /// Maximum number of characters between the two hits; unset means the
    /// whole document is one cooccurrence window.
    std::optional<std::size_t> max_gap;
};

namespace detail {

inline bool is_word_char(unsigned char c) { return std::isalnum(c) != 0; }

inline bool on_word_boundary(std::string_view text, std::size_t start, std::size_t end) {
    if (start > 0 && is_word_char(static_cast<unsigned char>(text[start - 1]))) return false;
    if (end < text.size() && is_word_char(static_cast<unsigned char>(text[end]))) return false;
    return true;
}

struct interval {
    std::size_t start, end;
};

/// Runs one automaton over each document and calls `fn(doc, hits_by_term)`
/// for documents with at least one hit. `hits_by_term` maps term index to
/// its hit intervals in increasing start order.
template <typename Fn>
void scan_documents(const data_batch& batch, std::span<const std::string> terms,
                    const search_options& opt, Fn&& fn) {
    if (terms.empty()) return;
    const aho_corasick automaton(terms);
    std::map<std::uint32_t, std::vector<interval>> hits;
    for (const auto& doc : batch.documents()) {
        hits.clear();
        automaton.scan(doc.text, [&](std::uint32_t p, std::size_t s, std::size_t e) {
            if (opt.word_boundary && !on_word_boundary(doc.text, s, e)) return;
            hits[p].push_back({s, e});
        });
        if (hits.empty()) continue;
        for (auto& [p, v] : hits)
            std::sort(v.begin(), v.end(), [](const interval& a, const interval& b) { return a.start < b.start; });
        fn(doc, hits);
    }
}

inline std::size_t gap_between(const interval& a, const interval& b) {
    if (a.end <= b.start) return b.start - a.end;
    if (b.end <= a.start) return a.start - b.end;
    return 0;
}

inline bool disjoint(const interval& a, const interval& b) { return a.end <= b.start || b.end <= a.start; }

/// True when some subject hit and some object hit have disjoint character
/// windows (and, with a gap limit, lie close enough).
inline bool has_disjoint_pair(const std::vector<interval>& subj, const std::vector<interval>& obj,
                              std::optional<std::size_t> max_gap) {
    if (!max_gap) {
        // Any object hit ending at or before s.start, or starting at or after s.end.
        std::size_t min_end = obj.front().end, max_start = obj.front().start;
        for (const auto& o : obj) {
            min_end = std::min(min_end, o.end);
            max_start = std::max(max_start, o.start);
        }
        for (const auto& s : subj)
            if (min_end <= s.start || max_start >= s.end) return true;
        return false;
    }
    for (const auto& s : subj)
        for (const auto& o : obj)
            if (disjoint(s, o) && gap_between(s, o) <= *max_gap) return true;
    return false;
}

struct entity_terms {
    std::vector<std::string> terms;
    std::unordered_map<std::string, std::uint32_t> index;

    std::uint32_t add(const std::string& t) {
        auto [it, inserted] = index.emplace(t, static_cast<std::uint32_t>(terms.size()));
        if (inserted) terms.push_back(t);
        return it->second;
    }
};

struct entity_item {
    const eval_item* item;
    std::uint32_t subject, object;
};

inline std::vector<entity_item> collect_entity_items(std::span<const eval_item> items, entity_terms& terms,
                                                     match_set& out) {
    std::vector<entity_item> usable;
    for (const auto& it : items) {
        if (!it.subject || !it.object || it.subject->empty() || it.object->empty()) {
            out.skipped.push_back(it.item_id);
            continue;
        }
        usable.push_back({&it, terms.add(*it.subject), terms.add(*it.object)});
        out.entries[it.item_id];
    }
    return usable;
}

}  // namespace detail

/// Every exact (case-sensitive, byte-offset) occurrence of every term, in
/// document order, then by start offset, then by term.
inline std::vector<term_hit> find_occurrences(const data_batch& batch, std::span<const std::string> terms,
                                              const search_options& opt = {}) {
    for (const auto& t : terms)
        if (t.empty()) throw error("matcher", "search terms must be non-empty");
    std::vector<std::string> unique(terms.begin(), terms.end());
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());

    std::vector<term_hit> out;
    detail::scan_documents(batch, unique, opt, [&](const document& doc, const auto& hits) {
        const std::size_t first = out.size();
        for (const auto& [p, v] : hits)
            for (const auto& h : v) out.push_back({doc.doc_id, h.start, h.end, unique[p]});
        std::sort(out.begin() + static_cast<std::ptrdiff_t>(first), out.end(),
                  [](const term_hit& a, const term_hit& b) {
                      return std::tie(a.char_start, a.term) < std::tie(b.char_start, b.term);
                  });
    });
    return out;
}

/// A document matches an item when it holds a subject hit and an object hit
/// whose character windows do not overlap. Items without subject/object are
/// listed in `skipped`.
inline match_set match_cooccurrence(const data_batch& batch, std::span<const eval_item> items,
                                    const cooccurrence_options& opt = {}) {
    match_set out;
    out.method = match_method::cooccurrence;
    detail::entity_terms terms;
    const auto usable = detail::collect_entity_items(items, terms, out);

    std::unordered_map<std::uint32_t, std::vector<const detail::entity_item*>> by_subject;
    for (const auto& e : usable) by_subject[e.subject].push_back(&e);

    detail::scan_documents(batch, terms.terms, opt.search, [&](const document& doc, const auto& hits) {
        for (const auto& [term, subj_hits] : hits) {
            auto it = by_subject.find(term);
            if (it == by_subject.end()) continue;
            for (const auto* e : it->second) {
                auto obj = hits.find(e->object);
                if (obj == hits.end()) continue;
                if (detail::has_disjoint_pair(subj_hits, obj->second, opt.max_gap))
                    out.entries[e->item->item_id].push_back({doc.doc_id, 1.0});
            }
        }
    });
    return out;
}

/// A document matches an item when it mentions the subject or the object.
inline match_set match_occurrence(const data_batch& batch, std::span<const eval_item> items,
                                  const search_options& opt = {}) {
    match_set out;
    out.method = match_method::occurrence;
    detail::entity_terms terms;
    const auto usable = detail::collect_entity_items(items, terms, out);

    std::unordered_map<std::uint32_t, std::vector<const detail::entity_item*>> by_term;
    for (const auto& e : usable) {
        by_term[e.subject].push_back(&e);
        if (e.object != e.subject) by_term[e.object].push_back(&e);
    }

    std::set<const detail::entity_item*> seen;
    detail::scan_documents(batch, terms.terms, opt, [&](const document& doc, const auto& hits) {
        seen.clear();
        for (const auto& [term, _] : hits) {
            auto it = by_term.find(term);
            if (it == by_term.end()) continue;
            for (const auto* e : it->second) seen.insert(e);
        }
        // Report in item order, not pointer order.
        std::vector<const detail::entity_item*> ordered(seen.begin(), seen.end());
        std::sort(ordered.begin(), ordered.end(),
                  [](const auto* a, const auto* b) { return a->item->item_id < b->item->item_id; });
        for (const auto* e : ordered) out.entries[e->item->item_id].push_back({doc.doc_id, 1.0});
    });
    return out;
}

/// Sorts each item's docs by descending score (ties by doc_id) and applies
/// the cutoff.
inline void apply_cutoff(match_set& ms, const match_cutoff& cutoff) {
    ms.cutoff = cutoff;
    for (auto& [item, docs] : ms.entries) {
        std::sort(docs.begin(), docs.end(), [](const doc_score& a, const doc_score& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.doc_id < b.doc_id;
        });
        if (cutoff.threshold) {
            const double tau = *cutoff.threshold;
            docs.erase(std::remove_if(docs.begin(), docs.end(), [&](const doc_score& d) { return d.score < tau; }),
                       docs.end());
        }
        if (cutoff.top_k && docs.size() > *cutoff.top_k) docs.resize(*cutoff.top_k);
    }
}

/// Reads externally computed {item_id, doc_id, score} records.
inline match_set ingest_dense_scores(const std::filesystem::path& path, std::span<const eval_item> items,
                                     const match_cutoff& cutoff = {}) {
    match_set out;
    out.method = match_method::dense;
    std::set<std::string> known;
    for (const auto& it : items) known.insert(it.item_id);
    std::set<std::pair<std::string, std::string>> seen;

    for_each_record(path, "matcher", [&](const json& r, std::size_t line) {
        const auto where = path.string() + ":" + std::to_string(line);
        if (!r.is_object() || !r.contains("item_id") || !r.contains("doc_id") || !r.contains("score") ||
            !r["score"].is_number())
            throw error("matcher", where + ": malformed line");
        auto item = r["item_id"].get<std::string>();
        auto doc = r["doc_id"].get<std::string>();
        const double score = r["score"].get<double>();
        if (!std::isfinite(score)) throw error("matcher", where + ": non-finite score");
        if (!known.count(item)) throw error("matcher", where + ": unknown item_id " + item);
        if (!seen.emplace(item, doc).second)
            throw error("matcher", where + ": duplicate score for (" + item + ", " + doc + ")");
        out.entries[item].push_back({std::move(doc), score});
    });
    apply_cutoff(out, cutoff);
    return out;
}

/// The target-group disjunction: a document matches if it matches any
/// target item.
inline std::set<std::string> f_match(const match_set& ms, const std::set<std::string>& target_items) {
    std::set<std::string> out;
    for (const auto& item : target_items) {
        auto it = ms.entries.find(item);
        if (it == ms.entries.end()) continue;
        for (const auto& d : it->second) out.insert(d.doc_id);
    }
    return out;
}

// Match set files: a header record followed by one record per item.

inline std::vector<json> match_set_records(const match_set& ms, const std::string& config_hash = {}) {
    json header = {{"type", "match_set"}, {"method", to_string(ms.method)}, {"skipped", ms.skipped}};
    header["top_k"] = ms.cutoff.top_k ? json(*ms.cutoff.top_k) : json(nullptr);
    header["threshold"] = ms.cutoff.threshold ? json(*ms.cutoff.threshold) : json(nullptr);
    if (!config_hash.empty()) header["config_hash"] = config_hash;
    std::vector<json> recs{header};
    for (const auto& [item, docs] : ms.entries) {
        json arr = json::array();
        for (const auto& d : docs) arr.push_back({d.doc_id, d.score});
        recs.push_back({{"type", "item"}, {"item_id", item}, {"matches", std::move(arr)}});
    }
    return recs;
}

inline void write_match_set(const std::filesystem::path& path, const match_set& ms,
                            const std::string& config_hash = {}) {
    write_records(path, match_set_records(ms, config_hash));
}

inline match_set read_match_set(const std::filesystem::path& path) {
    match_set ms;
    bool have_header = false;
    for_each_record(path, "matcher", [&](const json& r, std::size_t line) {
        const auto type = r.at("type").get<std::string>();
        if (type == "match_set") {
            ms.method = parse_match_method(r.at("method").get<std::string>());
            if (r.contains("top_k") && !r["top_k"].is_null()) ms.cutoff.top_k = r["top_k"].get<std::size_t>();
            if (r.contains("threshold") && !r["threshold"].is_null())
                ms.cutoff.threshold = r["threshold"].get<double>();
            ms.skipped = r.value("skipped", std::vector<std::string>{});
            have_header = true;
        } else if (type == "item") {
            auto& docs = ms.entries[r.at("item_id").get<std::string>()];
            for (const auto& m : r.at("matches")) {
                const double score = m.at(1).get<double>();
                if (!std::isfinite(score))
                    throw error("matcher", path.string() + ":" + std::to_string(line) + ": non-finite score");
                docs.push_back({m.at(0).get<std::string>(), score});
            }
        } else {
            throw error("matcher", path.string() + ":" + std::to_string(line) + ": unknown record type " + type);
        }
    });
    if (!have_header) throw error("matcher", path.string() + ": missing match_set header");
    return ms;
}

}  // namespace interv
