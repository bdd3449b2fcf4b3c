#pragma once

// Okapi BM25 over document text sidecars.
//
//   score(q, d) = sum over distinct query terms t of
//                 idf(t) * tf / (tf + k1 * (1 - b + b * |d| / avgdl))
//   idf(t)      = ln((N - df + 0.5) / (df + 0.5) + 1)

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "interv/corpus.hpp"
#include "interv/io.hpp"
#include "interv/items.hpp"
#include "interv/matcher.hpp"

namespace interv {

struct analyzer_config {
    bool use_stopwords = false;
    std::vector<std::string> stopwords = {"a",  "an",   "and",  "are", "as",   "at",   "be",    "by",
                                          "for", "from", "has", "in",  "is",   "it",   "its",   "of",
                                          "on",  "or",   "that", "the", "this", "to",  "was",   "were",
                                          "will", "with"};

    json to_json() const { return {{"use_stopwords", use_stopwords}, {"stopwords", stopwords}}; }

    friend bool operator==(const analyzer_config&, const analyzer_config&) = default;
};

/// Lowercases ASCII and splits on anything that is not an ASCII letter or
/// digit. Bytes >= 0x80 are kept inside words so UTF-8 text is not torn.
inline std::vector<std::string> analyze(std::string_view text, const analyzer_config& cfg = {}) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (cur.empty()) return;
        if (!cfg.use_stopwords || std::find(cfg.stopwords.begin(), cfg.stopwords.end(), cur) == cfg.stopwords.end())
            out.push_back(cur);
        cur.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c >= 0x80 || std::isalnum(c))
            cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
        else
            flush();
    }
    flush();
    return out;
}

struct bm25_params {
    double k1 = 1.5;
    double b = 0.75;

    friend bool operator==(const bm25_params&, const bm25_params&) = default;
};

struct posting {
    std::uint32_t doc;  // index into bm25_index::doc_ids()
    std::uint32_t tf;

    friend bool operator==(const posting&, const posting&) = default;
};

class bm25_index {
public:
    bm25_index() = default;

    /// Documents are ordered by doc_id, so postings sorted by document index
    /// are also sorted by doc_id. Analysis is split over `threads` workers and
    /// merged in document order, so the result does not depend on it.
    static bm25_index build(const data_batch& batch, const analyzer_config& cfg = {}, bm25_params params = {},
                            unsigned threads = 1) {
        if (batch.documents().empty()) throw error("matcher", "cannot build BM25 index over an empty corpus");
        std::vector<const document*> docs;
        for (const auto& d : batch.documents()) docs.push_back(&d);
        std::sort(docs.begin(), docs.end(), [](const auto* a, const auto* b) { return a->doc_id < b->doc_id; });

        using term_counts = std::map<std::string, std::uint32_t>;
        std::vector<term_counts> counts(docs.size());
        std::vector<std::uint32_t> lengths(docs.size());
        auto work = [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) {
                auto terms = analyze(docs[i]->text, cfg);
                lengths[i] = static_cast<std::uint32_t>(terms.size());
                for (auto& t : terms) ++counts[i][std::move(t)];
            }
        };
        threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(docs.size())));
        if (threads == 1) {
            work(0, docs.size());
        } else {
            std::vector<std::future<void>> jobs;
            const std::size_t chunk = (docs.size() + threads - 1) / threads;
            for (std::size_t lo = 0; lo < docs.size(); lo += chunk)
                jobs.push_back(std::async(std::launch::async, work, lo, std::min(docs.size(), lo + chunk)));
            for (auto& j : jobs) j.get();
        }

        bm25_index idx;
        idx.params_ = params;
        idx.analyzer_ = cfg;
        idx.doc_lengths_ = std::move(lengths);
        for (std::size_t i = 0; i < docs.size(); ++i) {
            idx.doc_ids_.push_back(docs[i]->doc_id);
            for (const auto& [t, tf] : counts[i])
                idx.postings_[t].push_back({static_cast<std::uint32_t>(i), tf});
        }
        idx.finish();
        return idx;
    }

    std::size_t doc_count() const { return doc_ids_.size(); }
    double average_length() const { return avg_len_; }
    const std::vector<std::string>& doc_ids() const { return doc_ids_; }
    const std::vector<std::uint32_t>& doc_lengths() const { return doc_lengths_; }
    const std::map<std::string, std::vector<posting>>& postings() const { return postings_; }
    const bm25_params& params() const { return params_; }
    const analyzer_config& analyzer() const { return analyzer_; }

    std::size_t document_frequency(const std::string& term) const {
        auto it = postings_.find(term);
        return it == postings_.end() ? 0 : it->second.size();
    }

    double idf(std::size_t df) const {
        const double n = static_cast<double>(doc_count());
        const double f = static_cast<double>(df);
        return std::log((n - f + 0.5) / (f + 0.5) + 1.0);
    }

    /// Scores of every document for `query`, indexed like doc_ids().
    std::vector<double> score_all(std::string_view query) const {
        std::vector<double> scores(doc_count(), 0.0);
        auto terms = analyze(query, analyzer_);
        std::set<std::string> unique(terms.begin(), terms.end());
        for (const auto& t : unique) {
            auto it = postings_.find(t);
            if (it == postings_.end()) continue;
            const double w = idf(it->second.size());
            for (const auto& p : it->second) {
                const double tf = p.tf;
                const double norm = avg_len_ > 0 ? doc_lengths_[p.doc] / avg_len_ : 0.0;
                scores[p.doc] += w * tf / (tf + params_.k1 * (1.0 - params_.b + params_.b * norm));
            }
        }
        return scores;
    }

    /// Docs with positive score, best first; ties by ascending doc_id.
    std::vector<doc_score> search(std::string_view query, std::size_t top_k) const {
        if (top_k < 1) throw error("matcher", "top_k must be at least 1");
        const auto scores = score_all(query);
        std::vector<std::uint32_t> hits;
        for (std::uint32_t i = 0; i < scores.size(); ++i)
            if (scores[i] > 0) hits.push_back(i);
        // doc indices follow doc_id order, so index order breaks ties.
        auto better = [&](std::uint32_t a, std::uint32_t b) {
            if (scores[a] != scores[b]) return scores[a] > scores[b];
            return a < b;
        };
        if (hits.size() > top_k) {
            std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(top_k), hits.end(), better);
            hits.resize(top_k);
        } else {
            std::sort(hits.begin(), hits.end(), better);
        }
        std::vector<doc_score> out;
        out.reserve(hits.size());
        for (auto i : hits) out.push_back({doc_ids_[i], scores[i]});
        return out;
    }

    friend bool operator==(const bm25_index& a, const bm25_index& b) {
        return a.doc_ids_ == b.doc_ids_ && a.doc_lengths_ == b.doc_lengths_ && a.postings_ == b.postings_ &&
               a.params_ == b.params_ && a.analyzer_ == b.analyzer_ && a.avg_len_ == b.avg_len_;
    }

    // Index file: a header record, then one record per term.
    void save(const std::filesystem::path& path) const {
        std::vector<json> recs;
        recs.push_back({{"type", "bm25_index"},
                        {"k1", params_.k1},
                        {"b", params_.b},
                        {"analyzer", analyzer_.to_json()},
                        {"doc_ids", doc_ids_},
                        {"doc_lengths", doc_lengths_}});
        for (const auto& [t, ps] : postings_) {
            json arr = json::array();
            for (const auto& p : ps) arr.push_back({p.doc, p.tf});
            recs.push_back({{"type", "term"}, {"term", t}, {"postings", std::move(arr)}});
        }
        write_records(path, recs);
    }

    static bm25_index load(const std::filesystem::path& path) {
        bm25_index idx;
        bool have_header = false;
        for_each_record(path, "matcher", [&](const json& r, std::size_t) {
            if (r.at("type") == "bm25_index") {
                idx.params_ = {r.at("k1").get<double>(), r.at("b").get<double>()};
                idx.analyzer_.use_stopwords = r.at("analyzer").at("use_stopwords").get<bool>();
                idx.analyzer_.stopwords = r.at("analyzer").at("stopwords").get<std::vector<std::string>>();
                idx.doc_ids_ = r.at("doc_ids").get<std::vector<std::string>>();
                idx.doc_lengths_ = r.at("doc_lengths").get<std::vector<std::uint32_t>>();
                have_header = true;
            } else {
                auto& ps = idx.postings_[r.at("term").get<std::string>()];
                for (const auto& p : r.at("postings")) ps.push_back({p.at(0).get<std::uint32_t>(), p.at(1).get<std::uint32_t>()});
            }
        });
        if (!have_header) throw error("matcher", path.string() + ": missing bm25_index header");
        idx.finish();
        return idx;
    }

private:
    void finish() {
        double total = 0;
        for (auto l : doc_lengths_) total += l;
        avg_len_ = doc_lengths_.empty() ? 0.0 : total / static_cast<double>(doc_lengths_.size());
    }

    std::vector<std::string> doc_ids_;
    std::vector<std::uint32_t> doc_lengths_;
    std::map<std::string, std::vector<posting>> postings_;
    bm25_params params_;
    analyzer_config analyzer_;
    double avg_len_ = 0.0;
};

inline bm25_index build_bm25(const data_batch& batch, const analyzer_config& cfg = {}, bm25_params params = {},
                             unsigned threads = 1) {
    return bm25_index::build(batch, cfg, params, threads);
}

inline std::vector<doc_score> score_bm25(const bm25_index& index, std::string_view query, std::size_t top_k) {
    return index.search(query, top_k);
}

/// The retrieval query for an item: its question followed by the correct answer.
inline std::string bm25_query(const eval_item& item) { return item.question + " " + item.answer(); }

/// Scores each item's query against the index and keeps matches per cutoff
/// (top-k per item by default).
inline match_set match_bm25(const bm25_index& index, std::span<const eval_item> items,
                            match_cutoff cutoff = {1000, std::nullopt}) {
    match_set out;
    out.method = match_method::bm25;
    for (const auto& it : items) {
        const auto scores = index.score_all(bm25_query(it));
        auto& docs = out.entries[it.item_id];
        for (std::size_t i = 0; i < scores.size(); ++i)
            if (scores[i] > 0) docs.push_back({index.doc_ids()[i], scores[i]});
    }
    apply_cutoff(out, cutoff);
    return out;
}

}  // namespace interv
