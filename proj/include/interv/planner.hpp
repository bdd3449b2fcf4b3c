#pragma once

// Intervention planning and batch rewriting by document swapping.
//
// Suppress: matched docs in batch t are overwritten by unrelated docs from
// batch t+1. Promote: matched docs from batch t+1 overwrite unrelated docs
// in batch t. A swap writes the source tokens over the target span inside
// its training sequence; a longer source shifts the rest of the sequence
// right and drops what falls off the end, a shorter one shifts it left and
// pads the tail. Total token count never changes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "interv/corpus.hpp"
#include "interv/io.hpp"
#include "interv/matcher.hpp"
#include "interv/selector.hpp"

namespace interv {

struct replacement {
    std::string target_doc;  // in batch t
    std::string source_doc;  // in batch t+1
    std::vector<std::string> reason;  // target items behind the swap
    match_method method = match_method::cooccurrence;
    double score = 1.0;

    friend bool operator==(const replacement&, const replacement&) = default;
};

struct plan_config {
    /// Matched documents considered per item, best-scoring first. Only
    /// applies to scored methods; boolean methods use every match.
    std::optional<std::size_t> per_item_k = 1000;
    /// Upper bound on the number of replacements.
    std::optional<std::size_t> budget;
    /// Sources longer than this are never chosen (0 = no limit).
    std::size_t max_source_length = 0;

    json to_json() const {
        return {{"per_item_k", per_item_k ? json(*per_item_k) : json(nullptr)},
                {"budget", budget ? json(*budget) : json(nullptr)},
                {"max_source_length", max_source_length}};
    }
};

struct intervention_plan {
    intervention_mode mode = intervention_mode::suppress;
    batch_id_t batch = 0;
    batch_id_t donor_batch = 0;
    std::vector<replacement> replacements;
    json config = json::object();

    friend bool operator==(const intervention_plan& a, const intervention_plan& b) {
        return a.mode == b.mode && a.batch == b.batch && a.donor_batch == b.donor_batch &&
               a.replacements == b.replacements && a.config == b.config;
    }
};

namespace detail {

struct matched_doc {
    std::string doc_id;
    std::vector<std::string> items;
    double score = -std::numeric_limits<double>::infinity();
};

/// Docs matching any target item, with the items they match. Scored
/// methods only count each item's best `per_item_k` docs.
inline std::map<std::string, matched_doc> related_docs(const match_set& ms, std::span<const std::string> targets,
                                                       const plan_config& cfg, bool require_cover) {
    std::map<std::string, matched_doc> out;
    for (const auto& item : targets) {
        auto it = ms.entries.find(item);
        if (it == ms.entries.end()) {
            if (require_cover) throw error("planner", "match set does not cover target item " + item);
            continue;
        }
        std::vector<doc_score> docs = it->second;
        if (!is_boolean(ms.method)) {
            std::sort(docs.begin(), docs.end(), [](const doc_score& a, const doc_score& b) {
                return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
            });
            if (cfg.per_item_k && docs.size() > *cfg.per_item_k) docs.resize(*cfg.per_item_k);
        }
        for (const auto& d : docs) {
            auto& m = out[d.doc_id];
            m.doc_id = d.doc_id;
            m.items.push_back(item);
            m.score = std::max(m.score, d.score);
        }
    }
    for (auto& [_, m] : out) {
        std::sort(m.items.begin(), m.items.end());
        m.items.erase(std::unique(m.items.begin(), m.items.end()), m.items.end());
    }
    return out;
}

/// Processing order: most matched items first, then by doc_id.
inline std::vector<matched_doc> by_priority(std::map<std::string, matched_doc> docs) {
    std::vector<matched_doc> out;
    for (auto& [_, m] : docs) out.push_back(std::move(m));
    std::stable_sort(out.begin(), out.end(), [](const matched_doc& a, const matched_doc& b) {
        if (a.items.size() != b.items.size()) return a.items.size() > b.items.size();
        return a.doc_id < b.doc_id;
    });
    return out;
}

/// Available partner documents bucketed by token length. Within a length,
/// lower relevance score wins, then smaller doc_id.
class partner_pool {
public:
    void add(std::size_t length, double score, const std::string& doc_id) { by_length_[length].insert({score, doc_id}); }

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& [_, s] : by_length_) n += s.size();
        return n;
    }

    std::optional<std::string> take_exact(std::size_t length) {
        auto it = by_length_.find(length);
        if (it == by_length_.end()) return std::nullopt;
        return pop(it);
    }

    /// Closest length; equal distance prefers the lower score, then the
    /// smaller doc_id.
    std::optional<std::string> take_closest(std::size_t length) {
        if (by_length_.empty()) return std::nullopt;
        auto hi = by_length_.lower_bound(length);
        auto choice = hi;
        if (hi == by_length_.end()) {
            choice = std::prev(hi);
        } else if (hi != by_length_.begin()) {
            auto lo = std::prev(hi);
            const std::size_t dlo = length - lo->first, dhi = hi->first - length;
            if (dlo < dhi || (dlo == dhi && *lo->second.begin() < *hi->second.begin())) choice = lo;
        }
        return pop(choice);
    }

private:
    using bucket = std::set<std::pair<double, std::string>>;

    std::string pop(std::map<std::size_t, bucket>::iterator it) {
        auto id = it->second.begin()->second;
        it->second.erase(it->second.begin());
        if (it->second.empty()) by_length_.erase(it);
        return id;
    }

    std::map<std::size_t, bucket> by_length_;
};

/// Pairs every doc in `ordered` with a partner: exact-length partners are
/// handed out first (in priority order), then the remaining docs take the
/// closest remaining length. Returns partner ids aligned with `ordered`.
inline std::vector<std::string> assign_partners(const std::vector<matched_doc>& ordered,
                                                const std::vector<std::size_t>& lengths, partner_pool pool,
                                                const char* what) {
    if (pool.size() < ordered.size())
        throw error("planner", "insufficient unrelated " + std::string(what) + " docs: shortfall " +
                                   std::to_string(ordered.size() - pool.size()));
    std::vector<std::optional<std::string>> partner(ordered.size());
    for (std::size_t i = 0; i < ordered.size(); ++i) partner[i] = pool.take_exact(lengths[i]);
    for (std::size_t i = 0; i < ordered.size(); ++i)
        if (!partner[i]) partner[i] = pool.take_closest(lengths[i]);
    std::vector<std::string> out;
    out.reserve(ordered.size());
    for (auto& p : partner) out.push_back(std::move(*p));
    return out;
}

inline std::vector<std::string> check_batch_docs(const std::map<std::string, matched_doc>& docs, const data_batch& batch) {
    std::vector<std::string> missing;
    for (const auto& [id, _] : docs)
        if (!batch.find(id)) missing.push_back(id);
    return missing;
}

inline partner_pool unrelated_pool(const data_batch& batch, const std::map<std::string, matched_doc>& related,
                                   const match_set& ms, std::span<const std::string> targets, std::size_t max_length) {
    // Relevance of an unrelated doc, for ordering: best score it has for any
    // target item (it is below each item's cut, or it would be related).
    std::unordered_map<std::string, double> relevance;
    if (!is_boolean(ms.method)) {
        for (const auto& item : targets) {
            auto it = ms.entries.find(item);
            if (it == ms.entries.end()) continue;
            for (const auto& d : it->second) {
                auto [pos, inserted] = relevance.emplace(d.doc_id, d.score);
                if (!inserted) pos->second = std::max(pos->second, d.score);
            }
        }
    }
    partner_pool pool;
    for (const auto& d : batch.documents()) {
        if (related.count(d.doc_id)) continue;
        if (max_length && d.length() > max_length) continue;
        auto r = relevance.find(d.doc_id);
        pool.add(d.length(), r == relevance.end() ? -std::numeric_limits<double>::infinity() : r->second, d.doc_id);
    }
    return pool;
}

}  // namespace detail

/// Replaces docs in `batch_t` matching any target item with unrelated docs
/// from `batch_next`. `matches_t` and `matches_next` hold the same method's
/// matches over each batch; the latter decides which donors are unrelated.
inline intervention_plan plan_suppress(const match_set& matches_t, const match_set& matches_next,
                                       std::span<const std::string> targets, const data_batch& batch_t,
                                       const data_batch& batch_next, const plan_config& cfg = {}) {
    if (batch_next.documents().empty()) throw error("planner", "donor batch is empty");
    auto related = detail::related_docs(matches_t, targets, cfg, true);
    if (auto missing = detail::check_batch_docs(related, batch_t); !missing.empty())
        throw error("planner", "matched doc " + missing.front() + " is not in batch " + std::to_string(batch_t.id()));
    const auto related_next = detail::related_docs(matches_next, targets, cfg, false);

    auto ordered = detail::by_priority(std::move(related));
    if (cfg.budget && ordered.size() > *cfg.budget) ordered.resize(*cfg.budget);
    std::vector<std::size_t> lengths;
    for (const auto& m : ordered) lengths.push_back(batch_t.find(m.doc_id)->length());

    auto donors = detail::assign_partners(
        ordered, lengths,
        detail::unrelated_pool(batch_next, related_next, matches_next, targets, cfg.max_source_length), "donor");

    intervention_plan plan;
    plan.mode = intervention_mode::suppress;
    plan.batch = batch_t.id();
    plan.donor_batch = batch_next.id();
    plan.config = cfg.to_json();
    for (std::size_t i = 0; i < ordered.size(); ++i)
        plan.replacements.push_back({ordered[i].doc_id, donors[i], ordered[i].items, matches_t.method,
                                     is_boolean(matches_t.method) ? 1.0 : ordered[i].score});
    return plan;
}

/// Moves docs in `batch_next` matching any target item into `batch_t`,
/// overwriting docs of `batch_t` that match no target item.
inline intervention_plan plan_promote(const match_set& matches_next, const match_set& matches_t,
                                      std::span<const std::string> targets, const data_batch& batch_t,
                                      const data_batch& batch_next, const plan_config& cfg = {}) {
    auto sources = detail::related_docs(matches_next, targets, cfg, true);
    if (auto missing = detail::check_batch_docs(sources, batch_next); !missing.empty())
        throw error("planner",
                    "matched doc " + missing.front() + " is not in batch " + std::to_string(batch_next.id()));
    const auto related_t = detail::related_docs(matches_t, targets, cfg, false);

    auto ordered = detail::by_priority(std::move(sources));
    if (cfg.max_source_length)
        std::erase_if(ordered, [&](const detail::matched_doc& m) {
            return batch_next.find(m.doc_id)->length() > cfg.max_source_length;
        });
    if (cfg.budget && ordered.size() > *cfg.budget) ordered.resize(*cfg.budget);
    std::vector<std::size_t> lengths;
    for (const auto& m : ordered) lengths.push_back(batch_next.find(m.doc_id)->length());

    auto slots = detail::assign_partners(ordered, lengths,
                                         detail::unrelated_pool(batch_t, related_t, matches_t, targets, 0), "target");

    intervention_plan plan;
    plan.mode = intervention_mode::promote;
    plan.batch = batch_t.id();
    plan.donor_batch = batch_next.id();
    plan.config = cfg.to_json();
    for (std::size_t i = 0; i < ordered.size(); ++i)
        plan.replacements.push_back({slots[i], ordered[i].doc_id, ordered[i].items, matches_next.method,
                                     is_boolean(matches_next.method) ? 1.0 : ordered[i].score});
    return plan;
}

struct swap_entry {
    std::string target_doc;
    std::string source_doc;
    std::size_t target_length = 0;
    std::size_t replaced_length = 0;  // target tokens actually overwritten
    std::size_t source_length = 0;
    bool exact_length = false;
    std::size_t tokens_truncated = 0;  // dropped off the sequence end
    std::size_t tokens_padded = 0;     // pad tokens appended at the sequence end
    bool applied = true;               // false if an earlier swap pushed the target out

    friend bool operator==(const swap_entry&, const swap_entry&) = default;
};

struct swap_report {
    std::vector<swap_entry> entries;  // in plan order
    std::size_t exact_count = 0;
    std::size_t tokens_truncated = 0;
    std::size_t tokens_padded = 0;
    std::vector<std::string> dropped_docs;  // truncated away entirely
    std::vector<std::string> clipped_docs;  // lost a tail; sidecar text kept as-is

    double exact_rate() const { return entries.empty() ? 1.0 : double(exact_count) / double(entries.size()); }
};

struct apply_options {
    std::size_t sequence_length = 0;
    token_t pad_token = 0;
};

/// Rewrites `batch_t` per the plan. Swaps inside one sequence window are
/// applied in ascending target offset; a target spanning several sequences
/// makes those sequences one window.
inline std::pair<data_batch, swap_report> apply_plan(const intervention_plan& plan, const data_batch& batch_t,
                                                     const data_batch& batch_next, const apply_options& opt) {
    const std::size_t L = opt.sequence_length;
    if (L == 0) throw error("planner", "sequence_length must be positive");
    if (batch_t.id() != plan.batch) throw error("planner", "plan targets batch " + std::to_string(plan.batch));

    const auto& docs = batch_t.documents();
    std::unordered_map<std::string, std::size_t> slot_of;
    for (std::size_t i = 0; i < docs.size(); ++i) slot_of.emplace(docs[i].doc_id, i);

    struct pending {
        std::size_t plan_index;
        std::size_t target_slot;
        const document* source;
    };
    std::vector<pending> work;
    std::set<std::string> used_targets, used_sources;
    for (std::size_t i = 0; i < plan.replacements.size(); ++i) {
        const auto& r = plan.replacements[i];
        auto t = slot_of.find(r.target_doc);
        if (t == slot_of.end()) throw error("planner", "target doc " + r.target_doc + " not in batch t");
        const document* src = batch_next.find(r.source_doc);
        if (!src) throw error("planner", "source doc " + r.source_doc + " not in donor batch");
        if (!used_targets.insert(r.target_doc).second) throw error("planner", "target doc used twice: " + r.target_doc);
        if (!used_sources.insert(r.source_doc).second) throw error("planner", "source doc used twice: " + r.source_doc);
        if (src->length() > L)
            throw error("planner", "source doc " + r.source_doc + " (" + std::to_string(src->length()) +
                                       " tokens) is longer than a sequence (" + std::to_string(L) + ")");
        work.push_back({i, t->second, src});
    }
    for (const auto& id : used_targets)
        if (used_sources.count(id)) throw error("planner", "doc " + id + " is both a target and a source");
    std::sort(work.begin(), work.end(), [&](const pending& a, const pending& b) {
        return docs[a.target_slot].token_start < docs[b.target_slot].token_start;
    });

    // Group swaps into windows of whole sequences.
    const std::size_t n = batch_t.token_count();
    struct window {
        std::size_t begin, end;
        std::vector<const pending*> swaps;
    };
    std::vector<window> windows;
    for (const auto& p : work) {
        const auto& d = docs[p.target_slot];
        const std::size_t wb = d.token_start / L * L;
        const std::size_t we = std::min(n, (d.token_end + L - 1) / L * L);
        if (!windows.empty() && wb < windows.back().end) {
            windows.back().end = std::max(windows.back().end, we);
        } else {
            windows.push_back({wb, we, {}});
        }
        windows.back().swaps.push_back(&p);
    }

    swap_report report;
    report.entries.resize(plan.replacements.size());
    std::vector<token_t> out(batch_t.tokens().begin(), batch_t.tokens().end());

    constexpr std::int64_t gap = -1, pad = -2;
    // Slots >= docs.size() are inserted sources, numbered by plan index.
    const auto source_slot = [&](std::size_t plan_index) { return static_cast<std::int64_t>(docs.size() + plan_index); };

    std::vector<bool> rewritten(docs.size(), false);
    std::vector<document> new_docs;

    for (const auto& w : windows) {
        // A doc running past the window end belongs to the next sequence as
        // well; it stays pinned and the sequence "end" moves to its start.
        std::size_t cap = w.end - w.begin;
        for (const auto& d : docs)
            if (d.token_start >= w.begin && d.token_start < w.end && d.token_end > w.end) cap = d.token_start - w.begin;
        const std::size_t edit_end = w.begin + cap;

        std::vector<token_t> toks(out.begin() + static_cast<std::ptrdiff_t>(w.begin),
                                  out.begin() + static_cast<std::ptrdiff_t>(edit_end));
        std::vector<std::int64_t> owner(cap, gap);
        std::vector<std::size_t> touched;
        for (std::size_t i = 0; i < docs.size(); ++i) {
            const auto& d = docs[i];
            if (d.token_end <= w.begin || d.token_start >= edit_end) continue;
            touched.push_back(i);
            for (std::size_t k = std::max(d.token_start, w.begin); k < std::min(d.token_end, edit_end); ++k)
                owner[k - w.begin] = static_cast<std::int64_t>(i);
        }

        for (const pending* p : w.swaps) {
            const auto& r = plan.replacements[p->plan_index];
            auto& e = report.entries[p->plan_index];
            e.target_doc = r.target_doc;
            e.source_doc = r.source_doc;
            e.target_length = docs[p->target_slot].length();
            e.source_length = p->source->length();
            e.exact_length = e.target_length == e.source_length;

            const auto slot = static_cast<std::int64_t>(p->target_slot);
            auto b = std::find(owner.begin(), owner.end(), slot);
            if (b == owner.end()) {
                e.applied = false;
                continue;
            }
            auto en = std::find_if(b, owner.end(), [&](std::int64_t o) { return o != slot; });
            const auto at = b - owner.begin();
            e.replaced_length = static_cast<std::size_t>(en - b);
            toks.erase(toks.begin() + at, toks.begin() + (en - owner.begin()));
            owner.erase(b, en);
            const auto src = batch_next.tokens_of(*p->source);
            toks.insert(toks.begin() + at, src.begin(), src.end());
            owner.insert(owner.begin() + at, src.size(), source_slot(p->plan_index));
            if (toks.size() > cap) {
                e.tokens_truncated = toks.size() - cap;
                toks.resize(cap);
                owner.resize(cap);
            } else if (toks.size() < cap) {
                e.tokens_padded = cap - toks.size();
                toks.resize(cap, opt.pad_token);
                owner.resize(cap, pad);
            }
        }
        std::copy(toks.begin(), toks.end(), out.begin() + static_cast<std::ptrdiff_t>(w.begin));

        // Re-derive spans for every doc that touched the editable region.
        std::map<std::int64_t, std::pair<std::size_t, std::size_t>> spans;
        for (std::size_t k = 0; k < cap; ++k) {
            if (owner[k] < 0) continue;
            auto [it, inserted] = spans.emplace(owner[k], std::make_pair(k, k + 1));
            if (!inserted) it->second.second = k + 1;
        }
        for (std::size_t i : touched) {
            rewritten[i] = true;
            if (!used_targets.count(docs[i].doc_id) && !spans.count(static_cast<std::int64_t>(i)))
                report.dropped_docs.push_back(docs[i].doc_id);
        }
        for (const auto& [o, span] : spans) {
            const std::size_t s = w.begin + span.first, en = w.begin + span.second;
            if (o < static_cast<std::int64_t>(docs.size())) {
                document d = docs[static_cast<std::size_t>(o)];
                // Only a doc entering from the previous sequence starts before the window.
                const std::size_t before = d.token_start < w.begin ? w.begin - d.token_start : 0;
                if (en - s < std::min(d.token_end, edit_end) - std::max(d.token_start, w.begin))
                    report.clipped_docs.push_back(d.doc_id);
                d.token_start = s - before;
                d.token_end = en;
                new_docs.push_back(std::move(d));
            } else {
                const std::size_t pi = static_cast<std::size_t>(o) - docs.size();
                const document* src = batch_next.find(plan.replacements[pi].source_doc);
                if (en - s < src->length()) report.clipped_docs.push_back(src->doc_id);
                new_docs.push_back({src->doc_id, batch_t.id(), s, en, src->text});
            }
        }
    }

    for (std::size_t i = 0; i < docs.size(); ++i)
        if (!rewritten[i]) new_docs.push_back(docs[i]);
    std::sort(new_docs.begin(), new_docs.end(),
              [](const document& a, const document& b) { return a.token_start < b.token_start; });

    for (const auto& e : report.entries) {
        report.exact_count += e.exact_length ? 1 : 0;
        report.tokens_truncated += e.tokens_truncated;
        report.tokens_padded += e.tokens_padded;
    }
    return {data_batch(batch_t.id(), std::move(out), std::move(new_docs)), std::move(report)};
}

inline double replacement_fraction(const intervention_plan& plan, const data_batch& batch_t) {
    if (batch_t.documents().empty()) throw error("planner", "replacement fraction of an empty batch");
    return static_cast<double>(plan.replacements.size()) / static_cast<double>(batch_t.documents().size());
}

// Plan files: a header record, then one record per replacement.

inline std::vector<json> plan_records(const intervention_plan& p, const std::string& config_hash = {}) {
    json header = {{"type", "plan"},
                   {"mode", to_string(p.mode)},
                   {"batch_id", p.batch},
                   {"donor_batch_id", p.donor_batch},
                   {"config", p.config}};
    if (!config_hash.empty()) header["config_hash"] = config_hash;
    std::vector<json> recs{header};
    for (const auto& r : p.replacements)
        recs.push_back({{"type", "replacement"},
                        {"target_doc_id", r.target_doc},
                        {"source_doc_id", r.source_doc},
                        {"reason", r.reason},
                        {"method", to_string(r.method)},
                        {"score", r.score}});
    return recs;
}

inline void write_plan(const std::filesystem::path& path, const intervention_plan& p, const std::string& config_hash = {}) {
    write_records(path, plan_records(p, config_hash));
}

inline intervention_plan read_plan(const std::filesystem::path& path) {
    intervention_plan p;
    bool have_header = false;
    for_each_record(path, "planner", [&](const json& r, std::size_t) {
        if (r.at("type") == "plan") {
            p.mode = parse_mode(r.at("mode").get<std::string>());
            p.batch = r.at("batch_id").get<batch_id_t>();
            p.donor_batch = r.at("donor_batch_id").get<batch_id_t>();
            p.config = r.value("config", json::object());
            have_header = true;
        } else {
            p.replacements.push_back({r.at("target_doc_id").get<std::string>(), r.at("source_doc_id").get<std::string>(),
                                      r.at("reason").get<std::vector<std::string>>(),
                                      parse_match_method(r.at("method").get<std::string>()), r.at("score").get<double>()});
        }
    });
    if (!have_header) throw error("planner", path.string() + ": missing plan header");
    return p;
}

inline std::vector<json> swap_report_records(const swap_report& rep, const std::string& config_hash = {}) {
    json totals = {{"type", "swap_totals"},
                   {"replacements", rep.entries.size()},
                   {"exact_length", rep.exact_count},
                   {"exact_rate", rep.exact_rate()},
                   {"tokens_truncated", rep.tokens_truncated},
                   {"tokens_padded", rep.tokens_padded},
                   {"dropped_docs", rep.dropped_docs},
                   {"clipped_docs", rep.clipped_docs},
                   {"donor_rule", "greedy closest-length, exact lengths first (reconstructed rule)"}};
    if (!config_hash.empty()) totals["config_hash"] = config_hash;
    std::vector<json> recs{totals};
    for (const auto& e : rep.entries)
        recs.push_back({{"type", "swap"},
                        {"target_doc_id", e.target_doc},
                        {"source_doc_id", e.source_doc},
                        {"target_length", e.target_length},
                        {"replaced_length", e.replaced_length},
                        {"source_length", e.source_length},
                        {"exact_length", e.exact_length},
                        {"tokens_truncated", e.tokens_truncated},
                        {"tokens_padded", e.tokens_padded},
                        {"applied", e.applied}});
    return recs;
}

}  // namespace interv
