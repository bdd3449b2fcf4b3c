#pragma once

// Item selection over checkpoint trajectories: when each item was learned,
// which items form the target group at a step, and which step to pick.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "interv/io.hpp"
#include "interv/matcher.hpp"

namespace interv {

using step_t = std::int64_t;

/// Item x checkpoint boolean outcomes. Steps are strictly increasing.
class correctness_matrix {
public:
    correctness_matrix() = default;

    correctness_matrix(std::vector<std::string> item_ids, std::vector<step_t> steps, std::vector<std::uint8_t> outcomes)
        : items_(std::move(item_ids)), steps_(std::move(steps)), outcomes_(std::move(outcomes)) {
        if (outcomes_.size() != items_.size() * steps_.size())
            throw error("selector", "correctness matrix is not rectangular");
        for (std::size_t i = 1; i < steps_.size(); ++i)
            if (steps_[i] <= steps_[i - 1]) throw error("selector", "checkpoint steps must be strictly increasing");
    }

    /// Builds from {item_id, step, correct} records. Every item must have an
    /// outcome at every step exactly once.
    static correctness_matrix from_records(std::span<const json> records) {
        std::vector<std::string> items;
        std::unordered_map<std::string, std::size_t> item_index;
        std::set<step_t> step_set;
        for (const auto& r : records) {
            auto id = r.at("item_id").get<std::string>();
            if (item_index.emplace(id, items.size()).second) items.push_back(id);
            step_set.insert(r.at("step").get<step_t>());
        }
        std::vector<step_t> steps(step_set.begin(), step_set.end());
        std::map<step_t, std::size_t> step_index;
        for (std::size_t i = 0; i < steps.size(); ++i) step_index[steps[i]] = i;

        std::vector<std::int8_t> cells(items.size() * steps.size(), -1);
        for (const auto& r : records) {
            const auto id = r.at("item_id").get<std::string>();
            const auto s = r.at("step").get<step_t>();
            auto& cell = cells[item_index[id] * steps.size() + step_index[s]];
            if (cell != -1)
                throw error("selector", "duplicate outcome for item " + id + " at step " + std::to_string(s));
            cell = r.at("correct").get<bool>() ? 1 : 0;
        }
        for (std::size_t i = 0; i < items.size(); ++i)
            for (std::size_t j = 0; j < steps.size(); ++j)
                if (cells[i * steps.size() + j] == -1)
                    throw error("selector", "item " + items[i] + " has no outcome at step " + std::to_string(steps[j]));
        return {std::move(items), std::move(steps), std::vector<std::uint8_t>(cells.begin(), cells.end())};
    }

    static correctness_matrix load(const std::filesystem::path& path) {
        auto recs = read_records(path, "selector");
        if (recs.empty()) throw error("selector", path.string() + ": empty correctness file");
        return from_records(recs);
    }

    std::vector<json> to_records() const {
        std::vector<json> out;
        for (std::size_t i = 0; i < items_.size(); ++i)
            for (std::size_t j = 0; j < steps_.size(); ++j)
                out.push_back({{"item_id", items_[i]}, {"step", steps_[j]}, {"correct", at(i, j)}});
        return out;
    }

    std::size_t item_count() const { return items_.size(); }
    std::size_t step_count() const { return steps_.size(); }
    bool empty() const { return items_.empty() || steps_.empty(); }
    const std::vector<std::string>& items() const { return items_; }
    const std::vector<step_t>& steps() const { return steps_; }
    bool at(std::size_t item, std::size_t step) const { return outcomes_[item * steps_.size() + step] != 0; }

    std::optional<std::size_t> step_index(step_t s) const {
        auto it = std::lower_bound(steps_.begin(), steps_.end(), s);
        if (it == steps_.end() || *it != s) return std::nullopt;
        return static_cast<std::size_t>(it - steps_.begin());
    }

    friend bool operator==(const correctness_matrix&, const correctness_matrix&) = default;

private:
    std::vector<std::string> items_;
    std::vector<step_t> steps_;
    std::vector<std::uint8_t> outcomes_;
};

/// Index of the step at which the item is first correct and stays correct
/// through the last evaluated step.
inline std::optional<std::size_t> learned_index(const correctness_matrix& m, std::size_t item) {
    std::size_t i = m.step_count();
    while (i > 0 && m.at(item, i - 1)) --i;
    if (i == m.step_count()) return std::nullopt;
    return i;
}

inline std::map<std::string, std::optional<step_t>> learned_at(const correctness_matrix& m) {
    if (m.empty()) throw error("selector", "empty correctness matrix");
    std::map<std::string, std::optional<step_t>> out;
    for (std::size_t i = 0; i < m.item_count(); ++i) {
        auto idx = learned_index(m, i);
        out[m.items()[i]] = idx ? std::optional<step_t>(m.steps()[*idx]) : std::nullopt;
    }
    return out;
}

/// A named item-selection rule: does the item show the behaviour at a step?
struct selection_rule {
    std::string name;
    std::function<bool(const correctness_matrix&, std::size_t item, std::size_t step)> exhibits;
};

inline selection_rule learned_at_rule() {
    return {"learned-at", [](const correctness_matrix& m, std::size_t item, std::size_t step) {
                return learned_index(m, item) == step;
            }};
}

/// Correct for the `prior` steps immediately before, incorrect at the step.
inline selection_rule forgotten_at_rule(std::size_t prior = 3) {
    return {"forgotten-at", [prior](const correctness_matrix& m, std::size_t item, std::size_t step) {
                if (prior == 0 || step < prior || m.at(item, step)) return false;
                for (std::size_t k = step - prior; k < step; ++k)
                    if (!m.at(item, k)) return false;
                return true;
            }};
}

inline selection_rule rule_by_name(const std::string& name, std::size_t forgotten_prior = 3) {
    if (name == "learned-at") return learned_at_rule();
    if (name == "forgotten-at") return forgotten_at_rule(forgotten_prior);
    throw error("selector", "unknown selection rule '" + name + "'");
}

enum class intervention_mode { suppress, promote };

inline std::string to_string(intervention_mode m) { return m == intervention_mode::suppress ? "suppress" : "promote"; }

inline intervention_mode parse_mode(std::string_view s) {
    if (s == "suppress") return intervention_mode::suppress;
    if (s == "promote") return intervention_mode::promote;
    throw error("selector", "unknown intervention mode '" + std::string(s) + "'");
}

struct target_selection {
    step_t step = 0;
    std::vector<std::string> targets;   // in matrix item order
    std::vector<std::string> controls;  // the complement
    std::string rule;

    friend bool operator==(const target_selection&, const target_selection&) = default;
};

/// Size of the target subset at every step under `rule`.
inline std::vector<std::size_t> target_sizes(const correctness_matrix& m, const selection_rule& rule) {
    std::vector<std::size_t> sizes(m.step_count(), 0);
    for (std::size_t i = 0; i < m.item_count(); ++i)
        for (std::size_t s = 0; s < m.step_count(); ++s)
            if (rule.exhibits(m, i, s)) ++sizes[s];
    return sizes;
}

/// The step with the largest target subset among `candidates` (all steps
/// when empty); ties go to the earliest step.
inline step_t argmax_step(const correctness_matrix& m, const selection_rule& rule,
                          std::span<const step_t> candidates = {}) {
    if (m.empty()) throw error("selector", "empty correctness matrix");
    const auto sizes = target_sizes(m, rule);
    std::optional<std::size_t> best;
    for (std::size_t s = 0; s < sizes.size(); ++s) {
        if (!candidates.empty() && std::find(candidates.begin(), candidates.end(), m.steps()[s]) == candidates.end())
            continue;
        if (!best || sizes[s] > sizes[*best]) best = s;
    }
    if (!best || sizes[*best] == 0) throw error("selector", "no step exhibits behavior under rule " + rule.name);
    return m.steps()[*best];
}

/// Targets are items exhibiting `rule` at `step`; controls are the rest.
inline target_selection select_by_rule(const correctness_matrix& m, step_t step, const selection_rule& rule) {
    auto idx = m.step_index(step);
    if (!idx) throw error("selector", "step " + std::to_string(step) + " is not a checkpoint step");
    target_selection sel;
    sel.step = step;
    sel.rule = rule.name;
    for (std::size_t i = 0; i < m.item_count(); ++i)
        (rule.exhibits(m, i, *idx) ? sel.targets : sel.controls).push_back(m.items()[i]);
    return sel;
}

/// Suppress targets items learned at `t`; promote targets items learned at
/// the checkpoint after `t`.
inline target_selection select_targets(const correctness_matrix& m, step_t t, intervention_mode mode) {
    auto idx = m.step_index(t);
    if (!idx) throw error("selector", "step " + std::to_string(t) + " is not a checkpoint step");
    std::size_t want = *idx;
    if (mode == intervention_mode::promote) {
        if (want + 1 >= m.step_count())
            throw error("selector", "step " + std::to_string(t) + " has no successor checkpoint");
        ++want;
    }
    target_selection sel;
    sel.step = t;
    sel.rule = "learned-at";
    for (std::size_t i = 0; i < m.item_count(); ++i)
        (learned_index(m, i) == want ? sel.targets : sel.controls).push_back(m.items()[i]);
    return sel;
}

/// Keeps targets with at least `min_matches` matched documents; the rest
/// move to the control group.
inline target_selection filter_by_matches(const target_selection& sel, const match_set& ms, std::size_t min_matches) {
    if (min_matches == 0) return sel;
    target_selection out = sel;
    out.targets.clear();
    for (const auto& id : sel.targets)
        (ms.count(id) >= min_matches ? out.targets : out.controls).push_back(id);
    return out;
}

inline json to_json(const target_selection& s) {
    return {{"type", "selection"}, {"step", s.step}, {"rule", s.rule}, {"targets", s.targets}, {"controls", s.controls}};
}

inline target_selection selection_from_json(const json& j) {
    return {j.at("step").get<step_t>(), j.at("targets").get<std::vector<std::string>>(),
            j.at("controls").get<std::vector<std::string>>(), j.at("rule").get<std::string>()};
}

inline target_selection read_selection(const std::filesystem::path& path) {
    auto recs = read_records(path, "selector");
    for (const auto& r : recs)
        if (r.value("type", "") == "selection") return selection_from_json(r);
    throw error("selector", path.string() + ": no selection record");
}

}  // namespace interv
