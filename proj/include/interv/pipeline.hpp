#pragma once

// Declarative experiment config and the select -> match -> intervene ->
// evaluate pipeline that writes one artifact per stage.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "interv/bm25.hpp"
#include "interv/corpus.hpp"
#include "interv/evaluator.hpp"
#include "interv/io.hpp"
#include "interv/items.hpp"
#include "interv/matcher.hpp"
#include "interv/planner.hpp"
#include "interv/selector.hpp"
#include "interv/toylab.hpp"

namespace interv {

/// Process exit code for an error raised by `stage`.
inline int exit_code_for(std::string_view stage) {
    if (stage == "config" || stage == "validate") return 2;
    if (stage == "selector") return 3;
    if (stage == "matcher") return 4;
    if (stage == "planner") return 5;
    if (stage == "evaluator") return 6;
    if (stage == "corpus" || stage == "items" || stage == "io") return 7;
    if (stage == "toylab") return 8;
    return 1;
}

struct score_source {
    std::string condition;
    std::uint64_t seed = 0;
    std::string path;
};

struct experiment_config {
    std::filesystem::path base_dir = ".";  // relative paths resolve against this

    // data (ignored when `toy` is set: the toy lab generates it)
    std::string manifest, items, correctness;
    std::optional<json> toy;  // {"spec": {...}, "train": {...}}

    // selection
    std::string rule = "learned-at";
    std::string mode = "suppress";
    std::optional<step_t> step;  // unset: the step with the largest target group
    std::size_t forgotten_prior = 3;
    std::size_t min_matches = 1;
    std::string filter_method;  // method deciding min_matches; empty = matching method

    // matching
    std::string method = "cooccurrence";
    std::size_t k = 1000;
    std::optional<double> threshold;
    bool word_boundary = false;
    std::optional<std::size_t> max_gap;
    std::string dense_scores_t, dense_scores_next;

    // intervention
    std::optional<std::size_t> budget;
    std::size_t max_source_length = 0;

    // evaluation
    std::string norm = "none";
    std::vector<score_source> scores;

    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    unsigned threads = 1;
    std::string output = "out";

    std::filesystem::path resolve(const std::string& p) const {
        const std::filesystem::path q(p);
        return q.is_absolute() ? q : base_dir / q;
    }

    json to_json() const {
        auto opt = [](const auto& o) { return o ? json(*o) : json(nullptr); };
        json sc = json::array();
        for (const auto& s : scores) sc.push_back({{"condition", s.condition}, {"seed", s.seed}, {"path", s.path}});
        return {{"data", {{"manifest", manifest}, {"items", items}, {"correctness", correctness}}},
                {"toy", toy ? *toy : json(nullptr)},
                {"selection",
                 {{"rule", rule},
                  {"mode", mode},
                  {"step", opt(step)},
                  {"forgotten_prior", forgotten_prior},
                  {"min_matches", min_matches},
                  {"filter_method", filter_method}}},
                {"matching",
                 {{"method", method},
                  {"k", k},
                  {"threshold", opt(threshold)},
                  {"word_boundary", word_boundary},
                  {"max_gap", opt(max_gap)},
                  {"dense_scores_t", dense_scores_t},
                  {"dense_scores_next", dense_scores_next}}},
                {"intervention", {{"budget", opt(budget)}, {"max_source_length", max_source_length}}},
                {"evaluation", {{"norm", norm}, {"scores", sc}}},
                {"seeds", seeds},
                {"threads", threads},
                {"output", output}};
    }

    /// Identifies the experiment: everything except where outputs go and
    /// how many threads compute them.
    std::string hash() const {
        auto j = to_json();
        j.erase("output");
        j.erase("threads");
        return content_hash(j);
    }

    static experiment_config from_json(const json& j, std::filesystem::path base = ".") {
        experiment_config c;
        c.base_dir = std::move(base);
        try {
            auto section = [&](const char* name) { return j.contains(name) && !j[name].is_null() ? j[name] : json::object(); };
            auto str = [](const json& s, const char* key, std::string& field) {
                if (s.contains(key) && !s[key].is_null()) field = s[key].get<std::string>();
            };
            const auto data = section("data");
            str(data, "manifest", c.manifest);
            str(data, "items", c.items);
            str(data, "correctness", c.correctness);
            if (j.contains("toy") && !j["toy"].is_null()) c.toy = j["toy"];

            const auto sel = section("selection");
            str(sel, "rule", c.rule);
            str(sel, "mode", c.mode);
            if (sel.contains("step") && !sel["step"].is_null()) c.step = sel["step"].get<step_t>();
            c.forgotten_prior = sel.value("forgotten_prior", c.forgotten_prior);
            c.min_matches = sel.value("min_matches", c.min_matches);
            str(sel, "filter_method", c.filter_method);

            const auto m = section("matching");
            str(m, "method", c.method);
            c.k = m.value("k", c.k);
            if (m.contains("threshold") && !m["threshold"].is_null()) c.threshold = m["threshold"].get<double>();
            c.word_boundary = m.value("word_boundary", c.word_boundary);
            if (m.contains("max_gap") && !m["max_gap"].is_null()) c.max_gap = m["max_gap"].get<std::size_t>();
            str(m, "dense_scores_t", c.dense_scores_t);
            str(m, "dense_scores_next", c.dense_scores_next);

            const auto iv = section("intervention");
            if (iv.contains("budget") && !iv["budget"].is_null()) c.budget = iv["budget"].get<std::size_t>();
            c.max_source_length = iv.value("max_source_length", c.max_source_length);

            const auto ev = section("evaluation");
            str(ev, "norm", c.norm);
            if (ev.contains("scores"))
                for (const auto& s : ev["scores"])
                    c.scores.push_back({s.at("condition").get<std::string>(), s.value("seed", std::uint64_t{0}),
                                        s.at("path").get<std::string>()});

            if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
            c.threads = j.value("threads", c.threads);
            str(j, "output", c.output);
        } catch (const json::exception& e) {
            throw error("config", e.what());
        }
        return c;
    }

    /// Reads a config file; `overrides` (a JSON merge patch) wins over it.
    static experiment_config load(const std::filesystem::path& path, const json& overrides = json::object()) {
        json j;
        try {
            j = json::parse(read_file(path, "config"));
        } catch (const json::parse_error& e) {
            throw error("config", path.string() + " does not parse: " + e.what());
        }
        j.merge_patch(overrides);
        return from_json(j, path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
    }
};

struct finding {
    bool is_error = true;
    std::string field;
    std::string message;

    json to_json() const { return {{"severity", is_error ? "error" : "warning"}, {"field", field}, {"message", message}}; }
};

inline std::size_t error_count(const std::vector<finding>& fs) {
    return static_cast<std::size_t>(std::count_if(fs.begin(), fs.end(), [](const finding& f) { return f.is_error; }));
}

/// Every problem found in `c`, without running anything. The config is
/// runnable iff no finding is an error.
inline std::vector<finding> validate(const experiment_config& c) {
    namespace fs = std::filesystem;
    std::vector<finding> out;
    auto err = [&](std::string field, std::string msg) { out.push_back({true, std::move(field), std::move(msg)}); };
    auto warn = [&](std::string field, std::string msg) { out.push_back({false, std::move(field), std::move(msg)}); };
    auto check = [&](const std::string& field, auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            err(field, e.what());
        }
    };

    std::optional<match_method> method;
    check("matching.method", [&] { method = parse_match_method(c.method); });
    if (!c.filter_method.empty()) check("selection.filter_method", [&] { parse_match_method(c.filter_method); });
    check("selection.rule", [&] { rule_by_name(c.rule, c.forgotten_prior); });
    std::optional<intervention_mode> mode;
    check("selection.mode", [&] { mode = parse_mode(c.mode); });
    std::optional<normalization> norm;
    check("evaluation.norm", [&] { norm = parse_normalization(c.norm); });
    if (c.k < 1) err("matching.k", "k must be at least 1");
    if (c.seeds.empty()) err("seeds", "at least one seed is required");
    if (method && is_boolean(*method) && c.threshold) warn("matching.threshold", "ignored by boolean methods");

    std::optional<corpus_manifest> manifest;
    if (c.toy) {
        if (c.seeds.size() < 2) err("seeds", "toy experiments need at least 2 seeds");
        check("toy", [&] {
            validate(synthetic_spec::from_json(c.toy->value("spec", json::object())));
            toy_train_config::from_json(c.toy->value("train", json::object()));
        });
        if (method && *method == match_method::dense) err("matching.method", "dense scores are not available for toy corpora");
        if (!c.manifest.empty()) warn("data.manifest", "ignored: the toy section generates the corpus");
    } else {
        for (const auto& [field, p] : {std::pair<std::string, std::string>{"data.manifest", c.manifest},
                                       {"data.items", c.items},
                                       {"data.correctness", c.correctness}}) {
            if (p.empty())
                err(field, "missing");
            else if (!fs::exists(c.resolve(p)))
                err(field, "missing file " + c.resolve(p).string());
        }
        if (!c.manifest.empty() && fs::exists(c.resolve(c.manifest)))
            check("data.manifest", [&] { manifest = load_manifest(c.resolve(c.manifest)); });
    }

    if (manifest) {
        if (manifest->batches.size() < 2) err("data.manifest", "interventions need at least 2 batches");
        if (c.step) {
            if (!manifest->contains(*c.step))
                err("selection.step", "step " + std::to_string(*c.step) + " is not a batch id");
            else if (!manifest->successor(*c.step))
                err("selection.step", std::string(mode && *mode == intervention_mode::promote ? "promote" : "suppress") +
                                          " mode needs a successor batch after step " + std::to_string(*c.step));
        }
    }

    if (method && *method == match_method::dense) {
        for (const auto& [field, p] : {std::pair<std::string, std::string>{"matching.dense_scores_t", c.dense_scores_t},
                                       {"matching.dense_scores_next", c.dense_scores_next}})
            if (p.empty() || !fs::exists(c.resolve(p))) err(field, "dense matching needs a score file");
    }

    for (std::size_t i = 0; i < c.scores.size(); ++i) {
        const auto field = "evaluation.scores[" + std::to_string(i) + "]";
        const auto p = c.resolve(c.scores[i].path);
        if (!fs::exists(p)) {
            err(field, "missing file " + p.string());
            continue;
        }
        if (norm && *norm == normalization::pmi)
            check(field, [&] {
                for_each_record(p, "evaluator", [&](const json& r, std::size_t line) {
                    if (!r.contains("prior_logprob") || r["prior_logprob"].is_null())
                        throw error("evaluator", p.string() + ":" + std::to_string(line) + ": pmi normalization needs prior_logprob");
                });
            });
    }
    if (c.toy && !c.scores.empty()) warn("evaluation.scores", "ignored: toy runs score with the toy model");
    return out;
}

struct pipeline_result {
    std::string config_hash;
    std::map<std::string, std::filesystem::path> artifacts;
    target_selection selection;
    intervention_plan plan;
    swap_report swaps;
    std::vector<json> evaluation;
};

namespace detail {

template <class F>
auto in_stage(const char* stage, F&& fn) {
    try {
        return fn();
    } catch (const error& e) {
        if (e.stage() == stage) throw;
        throw error(stage, e.what());
    } catch (const std::exception& e) {
        throw error(stage, e.what());
    }
}

inline match_set match_batch(const experiment_config& c, match_method method, const data_batch& batch,
                             std::span<const eval_item> items, const std::string& dense_path) {
    switch (method) {
        case match_method::cooccurrence:
            return match_cooccurrence(batch, items, {{c.word_boundary}, c.max_gap});
        case match_method::occurrence:
            return match_occurrence(batch, items, {c.word_boundary});
        case match_method::bm25:
            return match_bm25(build_bm25(batch, {}, {}, c.threads), items, {c.k, c.threshold});
        case match_method::dense:
            return ingest_dense_scores(c.resolve(dense_path), items, {c.k, c.threshold});
    }
    throw error("matcher", "unknown method");
}

inline std::vector<json> summary_records(std::span<const run_result> target_runs, std::span<const run_result> control_runs) {
    std::vector<json> out;
    std::vector<std::string> conditions;
    for (const auto& r : target_runs)
        if (std::find(conditions.begin(), conditions.end(), r.condition) == conditions.end()) conditions.push_back(r.condition);
    for (std::size_t i = 0; i < target_runs.size(); ++i)
        out.push_back({{"type", "run"},
                       {"condition", target_runs[i].condition},
                       {"seed", target_runs[i].seed},
                       {"target_accuracy", target_runs[i].accuracy},
                       {"control_accuracy", control_runs[i].accuracy}});
    auto of = [](std::span<const run_result> runs, const std::string& cond) {
        std::vector<run_result> sel;
        for (const auto& r : runs)
            if (r.condition == cond) sel.push_back(r);
        return aggregate_runs(sel, cond);
    };
    const bool have_base = std::find(conditions.begin(), conditions.end(), "retrained") != conditions.end();
    for (const auto& cond : conditions) {
        const auto t = of(target_runs, cond), ctl = of(control_runs, cond);
        json s = {{"type", "summary"}, {"condition", cond}, {"runs", t.runs}, {"target_mean", t.mean},
                  {"target_std", t.std}, {"control_mean", ctl.mean}, {"control_std", ctl.std}};
        if (have_base) {
            s["target_delta"] = delta_accuracy(t, of(target_runs, "retrained"));
            s["control_delta"] = delta_accuracy(ctl, of(control_runs, "retrained"));
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace detail

/// Runs all stages and writes their artifacts under `out_dir`. Each file is
/// written atomically and records the config hash.
inline pipeline_result run_pipeline(const experiment_config& c, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    if (auto fs_ = validate(c); error_count(fs_) > 0) {
        std::string msg;
        for (const auto& f : fs_)
            if (f.is_error) msg += (msg.empty() ? "" : "; ") + f.field + ": " + f.message;
        throw error("config", msg);
    }
    pipeline_result res;
    res.config_hash = c.hash();
    const auto& hash = res.config_hash;
    fs::create_directories(out_dir);
    const auto method = parse_match_method(c.method);
    const auto mode = parse_mode(c.mode);
    const auto norm = parse_normalization(c.norm);

    // Data: either generated by the toy lab or read from disk.
    std::optional<toy_corpus> toy;
    std::optional<training_run> ref;
    fs::path manifest_path, items_path, correctness_path;
    if (c.toy) {
        detail::in_stage("toylab", [&] {
            toy = generate_corpus(synthetic_spec::from_json(c.toy->value("spec", json::object())));
            const auto tcfg = toy_train_config::from_json(c.toy->value("train", json::object()));
            ref = train(toy_model(toy->world, tcfg), toy->batches, toy->items, toy->spec.sequence_length, tcfg.seed);
            write_corpus(*toy, out_dir / "corpus");
            write_records(out_dir / "corpus" / "correctness.jsonl", ref->matrix.to_records());
            return 0;
        });
        manifest_path = out_dir / "corpus" / "manifest.json";
        items_path = out_dir / "corpus" / "items.jsonl";
        correctness_path = out_dir / "corpus" / "correctness.jsonl";
    } else {
        manifest_path = c.resolve(c.manifest);
        items_path = c.resolve(c.items);
        correctness_path = c.resolve(c.correctness);
    }
    const auto manifest = load_manifest(manifest_path);
    const auto items = load_items(items_path);
    const auto matrix = correctness_matrix::load(correctness_path);
    std::map<std::string, const eval_item*> item_by_id;
    for (const auto& it : items) item_by_id[it.item_id] = &it;

    // Stage 1: selection.
    batch_id_t t = 0, next = 0;
    res.selection = detail::in_stage("selector", [&] {
        const auto rule = rule_by_name(c.rule, c.forgotten_prior);
        if (c.step) {
            t = *c.step;
        } else {
            // Score each batch by the group size at the step the targets are read from.
            std::vector<step_t> cands;
            for (std::size_t i = 0; i + 1 < manifest.batches.size(); ++i) {
                const auto b = manifest.batches[i + (mode == intervention_mode::promote ? 1 : 0)].batch_id;
                if (matrix.step_index(b)) cands.push_back(b);
            }
            if (cands.empty()) throw error("selector", "no batch id is a checkpoint step");
            const step_t best = argmax_step(matrix, rule, cands);
            t = best;
            if (mode == intervention_mode::promote)
                for (std::size_t i = 1; i < manifest.batches.size(); ++i)
                    if (manifest.batches[i].batch_id == best) t = manifest.batches[i - 1].batch_id;
        }
        auto succ = manifest.successor(t);
        if (!succ) throw error("selector", "batch " + std::to_string(t) + " has no successor");
        next = *succ;
        auto sel = select_by_rule(matrix, mode == intervention_mode::promote ? next : t, rule);
        sel.step = t;
        return sel;
    });

    const data_batch batch_t = read_batch(manifest, t);
    const data_batch batch_next = read_batch(manifest, next);

    // Stage 2: matching, and the minimum-match filter on the target group.
    match_set m_t, m_next;
    detail::in_stage("matcher", [&] {
        std::vector<eval_item> cand;
        for (const auto& id : res.selection.targets) {
            auto it = item_by_id.find(id);
            if (it == item_by_id.end()) throw error("matcher", "target " + id + " is not in the item file");
            cand.push_back(*it->second);
        }
        m_t = detail::match_batch(c, method, batch_t, cand, c.dense_scores_t);
        m_next = detail::match_batch(c, method, batch_next, cand, c.dense_scores_next);
        if (c.min_matches > 0) {
            const auto fm = c.filter_method.empty() ? method : parse_match_method(c.filter_method);
            const auto& where = mode == intervention_mode::promote ? batch_next : batch_t;
            const auto& dense = mode == intervention_mode::promote ? c.dense_scores_next : c.dense_scores_t;
            const auto ms = fm == method ? (mode == intervention_mode::promote ? m_next : m_t)
                                         : detail::match_batch(c, fm, where, cand, dense);
            res.selection = filter_by_matches(res.selection, ms, c.min_matches);
        }
        if (res.selection.targets.empty()) throw error("selector", "no target items remain at step " + std::to_string(t));
        return 0;
    });
    {
        json sel = to_json(res.selection);
        sel["config_hash"] = hash;
        sel["mode"] = to_string(mode);
        write_records(out_dir / "selection.jsonl", {sel});
        res.artifacts["selection"] = out_dir / "selection.jsonl";
    }
    write_match_set(out_dir / "matches.jsonl", mode == intervention_mode::promote ? m_next : m_t, hash);
    write_match_set(out_dir / "matches_other.jsonl", mode == intervention_mode::promote ? m_t : m_next, hash);
    res.artifacts["matches"] = out_dir / "matches.jsonl";

    // Stage 3: plan and rewrite.
    data_batch rewritten;
    detail::in_stage("planner", [&] {
        plan_config pc;
        pc.per_item_k = c.k;
        pc.budget = c.budget;
        pc.max_source_length = c.max_source_length ? c.max_source_length : manifest.sequence_length;
        res.plan = mode == intervention_mode::suppress
                       ? plan_suppress(m_t, m_next, res.selection.targets, batch_t, batch_next, pc)
                       : plan_promote(m_next, m_t, res.selection.targets, batch_t, batch_next, pc);
        auto [b, rep] = apply_plan(res.plan, batch_t, batch_next, {manifest.sequence_length, manifest.pad_token});
        if (b.token_count() != batch_t.token_count()) throw error("planner", "token count not conserved");
        rewritten = std::move(b);
        res.swaps = std::move(rep);
        return 0;
    });
    write_plan(out_dir / "plan.jsonl", res.plan, hash);
    res.artifacts["plan"] = out_dir / "plan.jsonl";
    {
        corpus_manifest mi = manifest;
        mi.base_dir = out_dir / "intervened";
        for (auto& b : mi.batches) {
            if (b.batch_id == t) {
                b = write_batch(rewritten, mi.base_dir);
            } else {
                // Untouched batches stay where they are.
                const auto here = fs::absolute(mi.base_dir);
                auto rel = [&](const fs::path& p) { return fs::relative(fs::absolute(manifest.resolve(p)), here); };
                b.token_file = rel(b.token_file);
                b.doc_index = rel(b.doc_index);
                b.text_sidecar = rel(b.text_sidecar);
            }
        }
        auto mj = manifest_to_json(mi);
        mj["config_hash"] = hash;
        mj["rewritten_batch_id"] = t;
        write_file_atomic(mi.base_dir / "manifest.json", mj.dump(2) + "\n");
        res.artifacts["batch"] = mi.base_dir;
    }
    write_records(out_dir / "swap_report.jsonl", swap_report_records(res.swaps, hash));
    res.artifacts["swap_report"] = out_dir / "swap_report.jsonl";

    // Stage 4: evaluation.
    res.evaluation = detail::in_stage("evaluator", [&] {
        json head = {{"type", "evaluation"},
                     {"config_hash", hash},
                     {"mode", to_string(mode)},
                     {"method", to_string(method)},
                     {"step", t},
                     {"targets", res.selection.targets.size()},
                     {"controls", res.selection.controls.size()},
                     {"replacements", res.plan.replacements.size()},
                     {"replacement_fraction", replacement_fraction(res.plan, batch_t)},
                     {"exact_rate", res.swaps.exact_rate()},
                     {"tokens_conserved", rewritten.token_count() == batch_t.token_count()},
                     {"norm", to_string(norm)},
                     {"char_norm_unit", "unicode scalar values"}};
        std::vector<json> recs{head};
        if (toy) {
            experiment_report rep;
            rep.mode = mode;
            rep.method = method;
            rep.step = t;
            rep.selection = res.selection;
            compare_retraining(*toy, *ref, rewritten, c.seeds, c.threads, rep);
            recs.push_back({{"type", "chance_band"},
                            {"p", 0.25},
                            {"n", rep.selection.targets.size() * c.seeds.size()},
                            {"lo", rep.chance_band.first},
                            {"hi", rep.chance_band.second}});
            auto more = detail::summary_records(rep.target_runs, rep.control_runs);
            recs.insert(recs.end(), more.begin(), more.end());
        } else if (!c.scores.empty()) {
            std::vector<run_result> tr, cr;
            std::vector<eval_item> scored;
            for (const auto& id : matrix.items())
                if (auto it = item_by_id.find(id); it != item_by_id.end()) scored.push_back(*it->second);
            for (const auto& s : c.scores) {
                const auto correct = grade(scored, score_file(c.resolve(s.path)), norm);
                tr.push_back(make_run(s.condition, s.seed, correct, res.selection.targets));
                cr.push_back(res.selection.controls.empty() ? run_result{s.condition, s.seed, correct, 0.0}
                                                            : make_run(s.condition, s.seed, correct, res.selection.controls));
            }
            auto more = detail::summary_records(tr, cr);
            recs.insert(recs.end(), more.begin(), more.end());
        }
        return recs;
    });
    write_records(out_dir / "evaluation.jsonl", res.evaluation);
    res.artifacts["evaluation"] = out_dir / "evaluation.jsonl";

    json cfg = c.to_json();
    cfg["config_hash"] = hash;
    write_file_atomic(out_dir / "config.json", cfg.dump(2) + "\n");
    return res;
}

}  // namespace interv
