// Command-line entry point: one subcommand per pipeline stage, plus the toy
// lab, reporting helpers and the full pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "interv/interv.hpp"

namespace fs = std::filesystem;
using namespace interv;

namespace {

struct common_flags {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool json_out = false;
};

void add_common(CLI::App* sub, common_flags& c) {
    sub->add_option("--config", c.config, "Experiment config file (flags override it)");
    sub->add_option("--out", c.out, "Output file or directory");
    sub->add_option("--seed", c.seed, "Base seed");
    sub->add_flag("--json", c.json_out, "Machine-readable output on stdout");
}

/// Config file (if any) with `patch` applied on top.
experiment_config resolve_config(const common_flags& c, json patch) {
    if (c.seed) {
        // Seeds keep their count and start at --seed.
        json base = c.config.empty() ? json::object() : json::parse(read_file(c.config, "config"));
        std::size_t n = base.contains("seeds") ? base["seeds"].size() : 5;
        if (patch.contains("seeds")) n = patch["seeds"].size();
        std::vector<std::uint64_t> seeds;
        for (std::size_t i = 0; i < n; ++i) seeds.push_back(*c.seed + i);
        patch["seeds"] = seeds;
    }
    if (c.config.empty()) return experiment_config::from_json(patch, ".");
    return experiment_config::load(c.config, patch);
}

template <class T>
void set_if(json& patch, std::initializer_list<const char*> path, const std::optional<T>& v) {
    if (!v) return;
    json* cur = &patch;
    auto it = path.begin();
    for (std::size_t i = 0; i + 1 < path.size(); ++i, ++it) cur = &(*cur)[*it];
    (*cur)[*it] = *v;
}

void emit(const common_flags& c, const json& j, const std::string& human) {
    if (c.json_out)
        std::cout << j.dump() << "\n";
    else
        std::cout << human;
}

std::vector<eval_item> subset(const std::vector<eval_item>& items, const std::vector<std::string>& ids) {
    std::map<std::string, const eval_item*> by;
    for (const auto& it : items) by[it.item_id] = &it;
    std::vector<eval_item> out;
    for (const auto& id : ids) {
        auto it = by.find(id);
        if (it == by.end()) throw error("items", "item " + id + " is not in the item file");
        out.push_back(*it->second);
    }
    return out;
}

/// One item id per line, or jsonl records with an item_id field.
std::vector<std::string> read_id_list(const std::string& path) {
    std::vector<std::string> out;
    std::istringstream in(read_file(path, "io"));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '{')
            out.push_back(json::parse(line).at("item_id").get<std::string>());
        else
            out.push_back(line);
    }
    return out;
}

match_set compute_matches(const experiment_config& cfg, const data_batch& batch, std::span<const eval_item> items,
                          match_method method, const std::string& index_file, const std::string& dense) {
    switch (method) {
        case match_method::cooccurrence: return match_cooccurrence(batch, items, {{cfg.word_boundary}, cfg.max_gap});
        case match_method::occurrence: return match_occurrence(batch, items, {cfg.word_boundary});
        case match_method::bm25: {
            const auto idx = index_file.empty() ? build_bm25(batch, {}, {}, cfg.threads) : bm25_index::load(index_file);
            return match_bm25(idx, items, {cfg.k, cfg.threshold});
        }
        case match_method::dense:
            if (dense.empty()) throw error("matcher", "dense matching needs --dense <score file>");
            return ingest_dense_scores(dense, items, {cfg.k, cfg.threshold});
    }
    throw error("matcher", "unknown method");
}

/// {"spec": ..., "train": ...} or a bare synthetic spec.
std::pair<synthetic_spec, toy_train_config> load_toy_spec(const std::string& path) {
    if (path.empty()) return {synthetic_spec{}, toy_train_config{}};
    const auto j = json::parse(read_file(path, "toylab"));
    if (j.contains("spec") || j.contains("train"))
        return {synthetic_spec::from_json(j.value("spec", json::object())),
                toy_train_config::from_json(j.value("train", json::object()))};
    return {synthetic_spec::from_json(j), toy_train_config{}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Training-data interventions: select, match, intervene, evaluate"};
    app.require_subcommand(1);

    // index
    common_flags idx_c;
    std::optional<std::string> idx_manifest;
    batch_id_t idx_batch = 0;
    auto* idx = app.add_subcommand("index", "Build a BM25 index over one batch");
    add_common(idx, idx_c);
    idx->add_option("--manifest", idx_manifest);
    idx->add_option("--batch", idx_batch)->required();

    // match
    common_flags m_c;
    std::optional<std::string> m_manifest, m_items, m_method;
    std::optional<std::size_t> m_k, m_max_gap;
    std::optional<double> m_threshold;
    std::optional<bool> m_wb;
    batch_id_t m_batch = 0;
    std::string m_index, m_dense, m_selection;
    auto* match = app.add_subcommand("match", "Find documents related to evaluation items");
    add_common(match, m_c);
    match->add_option("--manifest", m_manifest);
    match->add_option("--items", m_items);
    match->add_option("--batch", m_batch)->required();
    match->add_option("--method", m_method, "cooc|occ|bm25|dense");
    match->add_option("--k", m_k, "Top-k per item (scored methods)");
    match->add_option("--threshold", m_threshold, "Score threshold (scored methods)");
    match->add_option("--word-boundary", m_wb);
    match->add_option("--max-gap", m_max_gap);
    match->add_option("--index", m_index, "Prebuilt BM25 index");
    match->add_option("--dense", m_dense, "Dense score file");
    match->add_option("--selection", m_selection, "Only match this selection's targets");

    // select
    common_flags s_c;
    std::optional<std::string> s_corr, s_rule, s_mode;
    std::optional<step_t> s_step;
    std::optional<std::size_t> s_prior, s_min;
    std::string s_matches;
    auto* sel = app.add_subcommand("select", "Select target items at a checkpoint step");
    add_common(sel, s_c);
    sel->add_option("--correctness", s_corr);
    sel->add_option("--rule", s_rule, "learned-at|forgotten-at");
    sel->add_option("--mode", s_mode, "suppress|promote");
    sel->add_option("--step", s_step);
    sel->add_option("--forgotten-prior", s_prior);
    sel->add_option("--matches", s_matches, "Match set used by --min-matches");
    sel->add_option("--min-matches", s_min);

    // intervene
    common_flags i_c;
    std::optional<std::string> i_manifest, i_items, i_mode;
    std::optional<std::size_t> i_k, i_budget, i_maxlen;
    std::string i_selection, i_match, i_match_other, i_out_batch, i_report, i_plan;
    auto* inter = app.add_subcommand("intervene", "Plan and apply document swaps");
    add_common(inter, i_c);
    inter->add_option("--manifest", i_manifest);
    inter->add_option("--items", i_items, "Needed to match the other batch when --match-other is absent");
    inter->add_option("--mode", i_mode, "suppress|promote");
    inter->add_option("--selection", i_selection)->required();
    inter->add_option("--match", i_match, "Matches on the batch the matched docs come from")->required();
    inter->add_option("--match-other", i_match_other, "Matches on the other batch");
    inter->add_option("--k", i_k);
    inter->add_option("--budget", i_budget);
    inter->add_option("--max-source-length", i_maxlen);
    inter->add_option("--out-batch", i_out_batch)->required();
    inter->add_option("--report", i_report);
    inter->add_option("--plan", i_plan);

    // evaluate
    common_flags e_c;
    std::optional<std::string> e_items, e_norm;
    std::vector<std::string> e_scores;
    std::string e_targets, e_controls, e_selection, e_baseline;
    auto* eval = app.add_subcommand("evaluate", "Score multiple-choice items and aggregate runs");
    add_common(eval, e_c);
    eval->add_option("--items", e_items);
    eval->add_option("--scores", e_scores, "[condition=]score file; repeatable, one per run")->required();
    eval->add_option("--norm", e_norm, "none|char|pmi");
    eval->add_option("--targets", e_targets);
    eval->add_option("--controls", e_controls);
    eval->add_option("--selection", e_selection);
    eval->add_option("--baseline-train", e_baseline, "Training items for the majority baseline");

    // audit
    auto* audit = app.add_subcommand("audit", "Relevance-audit export and agreement");
    audit->require_subcommand(1);
    common_flags ax_c;
    std::optional<std::string> ax_manifest, ax_items;
    batch_id_t ax_batch = 0;
    std::string ax_match, ax_prompt = "correct answer";
    std::size_t ax_top = 20;
    auto* ax = audit->add_subcommand("export", "Write audit prompts for matched documents");
    add_common(ax, ax_c);
    ax->add_option("--manifest", ax_manifest);
    ax->add_option("--items", ax_items);
    ax->add_option("--batch", ax_batch)->required();
    ax->add_option("--match", ax_match)->required();
    ax->add_option("--top-n", ax_top);
    ax->add_option("--prompt", ax_prompt, "correct answer|educated guess|related topic");
    common_flags ak_c;
    std::string ak_a, ak_b;
    auto* ak = audit->add_subcommand("kappa", "Cohen's kappa between two annotation files");
    add_common(ak, ak_c);
    ak->add_option("--a", ak_a)->required();
    ak->add_option("--b", ak_b)->required();

    // toy-gen
    common_flags tg_c;
    std::string tg_spec;
    bool tg_train = false;
    auto* tgen = app.add_subcommand("toy-gen", "Generate a synthetic corpus (and optionally train on it)");
    add_common(tgen, tg_c);
    tgen->add_option("--spec", tg_spec);
    tgen->add_flag("--train", tg_train, "Also train; write correctness.jsonl and scores.jsonl");

    // toy-run
    common_flags tr_c;
    std::string tr_spec, tr_mode = "suppress", tr_method = "cooc";
    std::size_t tr_seeds = 5, tr_k = 5;
    unsigned tr_threads = 1;
    auto* trun = app.add_subcommand("toy-run", "Run a suppress/promote experiment on a synthetic corpus");
    add_common(trun, tr_c);
    trun->add_option("--spec", tr_spec);
    trun->add_option("--mode", tr_mode);
    trun->add_option("--method", tr_method, "cooc|occ|bm25");
    trun->add_option("--seeds", tr_seeds, "Number of retraining seeds");
    trun->add_option("--k", tr_k, "Top-k for bm25");
    trun->add_option("--threads", tr_threads);

    // report
    auto* report = app.add_subcommand("report", "Reports");
    report->require_subcommand(1);
    common_flags rp_c;
    std::string rp_in, rp_format = "csv";
    auto* plot = report->add_subcommand("plot", "Plot data from an experiment report");
    add_common(plot, rp_c);
    plot->add_option("--in", rp_in)->required();
    plot->add_option("--format", rp_format)->check(CLI::IsMember({"csv"}));

    // run
    common_flags r_c;
    std::optional<std::string> r_mode, r_method;
    std::optional<step_t> r_step;
    std::optional<std::size_t> r_k;
    std::optional<unsigned> r_threads;
    auto* run = app.add_subcommand("run", "Run the whole pipeline from a config");
    add_common(run, r_c);
    run->add_option("--mode", r_mode);
    run->add_option("--method", r_method);
    run->add_option("--step", r_step);
    run->add_option("--k", r_k);
    run->add_option("--threads", r_threads);

    // validate
    common_flags v_c;
    auto* val = app.add_subcommand("validate", "Check a config without running it");
    add_common(val, v_c);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*idx) {
            json p;
            set_if(p, {"data", "manifest"}, idx_manifest);
            const auto cfg = resolve_config(idx_c, p);
            if (idx_c.out.empty()) throw error("config", "index needs --out");
            const auto m = load_manifest(cfg.resolve(cfg.manifest));
            const auto index = build_bm25(read_batch(m, idx_batch), {}, {}, cfg.threads);
            index.save(idx_c.out);
            emit(idx_c, {{"docs", index.doc_count()}, {"terms", index.postings().size()}, {"out", idx_c.out}},
                 "indexed " + std::to_string(index.doc_count()) + " docs, " + std::to_string(index.postings().size()) +
                     " terms -> " + idx_c.out + "\n");
        } else if (*match) {
            json p;
            set_if(p, {"data", "manifest"}, m_manifest);
            set_if(p, {"data", "items"}, m_items);
            set_if(p, {"matching", "method"}, m_method);
            set_if(p, {"matching", "k"}, m_k);
            set_if(p, {"matching", "threshold"}, m_threshold);
            set_if(p, {"matching", "word_boundary"}, m_wb);
            set_if(p, {"matching", "max_gap"}, m_max_gap);
            const auto cfg = resolve_config(m_c, p);
            if (m_c.out.empty()) throw error("config", "match needs --out");
            const auto method = parse_match_method(cfg.method);
            const auto m = load_manifest(cfg.resolve(cfg.manifest));
            auto items = load_items(cfg.resolve(cfg.items));
            if (!m_selection.empty()) items = subset(items, read_selection(m_selection).targets);
            const auto ms = compute_matches(cfg, read_batch(m, m_batch), items, method, m_index, m_dense);
            write_match_set(m_c.out, ms, cfg.hash());
            std::size_t pairs = 0;
            for (const auto& [_, d] : ms.entries) pairs += d.size();
            emit(m_c, {{"method", to_string(method)}, {"items", ms.entries.size()}, {"pairs", pairs}, {"skipped", ms.skipped}},
                 to_string(method) + ": " + std::to_string(pairs) + " matches over " + std::to_string(ms.entries.size()) +
                     " items (" + std::to_string(ms.skipped.size()) + " skipped)\n");
        } else if (*sel) {
            json p;
            set_if(p, {"data", "correctness"}, s_corr);
            set_if(p, {"selection", "rule"}, s_rule);
            set_if(p, {"selection", "mode"}, s_mode);
            set_if(p, {"selection", "step"}, s_step);
            set_if(p, {"selection", "forgotten_prior"}, s_prior);
            set_if(p, {"selection", "min_matches"}, s_min);
            const auto cfg = resolve_config(s_c, p);
            const auto matrix = correctness_matrix::load(cfg.resolve(cfg.correctness));
            const auto rule = rule_by_name(cfg.rule, cfg.forgotten_prior);
            const auto mode = parse_mode(cfg.mode);
            const auto& steps = matrix.steps();
            auto result = interv::detail::in_stage("selector", [&] {
                step_t t;
                if (cfg.step) {
                    t = *cfg.step;
                } else {
                    // Suppress needs a donor batch after t; promote reads targets at t's successor.
                    std::vector<step_t> cands(steps.begin() + 1, steps.end());
                    if (mode == intervention_mode::suppress) cands.assign(steps.begin(), steps.end() - 1);
                    const auto best = argmax_step(matrix, rule, cands);
                    t = mode == intervention_mode::promote ? steps[*matrix.step_index(best) - 1] : best;
                }
                auto ti = matrix.step_index(t);
                if (!ti) throw error("selector", "step " + std::to_string(t) + " is not a checkpoint step");
                if (mode == intervention_mode::promote && *ti + 1 >= steps.size())
                    throw error("selector", "step " + std::to_string(t) + " has no successor checkpoint");
                auto r = select_by_rule(matrix, mode == intervention_mode::promote ? steps[*ti + 1] : t, rule);
                r.step = t;
                return r;
            });
            if (!s_matches.empty() && cfg.min_matches > 0)
                result = filter_by_matches(result, read_match_set(s_matches), cfg.min_matches);
            json rec = to_json(result);
            rec["mode"] = to_string(mode);
            rec["config_hash"] = cfg.hash();
            if (!s_c.out.empty()) write_records(s_c.out, {rec});
            emit(s_c, rec,
                 "step " + std::to_string(result.step) + ": " + std::to_string(result.targets.size()) + " targets, " +
                     std::to_string(result.controls.size()) + " controls (" + result.rule + ")\n");
        } else if (*inter) {
            json p;
            set_if(p, {"data", "manifest"}, i_manifest);
            set_if(p, {"data", "items"}, i_items);
            set_if(p, {"selection", "mode"}, i_mode);
            set_if(p, {"matching", "k"}, i_k);
            set_if(p, {"intervention", "budget"}, i_budget);
            set_if(p, {"intervention", "max_source_length"}, i_maxlen);
            const auto cfg = resolve_config(i_c, p);
            const auto mode = parse_mode(cfg.mode);
            const auto m = load_manifest(cfg.resolve(cfg.manifest));
            const auto selection = read_selection(i_selection);
            const auto t = selection.step;
            const auto next = m.successor(t);
            if (!next) throw error("planner", "batch " + std::to_string(t) + " has no successor batch");
            const auto batch_t = read_batch(m, t);
            const auto batch_next = read_batch(m, *next);
            const auto primary = read_match_set(i_match);
            match_set other;
            if (!i_match_other.empty()) {
                other = read_match_set(i_match_other);
            } else {
                if (primary.method == match_method::dense)
                    throw error("planner", "dense matching needs --match-other");
                const auto items = subset(load_items(cfg.resolve(cfg.items)), selection.targets);
                auto c2 = cfg;
                c2.k = primary.cutoff.top_k.value_or(cfg.k);
                c2.threshold = primary.cutoff.threshold;
                other = compute_matches(c2, mode == intervention_mode::suppress ? batch_next : batch_t, items,
                                        primary.method, "", "");
            }
            plan_config pc;
            pc.per_item_k = cfg.k;
            pc.budget = cfg.budget;
            pc.max_source_length = cfg.max_source_length ? cfg.max_source_length : m.sequence_length;
            const auto plan = mode == intervention_mode::suppress
                                  ? plan_suppress(primary, other, selection.targets, batch_t, batch_next, pc)
                                  : plan_promote(primary, other, selection.targets, batch_t, batch_next, pc);
            auto [rewritten, rep] = apply_plan(plan, batch_t, batch_next, {m.sequence_length, m.pad_token});
            const auto hash = cfg.hash();
            corpus_manifest mi = m;
            mi.base_dir = i_out_batch;
            for (auto& b : mi.batches) {
                if (b.batch_id == t) {
                    b = write_batch(rewritten, i_out_batch);
                } else {
                    const auto here = fs::absolute(i_out_batch);
                    b.token_file = fs::relative(fs::absolute(m.resolve(b.token_file)), here);
                    b.doc_index = fs::relative(fs::absolute(m.resolve(b.doc_index)), here);
                    b.text_sidecar = fs::relative(fs::absolute(m.resolve(b.text_sidecar)), here);
                }
            }
            auto mj = manifest_to_json(mi);
            mj["config_hash"] = hash;
            mj["rewritten_batch_id"] = t;
            write_file_atomic(fs::path(i_out_batch) / "manifest.json", mj.dump(2) + "\n");
            write_plan(i_plan.empty() ? fs::path(i_out_batch) / "plan.jsonl" : fs::path(i_plan), plan, hash);
            const auto recs = swap_report_records(rep, hash);
            if (!i_report.empty()) write_records(i_report, recs);
            emit(i_c, recs.front(),
                 to_string(mode) + ": " + std::to_string(plan.replacements.size()) + " swaps (" +
                     std::to_string(rep.exact_count) + " exact-length), " + std::to_string(rep.tokens_truncated) +
                     " tokens truncated, " + std::to_string(rep.tokens_padded) + " padded\n");
        } else if (*eval) {
            json p;
            set_if(p, {"data", "items"}, e_items);
            set_if(p, {"evaluation", "norm"}, e_norm);
            const auto cfg = resolve_config(e_c, p);
            const auto norm = parse_normalization(cfg.norm);
            const auto items = load_items(cfg.resolve(cfg.items));
            std::vector<std::string> targets, controls;
            if (!e_selection.empty()) {
                const auto s = read_selection(e_selection);
                targets = s.targets;
                controls = s.controls;
            }
            if (!e_targets.empty()) targets = read_id_list(e_targets);
            if (!e_controls.empty()) controls = read_id_list(e_controls);
            if (targets.empty() && controls.empty())
                for (const auto& it : items) targets.push_back(it.item_id);
            std::vector<run_result> tr, cr;
            std::vector<json> recs;
            for (std::size_t i = 0; i < e_scores.size(); ++i) {
                std::string cond = "run", path = e_scores[i];
                if (auto eq = path.find('='); eq != std::string::npos) {
                    cond = path.substr(0, eq);
                    path = path.substr(eq + 1);
                }
                const score_file sf(path);
                std::vector<eval_item> scored;
                for (const auto& it : items)
                    if (sf.has(it.item_id)) scored.push_back(it);
                const auto correct = grade(scored, sf, norm);
                const std::uint64_t seed = i;
                tr.push_back(targets.empty() ? run_result{cond, seed, correct, 0.0} : make_run(cond, seed, correct, targets));
                cr.push_back(controls.empty() ? run_result{cond, seed, correct, 0.0} : make_run(cond, seed, correct, controls));
            }
            json head = {{"type", "evaluation"}, {"norm", to_string(norm)}, {"targets", targets.size()},
                         {"controls", controls.size()}, {"config_hash", cfg.hash()}};
            recs.push_back(head);
            auto more = interv::detail::summary_records(tr, cr);
            recs.insert(recs.end(), more.begin(), more.end());
            if (!e_baseline.empty()) {
                const majority_baseline mb(load_items(e_baseline));
                const auto pick = subset(items, targets);
                recs.push_back({{"type", "majority_baseline"}, {"target_accuracy", mb.accuracy(pick)}});
            }
            if (!e_c.out.empty()) write_records(e_c.out, recs);
            std::string human;
            for (const auto& r : recs)
                if (r["type"] == "summary") {
                    char buf[256];
                    std::snprintf(buf, sizeof buf, "%-24s target %.4f +/- %.4f  control %.4f +/- %.4f\n",
                                  r["condition"].get<std::string>().c_str(), r["target_mean"].get<double>(),
                                  r["target_std"].get<double>(), r["control_mean"].get<double>(),
                                  r["control_std"].get<double>());
                    human += buf;
                } else if (r["type"] == "majority_baseline") {
                    human += "majority baseline: " + std::to_string(r["target_accuracy"].get<double>()) + "\n";
                }
            emit(e_c, recs, human);
        } else if (*ax) {
            json p;
            set_if(p, {"data", "manifest"}, ax_manifest);
            set_if(p, {"data", "items"}, ax_items);
            const auto cfg = resolve_config(ax_c, p);
            if (ax_c.out.empty()) throw error("config", "audit export needs --out");
            const auto m = load_manifest(cfg.resolve(cfg.manifest));
            const auto batch = read_batch(m, ax_batch);
            const auto items = load_items(cfg.resolve(cfg.items));
            const auto ms = read_match_set(ax_match);
            const auto exp = export_audit(
                items, ms,
                [&](const std::string& id) -> const std::string* {
                    const auto* d = batch.find(id);
                    return d ? &d->text : nullptr;
                },
                ax_top, parse_audit_prompt(ax_prompt), ax_c.seed.value_or(0));
            for (const auto& w : exp.warnings) std::cerr << "warning: " << w << "\n";
            write_records(ax_c.out, exp.records);
            emit(ax_c, {{"records", exp.records.size()}, {"warnings", exp.warnings}},
                 std::to_string(exp.records.size()) + " audit prompts -> " + ax_c.out + "\n");
        } else if (*ak) {
            const auto a = load_annotations(ak_a), b = load_annotations(ak_b);
            const double k = cohens_kappa(a, b);
            char buf[64];
            std::snprintf(buf, sizeof buf, "kappa %.6f\n", k);
            emit(ak_c, {{"kappa", k}, {"n", a.size()}}, buf);
        } else if (*tgen) {
            auto [spec, tcfg] = load_toy_spec(tg_spec);
            if (tg_c.seed) spec.seed = *tg_c.seed;
            if (tg_c.out.empty()) throw error("config", "toy-gen needs --out");
            const auto c = generate_corpus(spec);
            write_corpus(c, tg_c.out);
            if (tg_train) {
                const auto ref = train(toy_model(c.world, tcfg), c.batches, c.items, spec.sequence_length, tcfg.seed);
                write_records(fs::path(tg_c.out) / "correctness.jsonl", ref.matrix.to_records());
                // Choice scores of the final model, in the format `evaluate` reads.
                const toy_scorer sc(ref.checkpoints.back());
                std::vector<json> scores;
                for (const auto& it : c.items)
                    for (const auto& cs : sc.score(it)) scores.push_back(to_json(cs));
                write_records(fs::path(tg_c.out) / "scores.jsonl", scores);
            }
            std::size_t tokens = 0;
            for (const auto& b : c.batches) tokens += b.token_count();
            emit(tg_c, {{"batches", c.batches.size()}, {"items", c.items.size()}, {"tokens", tokens}},
                 std::to_string(c.batches.size()) + " batches, " + std::to_string(tokens) + " tokens, " +
                     std::to_string(c.items.size()) + " items -> " + tg_c.out + "\n");
        } else if (*trun) {
            auto [spec, tcfg] = load_toy_spec(tr_spec);
            experiment_options opt;
            opt.mode = parse_mode(tr_mode);
            opt.method = parse_match_method(tr_method);
            opt.per_item_k = tr_k;
            opt.threads = tr_threads;
            opt.seeds.clear();
            const std::uint64_t first = tr_c.seed.value_or(1);
            for (std::size_t i = 0; i < tr_seeds; ++i) opt.seeds.push_back(first + i);
            const auto c = generate_corpus(spec);
            const auto ref = train(toy_model(c.world, tcfg), c.batches, c.items, spec.sequence_length, tcfg.seed);
            const auto rep = run_experiment(c, ref, opt);
            const auto hash = content_hash({{"spec", spec.to_json()}, {"train", tcfg.to_json()},
                                            {"mode", tr_mode}, {"method", to_string(opt.method)},
                                            {"seeds", opt.seeds}, {"k", tr_k}});
            const auto recs = rep.records(hash);
            if (!tr_c.out.empty()) write_records(tr_c.out, recs);
            std::string human = rep.condition() + " at step " + std::to_string(rep.step) + ": " +
                                std::to_string(rep.selection.targets.size()) + " targets, " +
                                std::to_string(rep.plan.replacements.size()) + " swaps\n";
            for (const auto& s : rep.summaries) {
                char buf[256];
                std::snprintf(buf, sizeof buf, "  %-24s target %.3f +/- %.3f (delta %+.3f)  control %.3f (delta %+.3f)\n",
                              s.condition.c_str(), s.target.mean, s.target.std, s.target_delta, s.control.mean,
                              s.control_delta);
                human += buf;
            }
            emit(tr_c, recs, human);
        } else if (*plot) {
            std::ostringstream csv;
            csv << "condition,seed,target_accuracy,control_accuracy\n";
            for (const auto& r : read_records(rp_in, "io"))
                if (r.value("type", "") == "run")
                    csv << r["condition"].get<std::string>() << "," << r["seed"].get<std::uint64_t>() << ","
                        << r["target_accuracy"].get<double>() << "," << r["control_accuracy"].get<double>() << "\n";
            if (rp_c.out.empty())
                std::cout << csv.str();
            else
                write_file_atomic(rp_c.out, csv.str());
        } else if (*run) {
            if (r_c.config.empty()) throw error("config", "run needs --config");
            json p;
            set_if(p, {"selection", "mode"}, r_mode);
            set_if(p, {"matching", "method"}, r_method);
            set_if(p, {"selection", "step"}, r_step);
            set_if(p, {"matching", "k"}, r_k);
            set_if(p, {"threads"}, r_threads);
            if (!r_c.out.empty()) p["output"] = r_c.out;
            const auto cfg = resolve_config(r_c, p);
            const auto out_dir = r_c.out.empty() ? cfg.resolve(cfg.output) : fs::path(r_c.out);
            const auto res = run_pipeline(cfg, out_dir);
            json arts = json::object();
            for (const auto& [k, v] : res.artifacts) arts[k] = v.generic_string();
            std::string human = "config " + res.config_hash + "\n";
            for (const auto& [k, v] : res.artifacts) human += "  " + k + ": " + v.generic_string() + "\n";
            emit(r_c, {{"config_hash", res.config_hash}, {"artifacts", arts}}, human);
        } else if (*val) {
            if (v_c.config.empty()) throw error("config", "validate needs --config");
            const auto cfg = resolve_config(v_c, json::object());
            const auto findings = validate(cfg);
            json arr = json::array();
            std::string human;
            for (const auto& f : findings) {
                arr.push_back(f.to_json());
                human += std::string(f.is_error ? "error" : "warning") + ": " + f.field + ": " + f.message + "\n";
            }
            if (findings.empty()) human = "ok\n";
            emit(v_c, {{"findings", arr}, {"errors", error_count(findings)}}, human);
            return error_count(findings) ? exit_code_for("validate") : 0;
        }
    } catch (const error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.stage());
    } catch (const json::exception& e) {
        std::cerr << "error: io: " << e.what() << "\n";
        return exit_code_for("io");
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
