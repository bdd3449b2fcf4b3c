#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace interv;

namespace {

const std::vector<step_t> steps4 = {1, 2, 3, 4};

correctness_matrix single(const oracle::trajectory& t) { return oracle::build_matrix({t}, steps4); }

}  // namespace

TEST(LearnedAt, Definition) {
    EXPECT_EQ(learned_at(single({false, true, true, true})).at("item0"), std::optional<step_t>(2));
    EXPECT_EQ(learned_at(single({false, true, false, true})).at("item0"), std::optional<step_t>(4));
    EXPECT_EQ(learned_at(single({true, true, true, false})).at("item0"), std::nullopt);
    EXPECT_EQ(learned_at(single({true, true, true, true})).at("item0"), std::optional<step_t>(1));
}

TEST(LearnedAt, SuffixScanOracle) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 30; ++trial) {
        const auto rows = oracle::random_rows(rng, 200, 20);
        std::vector<step_t> steps;
        for (step_t s = 0; s < 20; ++s) steps.push_back(s * 10 + 5);
        const auto m = oracle::build_matrix(rows, steps);
        const auto got = learned_at(m);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto want = oracle::learned_index(rows[i]);
            const auto g = got.at("item" + std::to_string(i));
            ASSERT_EQ(g.has_value(), want.has_value());
            if (want) {
                EXPECT_EQ(*g, steps[*want]);
                // Property: true from here on, and no earlier step has that property.
                for (std::size_t k = *want; k < rows[i].size(); ++k) EXPECT_TRUE(rows[i][k]);
                if (*want > 0) EXPECT_FALSE(rows[i][*want - 1]);
            }
        }
    }
}

TEST(SelectTargets, ModesAndPartition) {
    // item0 learned at 2, item1 learned at 3.
    const auto m = oracle::build_matrix({{false, true, true, true}, {false, false, true, true}}, steps4);
    const auto s = select_targets(m, 2, intervention_mode::suppress);
    EXPECT_EQ(s.targets, std::vector<std::string>{"item0"});
    EXPECT_EQ(s.controls, std::vector<std::string>{"item1"});
    const auto p = select_targets(m, 2, intervention_mode::promote);
    EXPECT_EQ(p.targets, std::vector<std::string>{"item1"});
    EXPECT_EQ(p.controls, std::vector<std::string>{"item0"});
    EXPECT_THROW(select_targets(m, 7, intervention_mode::suppress), error);
    EXPECT_THROW(select_targets(m, 4, intervention_mode::promote), error);
}

TEST(SelectTargets, PartitionOracle) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const auto rows = oracle::random_rows(rng, 40, 6);
        const std::vector<step_t> steps = {0, 1, 2, 3, 4, 5};
        const auto m = oracle::build_matrix(rows, steps);
        for (step_t t = 0; t < 5; ++t)
            for (auto mode : {intervention_mode::suppress, intervention_mode::promote}) {
                const auto s = select_targets(m, t, mode);
                std::set<std::string> tg(s.targets.begin(), s.targets.end()), ct(s.controls.begin(), s.controls.end());
                EXPECT_EQ(tg.size() + ct.size(), rows.size());
                for (const auto& id : tg) EXPECT_FALSE(ct.count(id));
                const std::size_t want_idx = static_cast<std::size_t>(t) + (mode == intervention_mode::promote ? 1 : 0);
                for (std::size_t i = 0; i < rows.size(); ++i)
                    EXPECT_EQ(tg.count("item" + std::to_string(i)) == 1, oracle::learned_index(rows[i]) == want_idx);
            }
    }
}

TEST(ArgmaxStep, EarliestTie) {
    // Target sizes [3,7,7,2] over steps 1..4.
    std::vector<oracle::trajectory> rows;
    const std::vector<std::size_t> sizes = {3, 7, 7, 2};
    for (std::size_t s = 0; s < 4; ++s)
        for (std::size_t k = 0; k < sizes[s]; ++k) {
            oracle::trajectory t(4, false);
            for (std::size_t j = s; j < 4; ++j) t[j] = true;
            rows.push_back(t);
        }
    const auto m = oracle::build_matrix(rows, steps4);
    EXPECT_EQ(target_sizes(m, learned_at_rule()), sizes);
    EXPECT_EQ(argmax_step(m, learned_at_rule()), 2);
}

TEST(ArgmaxStep, SingleStepAndEmpty) {
    const auto m = oracle::build_matrix({{true}, {false}}, {9});
    EXPECT_EQ(argmax_step(m, learned_at_rule()), 9);
    const auto none = oracle::build_matrix({{false, false}}, {1, 2});
    EXPECT_THROW(argmax_step(none, learned_at_rule()), error);
}

TEST(ArgmaxStep, ExhaustiveOracle) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const auto rows = oracle::random_rows(rng, 30, 8);
        const std::vector<step_t> steps = {0, 1, 2, 3, 4, 5, 6, 7};
        const auto m = oracle::build_matrix(rows, steps);
        std::vector<std::size_t> count(8, 0);
        for (const auto& r : rows)
            if (auto l = oracle::learned_index(r)) ++count[*l];
        const auto best = std::max_element(count.begin(), count.end());
        if (*best == 0) continue;
        EXPECT_EQ(argmax_step(m, learned_at_rule()), static_cast<step_t>(best - count.begin()));
    }
}

TEST(ForgottenAt, RequiresPriorRun) {
    const auto m = oracle::build_matrix({{true, true, true, false}, {false, true, true, false}}, steps4);
    const auto s = select_by_rule(m, 4, forgotten_at_rule(3));
    EXPECT_EQ(s.targets, std::vector<std::string>{"item0"});
    EXPECT_EQ(select_by_rule(m, 4, forgotten_at_rule(2)).targets.size(), 2u);
    EXPECT_EQ(rule_by_name("forgotten-at", 3).name, "forgotten-at");
    EXPECT_THROW(rule_by_name("entropy"), error);
}

TEST(FilterByMatches, MovesUnmatchedToControl) {
    target_selection sel{1, {"a", "b"}, {"c"}, "learned-at"};
    match_set ms;
    ms.entries["a"] = {{"d1", 1.0}, {"d2", 1.0}};
    ms.entries["b"] = {};
    const auto f = filter_by_matches(sel, ms, 1);
    EXPECT_EQ(f.targets, std::vector<std::string>{"a"});
    EXPECT_EQ(f.controls, (std::vector<std::string>{"c", "b"}));
    EXPECT_EQ(filter_by_matches(sel, ms, 0), sel);
    EXPECT_EQ(filter_by_matches(sel, ms, 2).targets, std::vector<std::string>{"a"});
    EXPECT_TRUE(filter_by_matches(sel, ms, 3).targets.empty());
}

TEST(CorrectnessMatrix, RecordsRoundTripAndRejectGaps) {
    const auto m = oracle::build_matrix({{false, true}, {true, true}}, {5, 9});
    const auto recs = m.to_records();
    EXPECT_EQ(recs.size(), 4u);
    const auto back = correctness_matrix::from_records(recs);
    EXPECT_EQ(back.items(), m.items());
    EXPECT_EQ(back.steps(), m.steps());
    auto gap = recs;
    gap.pop_back();
    EXPECT_THROW(correctness_matrix::from_records(gap), error);
    auto dup = recs;
    dup.push_back(recs.front());
    EXPECT_THROW(correctness_matrix::from_records(dup), error);
}

TEST(SelectionFile, RoundTrip) {
    const auto dir = oracle::scratch_dir("selection");
    const target_selection s{3, {"a"}, {"b", "c"}, "learned-at"};
    write_records(dir / "s.jsonl", {to_json(s)});
    EXPECT_EQ(read_selection(dir / "s.jsonl"), s);
}
