#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace interv;

namespace {

data_batch one_doc(const std::string& text, const std::string& id = "d0") {
    return oracle::make_batch(1, {{id, text, oracle::word_tokens(text)}});
}

eval_item entity_item(const std::string& id, const std::string& s, const std::string& o) {
    return {id, s + " ?", {o, "none"}, 0, s, o, "r", std::nullopt};
}

std::vector<std::pair<std::size_t, std::string>> hit_list(const std::vector<term_hit>& hits) {
    std::vector<std::pair<std::size_t, std::string>> out;
    for (const auto& h : hits) out.push_back({h.char_start, h.term});
    return out;
}

}  // namespace

TEST(AhoCorasick, ReportsOverlappingAndNestedPatterns) {
    const std::vector<std::string> pats = {"he", "she", "his", "hers"};
    const aho_corasick ac(pats);
    std::vector<std::tuple<std::uint32_t, std::size_t, std::size_t>> got;
    ac.scan("ushers", [&](std::uint32_t p, std::size_t s, std::size_t e) { got.emplace_back(p, s, e); });
    std::sort(got.begin(), got.end());
    const std::vector<std::tuple<std::uint32_t, std::size_t, std::size_t>> want = {{0, 2, 4}, {1, 1, 4}, {3, 2, 6}};
    EXPECT_EQ(got, want);
}

TEST(AhoCorasick, AgreesWithNaiveScan) {
    std::mt19937_64 rng(3);
    const auto& pool = oracle::entity_pool();
    for (int trial = 0; trial < 50; ++trial) {
        const auto text = oracle::random_text(rng, 40);
        const aho_corasick ac(pool);
        std::set<std::tuple<std::size_t, std::size_t, std::size_t>> got, want;
        ac.scan(text, [&](std::uint32_t p, std::size_t s, std::size_t e) { got.insert({p, s, e}); });
        for (std::size_t p = 0; p < pool.size(); ++p)
            for (const auto& h : oracle::naive_hits(text, pool[p], false)) want.insert({p, h.start, h.end});
        EXPECT_EQ(got, want);
    }
}

TEST(FindOccurrences, PositionsInSentence) {
    const auto b = one_doc("The capital city of France is Paris");
    const std::vector<std::string> terms = {"Paris", "France"};
    const auto hits = find_occurrences(b, terms);
    ASSERT_EQ(hits.size(), 2u);
    EXPECT_EQ(hits[0].term, "France");
    EXPECT_EQ(hits[0].char_start, 20u);
    EXPECT_EQ(hits[0].char_end, 26u);
    EXPECT_EQ(hits[1].term, "Paris");
    EXPECT_EQ(hits[1].char_start, 30u);
    EXPECT_EQ(hits[1].char_end, 35u);
}

TEST(FindOccurrences, RepeatedTerm) {
    const auto b = one_doc("Microsoft Windows is a product of Microsoft");
    const std::vector<std::string> terms = {"Microsoft"};
    const auto hits = find_occurrences(b, terms);
    ASSERT_EQ(hits.size(), 2u);
    EXPECT_EQ(hits[0].char_start, 0u);
    EXPECT_EQ(hits[1].char_start, 34u);
}

TEST(FindOccurrences, HitTextEqualsTerm) {
    std::mt19937_64 rng(11);
    const auto b = oracle::random_text_batch(rng, 1, 200);
    const auto& pool = oracle::entity_pool();
    const auto hits = find_occurrences(b, pool);
    std::size_t want = 0;
    for (const auto& d : b.documents())
        for (const auto& t : pool) want += oracle::naive_hits(d.text, t, false).size();
    EXPECT_EQ(hits.size(), want);
    for (const auto& h : hits) {
        const auto* d = b.find(h.doc_id);
        ASSERT_NE(d, nullptr);
        EXPECT_EQ(h.char_end - h.char_start, h.term.size());
        EXPECT_EQ(d->text.substr(h.char_start, h.term.size()), h.term);
    }
}

TEST(FindOccurrences, EmptyTermRejected) {
    const auto b = one_doc("text");
    const std::vector<std::string> terms = {""};
    EXPECT_THROW(find_occurrences(b, terms), error);
}

TEST(Cooccurrence, TableExampleMatches) {
    const auto b = one_doc("Picasa is a product of Google");
    const std::vector<eval_item> items = {entity_item("q", "Picasa", "Google")};
    const auto ms = match_cooccurrence(b, items);
    EXPECT_EQ(ms.count("q"), 1u);
    EXPECT_EQ(ms.entries.at("q")[0].score, 1.0);
}

TEST(Cooccurrence, OverlappingWindowsDoNotMatch) {
    const auto b = one_doc("Microsoft Windows launched");
    const std::vector<eval_item> items = {entity_item("q", "Microsoft Windows", "Microsoft")};
    EXPECT_EQ(match_cooccurrence(b, items).count("q"), 0u);
    // A second, separate mention is a disjoint pair.
    const auto b2 = one_doc("Microsoft Windows is a product of Microsoft");
    EXPECT_EQ(match_cooccurrence(b2, items).count("q"), 1u);
}

TEST(Cooccurrence, MissingEntityIsSkipped) {
    const auto b = one_doc("anything");
    eval_item it = entity_item("q", "A", "B");
    it.object.reset();
    const std::vector<eval_item> items = {it};
    const auto ms = match_cooccurrence(b, items);
    EXPECT_EQ(ms.skipped, std::vector<std::string>{"q"});
    EXPECT_FALSE(ms.covers("q"));
}

TEST(Cooccurrence, WordBoundaryAndGap) {
    const auto b = one_doc("Parisian near France, Paris x x x x x x x x x x x x x x x x x x x x France");
    const std::vector<eval_item> items = {entity_item("q", "Paris", "France")};
    EXPECT_EQ(match_cooccurrence(b, items, {{true}, std::size_t{5}}).count("q"), 1u);
    EXPECT_EQ(match_cooccurrence(b, items, {{true}, std::size_t{1}}).count("q"), 0u);
    EXPECT_EQ(match_cooccurrence(b, items, {{false}, std::size_t{7}}).count("q"), 1u);
}

TEST(Cooccurrence, EqualsPairwiseOracle) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const auto b = oracle::random_text_batch(rng, 1, 120);
        const auto items = oracle::random_items(rng, 40);
        for (bool wb : {false, true})
            for (std::optional<std::size_t> gap : {std::optional<std::size_t>{}, std::optional<std::size_t>{12}}) {
                const auto ms = match_cooccurrence(b, items, {{wb}, gap});
                EXPECT_EQ(oracle::doc_lists(ms), oracle::cooccurrence(b, items, wb, gap));
            }
    }
}

TEST(Occurrence, DefinitionCases) {
    const std::vector<eval_item> items = {entity_item("q", "France", "Paris")};
    EXPECT_EQ(match_occurrence(one_doc("only France here"), items).count("q"), 1u);
    EXPECT_EQ(match_occurrence(one_doc("nothing relevant"), items).count("q"), 0u);
}

TEST(Occurrence, EqualsOracleAndDominatesCooccurrence) {
    std::mt19937_64 rng(22);
    for (int trial = 0; trial < 10; ++trial) {
        const auto b = oracle::random_text_batch(rng, 1, 120);
        const auto items = oracle::random_items(rng, 40);
        const auto occ = match_occurrence(b, items);
        EXPECT_EQ(oracle::doc_lists(occ), oracle::occurrence(b, items));
        const auto co = match_cooccurrence(b, items);
        for (const auto& [id, docs] : co.entries)
            for (const auto& d : docs) {
                const auto& od = occ.entries.at(id);
                EXPECT_TRUE(std::any_of(od.begin(), od.end(), [&](const doc_score& x) { return x.doc_id == d.doc_id; }));
            }
    }
}

TEST(FMatch, Disjunction) {
    match_set ms;
    ms.entries["A"] = {{"d1", 1.0}};
    ms.entries["B"] = {{"d2", 1.0}};
    EXPECT_EQ(f_match(ms, {"A", "B"}), (std::set<std::string>{"d1", "d2"}));
    EXPECT_TRUE(f_match(ms, {}).empty());
}

TEST(FMatch, OracleAndMonotonicity) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        match_set ms;
        std::set<std::string> all;
        for (int i = 0; i < 15; ++i) {
            const auto id = "i" + std::to_string(i);
            all.insert(id);
            auto& docs = ms.entries[id];
            const auto n = std::uniform_int_distribution<int>(0, 6)(rng);
            std::set<std::string> seen;
            for (int k = 0; k < n; ++k) {
                auto d = "d" + std::to_string(std::uniform_int_distribution<int>(0, 30)(rng));
                if (seen.insert(d).second) docs.push_back({d, 1.0});
            }
        }
        std::set<std::string> small, big;
        for (const auto& id : all) {
            const int r = std::uniform_int_distribution<int>(0, 2)(rng);
            if (r == 0) small.insert(id);
            if (r <= 1) big.insert(id);
        }
        EXPECT_EQ(f_match(ms, small), oracle::f_match(ms, small));
        const auto fs = f_match(ms, small), fb = f_match(ms, big);
        EXPECT_TRUE(std::includes(fb.begin(), fb.end(), fs.begin(), fs.end()));
    }
}

TEST(MatchSetFile, RoundTrip) {
    const auto dir = oracle::scratch_dir("matchset");
    match_set ms;
    ms.method = match_method::bm25;
    ms.cutoff = {std::size_t{3}, 0.5};
    ms.entries["a"] = {{"d1", 2.5}, {"d2", 1.25}};
    ms.entries["b"] = {};
    ms.skipped = {"c"};
    write_match_set(dir / "m.jsonl", ms, "abc");
    EXPECT_EQ(read_match_set(dir / "m.jsonl"), ms);
}

TEST(Dense, IngestsAndValidates) {
    const auto dir = oracle::scratch_dir("dense");
    const std::vector<eval_item> items = {entity_item("q1", "A", "B"), entity_item("q2", "C", "D")};
    oracle::write_text(dir / "ok.jsonl", R"({"item_id":"q1","doc_id":"d1","score":0.9}
{"item_id":"q1","doc_id":"d2","score":0.4}
)");
    const auto ms = ingest_dense_scores(dir / "ok.jsonl", items);
    EXPECT_EQ(ms.method, match_method::dense);
    EXPECT_EQ(ms.count("q1"), 2u);
    EXPECT_EQ(ms.entries.at("q1")[0].doc_id, "d1");

    oracle::write_text(dir / "unknown.jsonl", R"({"item_id":"zz","doc_id":"d1","score":0.9})");
    try {
        ingest_dense_scores(dir / "unknown.jsonl", items);
        FAIL();
    } catch (const error& e) {
        EXPECT_NE(std::string(e.what()).find("zz"), std::string::npos);
    }
    oracle::write_text(dir / "dup.jsonl", R"({"item_id":"q1","doc_id":"d1","score":0.9}
{"item_id":"q1","doc_id":"d1","score":0.3})");
    try {
        ingest_dense_scores(dir / "dup.jsonl", items);
        FAIL();
    } catch (const error& e) {
        EXPECT_NE(std::string(e.what()).find("duplicate score"), std::string::npos);
    }
    oracle::write_text(dir / "bad.jsonl", "{\"item_id\":\"q1\",\"doc_id\":\"d1\",\"score\":1}\nnot json\n");
    try {
        ingest_dense_scores(dir / "bad.jsonl", items);
        FAIL();
    } catch (const error& e) {
        EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
    }
}

TEST(Dense, CutoffKeepsBestScores) {
    const auto dir = oracle::scratch_dir("dense_cut");
    const std::vector<eval_item> items = {entity_item("q1", "A", "B")};
    oracle::write_text(dir / "s.jsonl", R"({"item_id":"q1","doc_id":"d1","score":0.1}
{"item_id":"q1","doc_id":"d2","score":0.7}
{"item_id":"q1","doc_id":"d3","score":0.5}
)");
    auto ms = ingest_dense_scores(dir / "s.jsonl", items, {std::size_t{2}, std::nullopt});
    ASSERT_EQ(ms.count("q1"), 2u);
    EXPECT_EQ(ms.entries.at("q1")[0].doc_id, "d2");
    EXPECT_EQ(ms.entries.at("q1")[1].doc_id, "d3");
    ms = ingest_dense_scores(dir / "s.jsonl", items, {std::nullopt, 0.4});
    EXPECT_EQ(ms.count("q1"), 2u);
}

TEST(Bm25, SmallCorpusStatistics) {
    const auto b = oracle::make_batch(1, {{"a", "one two", {1}}, {"b", "three", {1}}, {"c", "four five six", {1}}});
    const auto idx = build_bm25(b);
    EXPECT_EQ(idx.doc_count(), 3u);
    EXPECT_DOUBLE_EQ(idx.average_length(), 2.0);
    EXPECT_EQ(idx, build_bm25(b));
}

TEST(Bm25, EmptyCorpusRejected) {
    EXPECT_THROW(build_bm25(data_batch(1, {}, {})), error);
}

TEST(Bm25, AbsentTermAndSelfQuery) {
    const auto b = oracle::make_batch(1, {{"a", "alpha beta gamma", {1}}});
    const auto idx = build_bm25(b);
    EXPECT_TRUE(score_bm25(idx, "zeta", 5).empty());
    EXPECT_TRUE(score_bm25(idx, "   ", 5).empty());
    const auto b2 = oracle::make_batch(1, {{"a", "alpha beta gamma", {1}}, {"b", "delta", {1}}, {"c", "alpha", {1}}});
    const auto r = score_bm25(build_bm25(b2), "alpha beta gamma", 3);
    ASSERT_FALSE(r.empty());
    EXPECT_EQ(r[0].doc_id, "a");
    EXPECT_THROW(score_bm25(idx, "alpha", 0), error);
}

TEST(Bm25, FormulaOracle) {
    std::mt19937_64 rng(99);
    const auto b = oracle::random_text_batch(rng, 1, 60);
    std::vector<std::string> texts;
    for (const auto& d : b.documents()) texts.push_back(d.text);
    const auto idx = build_bm25(b);
    for (int q = 0; q < 20; ++q) {
        const auto query = oracle::random_text(rng, 5);
        const auto scores = idx.score_all(query);
        for (std::size_t i = 0; i < texts.size(); ++i) EXPECT_NEAR(scores[i], oracle::bm25(texts, i, query), 1e-9);
    }
}

TEST(Bm25, TiesByDocIdAndThreadsAgree) {
    const auto b = oracle::make_batch(1, {{"c", "same words", {1}}, {"a", "same words", {1}}, {"b", "same words", {1}}});
    const auto r = score_bm25(build_bm25(b), "same", 3);
    ASSERT_EQ(r.size(), 3u);
    EXPECT_EQ(r[0].doc_id, "a");
    EXPECT_EQ(r[1].doc_id, "b");
    EXPECT_EQ(r[2].doc_id, "c");
    std::mt19937_64 rng(1);
    const auto big = oracle::random_text_batch(rng, 1, 300);
    EXPECT_EQ(build_bm25(big, {}, {}, 1), build_bm25(big, {}, {}, 4));
}

TEST(Bm25, SaveLoadRoundTrip) {
    const auto dir = oracle::scratch_dir("bm25_io");
    std::mt19937_64 rng(2);
    const auto idx = build_bm25(oracle::random_text_batch(rng, 1, 50));
    idx.save(dir / "i.json");
    EXPECT_EQ(bm25_index::load(dir / "i.json"), idx);
}

TEST(Bm25, MatchUsesQuestionAndAnswer) {
    const auto b = oracle::make_batch(1, {{"a", "Lyon is big", {1}}, {"b", "capital of France", {1}}, {"c", "unrelated", {1}}});
    const std::vector<eval_item> items = {{"q", "The capital of France is", {"Paris", "Lyon"}, 0, {}, {}, {}, {}}};
    const auto ms = match_bm25(build_bm25(b), items, {std::size_t{10}, std::nullopt});
    EXPECT_EQ(ms.method, match_method::bm25);
    // "is" also hits doc a; c shares no term.
    ASSERT_EQ(ms.count("q"), 2u);
    EXPECT_EQ(ms.entries.at("q")[0].doc_id, "b");
    EXPECT_EQ(ms.entries.at("q")[1].doc_id, "a");
}
