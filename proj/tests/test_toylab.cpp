#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace interv;
namespace fs = std::filesystem;

namespace {

synthetic_spec small_spec(std::uint64_t seed = 3) {
    synthetic_spec s;
    s.relations = {{"located_in", "[X] is located in [Y]"}, {"citizen_of", "[X] is a citizen of [Y]"}};
    s.facts_per_relation = 8;
    s.objects_per_relation = 6;
    s.batches = 4;
    s.seed = seed;
    return s;
}

json calibration() { return json::parse(read_file(fs::path(INTERV_TEST_DATA) / "calibration.json")); }

std::size_t count_sentence(const data_batch& b, const std::vector<token_t>& sentence) {
    const auto t = b.tokens();
    std::size_t n = 0;
    for (std::size_t i = 0; i + sentence.size() <= t.size(); ++i)
        n += std::equal(sentence.begin(), sentence.end(), t.begin() + static_cast<std::ptrdiff_t>(i));
    return n;
}

}  // namespace

TEST(ToyCorpus, DeterministicAndByteIdentical) {
    const auto a = generate_corpus(small_spec());
    const auto b = generate_corpus(small_spec());
    ASSERT_EQ(a.batches.size(), b.batches.size());
    for (std::size_t i = 0; i < a.batches.size(); ++i) EXPECT_EQ(a.batches[i], b.batches[i]);
    EXPECT_EQ(a.items.size(), 16u);

    const auto d1 = oracle::scratch_dir("toy_write1"), d2 = oracle::scratch_dir("toy_write2");
    write_corpus(a, d1);
    write_corpus(b, d2);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(d1)) {
        if (!e.is_regular_file()) continue;
        ++files;
        EXPECT_EQ(read_file(e.path()), read_file(d2 / fs::relative(e.path(), d1))) << e.path();
    }
    EXPECT_GE(files, 2 + 3 * a.batches.size());
    const auto m = load_manifest(d1 / "manifest.json");
    EXPECT_EQ(read_batch(m, a.batches[1].id()), a.batches[1]);

    const auto other = generate_corpus(small_spec(4));
    EXPECT_NE(other.batches[0], a.batches[0]);
}

TEST(ToyCorpus, BatchesArePackedAndIdsCountSequences) {
    const auto c = generate_corpus(small_spec());
    batch_id_t prev = 0;
    for (const auto& b : c.batches) {
        EXPECT_EQ(b.token_count() % c.spec.sequence_length, 0u);
        EXPECT_EQ(b.id(), prev + static_cast<batch_id_t>(b.token_count() / c.spec.sequence_length));
        prev = b.id();
    }
    for (const auto& it : c.items) {
        EXPECT_EQ(it.choices.size(), 4u);
        EXPECT_EQ(it.answer(), *it.object);
    }
}

TEST(ToyCorpus, SingleMentionPlantsOneSentence) {
    auto s = small_spec();
    s.relations = {{"located_in", "[X] is located in [Y]"}};
    s.facts_per_relation = 1;
    s.objects_per_relation = 4;
    s.schedule = {1, 0, 0, 0};
    s.alias_fraction = 0.0;
    const auto c = generate_corpus(s);
    const auto& w = *c.world;
    std::vector<token_t> sentence{w.id(*c.items[0].subject)};
    for (const auto& word : w.relations[0].words) sentence.push_back(word);
    sentence.push_back(w.id(*c.items[0].object));
    EXPECT_EQ(count_sentence(c.batches[0], sentence), 1u);
    for (std::size_t b = 1; b < c.batches.size(); ++b) EXPECT_EQ(count_sentence(c.batches[b], sentence), 0u);
}

TEST(ToyCorpus, ScheduleRecoveredByCooccurrence) {
    auto s = small_spec();
    s.schedule = {3, 0, 2, 1};
    s.alias_fraction = 0.0;
    const auto c = generate_corpus(s);
    for (std::size_t b = 0; b < c.batches.size(); ++b) {
        const auto ms = match_cooccurrence(c.batches[b], c.items);
        for (const auto& it : c.items) {
            auto e = ms.entries.find(it.item_id);
            const std::size_t got = e == ms.entries.end() ? 0 : e->second.size();
            EXPECT_EQ(got, s.schedule[b]) << it.item_id << " batch " << b;
        }
    }
}

TEST(ToyCorpus, AliasMentionsAreInvisibleToCanonicalMatching) {
    auto s = small_spec();
    s.schedule = {4, 4, 4, 4};
    s.alias_fraction = 0.5;
    const auto c = generate_corpus(s);
    for (std::size_t b = 0; b < c.batches.size(); ++b) {
        const auto ms = match_cooccurrence(c.batches[b], c.items);
        for (std::size_t f = 0; f < c.items.size(); ++f) {
            auto e = ms.entries.find(c.items[f].item_id);
            const std::size_t got = e == ms.entries.end() ? 0 : e->second.size();
            EXPECT_EQ(got, c.canonical_mentions[f][b]);
            EXPECT_EQ(c.canonical_mentions[f][b] + c.alias_mentions[f][b], 4u);
        }
    }
}

TEST(ToyCorpus, InvalidSpecIsRejected) {
    auto s = small_spec();
    s.objects_per_relation = 3;  // fewer than four choices
    EXPECT_THROW(generate_corpus(s), error);
    s = small_spec();
    s.schedule = {1, 2};
    EXPECT_THROW(generate_corpus(s), error);
}

TEST(ToyTraining, ZeroLearningRateKeepsTheModel) {
    const auto c = generate_corpus(small_spec());
    toy_train_config tc;
    tc.learning_rate = 0.0;
    const auto run = train(toy_model(c.world, tc), c.batches, c.items, c.spec.sequence_length, 1);
    ASSERT_EQ(run.checkpoints.size(), c.batches.size() + 1);
    for (const auto& ck : run.checkpoints)
        for (std::size_t s = 0; s < c.world->subjects.size(); ++s)
            EXPECT_EQ(ck.log_probs(s, c.world->facts[s].relation), run.checkpoints[0].log_probs(s, c.world->facts[s].relation));
    for (std::size_t i = 0; i < run.matrix.items().size(); ++i)
        for (std::size_t k = 0; k < run.matrix.steps().size(); ++k) EXPECT_EQ(run.matrix.at(i, k), run.matrix.at(i, 0));
}

TEST(ToyTraining, CheckpointStepsAreBatchIds) {
    const auto c = generate_corpus(small_spec());
    const auto run = train(toy_model(c.world, {}), c.batches, c.items, c.spec.sequence_length, 0);
    ASSERT_EQ(run.matrix.steps().size(), c.batches.size() + 1);
    EXPECT_EQ(run.matrix.steps()[0], 0);
    for (std::size_t b = 0; b < c.batches.size(); ++b) EXPECT_EQ(run.matrix.steps()[b + 1], c.batches[b].id());
    const auto again = train(toy_model(c.world, {}), c.batches, c.items, c.spec.sequence_length, 0);
    EXPECT_EQ(again.checkpoints.back(), run.checkpoints.back());
}

TEST(ToyTraining, DivergenceNamesTheStep) {
    const auto c = generate_corpus(small_spec());
    toy_train_config tc;
    tc.learning_rate = 1e200;
    try {
        train(toy_model(c.world, tc), c.batches, c.items, c.spec.sequence_length, 0);
        FAIL() << "training did not diverge";
    } catch (const error& e) {
        EXPECT_EQ(e.stage(), "toylab");
        EXPECT_NE(std::string(e.what()).find("at step "), std::string::npos) << e.what();
    }
}

TEST(ToyTraining, UnchangedBatchRetrainsIdentically) {
    const auto c = generate_corpus(small_spec());
    const auto ref = train(toy_model(c.world, {}), c.batches, c.items, c.spec.sequence_length, 0);
    experiment_report rep;
    rep.step = c.batches[1].id();
    for (const auto& it : c.items) rep.selection.targets.push_back(it.item_id);
    const std::vector<std::uint64_t> seeds = {1, 2, 3};
    compare_retraining(c, ref, c.batches[1], seeds, 1, rep);
    ASSERT_EQ(rep.target_runs.size(), 6u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(rep.target_runs[i].correct, rep.target_runs[i + 3].correct);
    EXPECT_EQ(rep.summaries[1].target_delta, 0.0);

    experiment_report threaded = rep;
    compare_retraining(c, ref, c.batches[1], seeds, 3, threaded);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(threaded.target_runs[i].correct, rep.target_runs[i].correct);
    const data_batch shorter(c.batches[1].id(), {1, 2, 3}, {});
    EXPECT_THROW(compare_retraining(c, ref, shorter, seeds, 1, rep), error);
}

TEST(ToyTraining, SingleFactIsLearnedAtTheFirstCheckpoint) {
    const auto cal = calibration();
    const auto& sf = cal["single_fact"];
    std::size_t by_first = 0;
    std::vector<json> learned;
    for (std::uint64_t seed = 1; seed <= sf["seeds"].get<std::uint64_t>(); ++seed) {
        synthetic_spec s;
        s.relations = {{"located_in", "[X] is located in [Y]"}};
        s.facts_per_relation = 1;
        s.objects_per_relation = 4;
        s.schedule.assign(s.batches, 0);
        s.schedule[0] = sf["mentions"].get<std::size_t>();
        s.alias_fraction = 0.0;
        s.seed = seed;
        const auto c = generate_corpus(s);
        toy_train_config tc;
        tc.seed = seed;
        const auto run = train(toy_model(c.world, tc), c.batches, c.items, s.sequence_length, seed);
        const auto l = learned_at(run.matrix).at(c.items[0].item_id);
        by_first += l && *l <= run.matrix.steps()[1];
        learned.push_back(l ? json(*l) : json(nullptr));
    }
    const double rate = double(by_first) / sf["seeds"].get<double>();
    EXPECT_GE(rate, cal["thresholds"]["single_fact_min_rate"].get<double>());
    EXPECT_EQ(json(learned), sf["learned_at"]);
}

TEST(ToyExperiment, MatchesCalibration) {
    const auto cal = calibration();
    const auto spec = synthetic_spec::from_json(cal["spec"]);
    const auto tc = toy_train_config::from_json(cal["train"]);
    const auto c = generate_corpus(spec);
    const auto ref = train(toy_model(c.world, tc), c.batches, c.items, spec.sequence_length, tc.seed);
    experiment_options o;
    o.mode = intervention_mode::suppress;
    o.method = match_method::cooccurrence;
    const auto r = run_experiment(c, ref, o);
    const auto& want = cal["experiments"]["suppress-cooccurrence"];
    EXPECT_EQ(r.step, want["step"].get<step_t>());
    EXPECT_EQ(r.selection.targets.size(), want["targets"].get<std::size_t>());
    EXPECT_EQ(r.plan.replacements.size(), want["replacements"].get<std::size_t>());
    EXPECT_EQ(r.tokens_before, r.tokens_after);
    for (const auto& s : r.summaries) {
        const auto& w = want["summaries"][s.condition];
        EXPECT_NEAR(s.target.mean, w["target_mean"].get<double>(), 1e-12) << s.condition;
        EXPECT_NEAR(s.control.mean, w["control_mean"].get<double>(), 1e-12) << s.condition;
    }
    EXPECT_LT(r.summary("suppress-cooccurrence").target.mean, r.summary("retrained").target.mean);
}

TEST(BinomialBand, ContainsTheRateAndNarrows) {
    double prev = 1.0;
    for (std::size_t n : {10u, 100u, 1000u}) {
        const auto [lo, hi] = binomial_band(n);
        EXPECT_LE(lo, 0.25);
        EXPECT_GE(hi, 0.25);
        EXPECT_LT(hi - lo, prev);
        prev = hi - lo;
    }
    // Binomial(4, 0.25): P(0) = 0.316, P(<=2) = 0.949, P(<=3) = 0.996.
    const auto [lo, hi] = binomial_band(4);
    EXPECT_EQ(lo, 0.0);
    EXPECT_EQ(hi, 0.75);
    EXPECT_THROW(binomial_band(0), error);
}
