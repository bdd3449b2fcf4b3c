// Computes the toy-lab expected values checked by the test suite and writes
// them as JSON. Run once after changing toy defaults:
//
//   calibrate tests/data/calibration.json

#include <cstdio>
#include <iostream>

#include "interv/toylab.hpp"

using namespace interv;

namespace {

/// One fact mentioned `mentions` times in the first batch and never again.
synthetic_spec single_fact_spec(std::uint64_t seed, std::size_t mentions) {
    synthetic_spec s;
    s.relations = {{"located_in", "[X] is located in [Y]"}};
    s.facts_per_relation = 1;
    s.objects_per_relation = 4;
    s.schedule.assign(s.batches, 0);
    s.schedule[0] = mentions;
    s.alias_fraction = 0.0;
    s.seed = seed;
    return s;
}

json single_fact(std::size_t seeds, std::size_t mentions) {
    std::size_t at_first = 0, by_first = 0, correct_at_init = 0;
    json per_seed = json::array();
    for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
        const auto c = generate_corpus(single_fact_spec(seed, mentions));
        toy_train_config tc;
        tc.seed = seed;
        const auto run = train(toy_model(c.world, tc), c.batches, c.items, c.spec.sequence_length, seed);
        const auto learned = learned_at(run.matrix).at(c.items.front().item_id);
        const step_t first = run.matrix.steps()[1];
        at_first += learned && *learned == first ? 1 : 0;
        by_first += learned && *learned <= first ? 1 : 0;
        correct_at_init += run.matrix.at(0, 0) ? 1 : 0;
        per_seed.push_back(learned ? json(*learned) : json(nullptr));
    }
    return {{"seeds", seeds},
            {"mentions", mentions},
            {"learned_at", per_seed},
            {"learned_at_first_checkpoint", at_first},
            {"learned_by_first_checkpoint", by_first},
            {"correct_at_init", correct_at_init},
            {"rate", double(by_first) / double(seeds)}};
}

json experiment(const toy_corpus& c, const training_run& ref, intervention_mode mode, match_method method) {
    experiment_options o;
    o.mode = mode;
    o.method = method;
    const auto r = run_experiment(c, ref, o);
    json j = {{"step", r.step},
              {"targets", r.selection.targets.size()},
              {"replacements", r.plan.replacements.size()},
              {"replacement_fraction", r.replacement_fraction},
              {"chance_band", {r.chance_band.first, r.chance_band.second}}};
    for (const auto& s : r.summaries)
        j["summaries"][s.condition] = {{"target_mean", s.target.mean},
                                       {"target_std", s.target.std},
                                       {"control_mean", s.control.mean},
                                       {"control_std", s.control.std},
                                       {"target_delta", s.target_delta},
                                       {"control_delta", s.control_delta}};
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: calibrate <out.json>\n";
        return 2;
    }
    try {
        const synthetic_spec spec;
        const toy_train_config tc;
        const auto c = generate_corpus(spec);
        const auto ref = train(toy_model(c.world, tc), c.batches, c.items, spec.sequence_length, tc.seed);
        json out = {{"spec", spec.to_json()},
                    {"train", tc.to_json()},
                    {"single_fact", single_fact(10, 50)},
                    {"thresholds", {{"single_fact_min_rate", 0.9}}}};
        out["experiments"]["suppress-occurrence"] = experiment(c, ref, intervention_mode::suppress, match_method::occurrence);
        out["experiments"]["suppress-cooccurrence"] =
            experiment(c, ref, intervention_mode::suppress, match_method::cooccurrence);
        out["experiments"]["promote-cooccurrence"] =
            experiment(c, ref, intervention_mode::promote, match_method::cooccurrence);
        write_file_atomic(argv[1], out.dump(2) + "\n");
        std::cout << out["single_fact"].dump() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
