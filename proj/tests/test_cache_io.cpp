#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "alignlab/io.hpp"
#include "alignlab/metrics.hpp"
#include "support/instances.hpp"

using namespace alignlab;

namespace {

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "alignlab_io_test";
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("untruncated cache reproduces exact advantages") {
    TokenMdp mdp = testing::small_mdp(4, 3);
    Rng rng(30);
    TabularPolicy dpo = testing::random_policy(mdp, PolicyRole::dpo_teacher, rng);
    TabularPolicy ref = testing::random_policy(mdp, PolicyRole::reference_teacher, rng);
    std::vector<State> states;
    for (const auto& group : reachable_states_by_depth(mdp, {1}))
        for (const State& s : group)
            if (!s.terminal) states.push_back(s);

    TopKAdvantageCache cache = build_advantage_cache(dpo, ref, states, mdp.vocab_size);
    AdvantageView exact = AdvantageView::exact(&dpo, &ref, 0.5);
    AdvantageView cached = AdvantageView::cached(&cache, 0.5);
    CHECK(cached.full_support());
    for (const State& s : states) {
        auto a = exact.advantage(s);
        auto b = cached.advantage(s);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::fabs(a[i] - b[i]) < 1e-12);
    }
    // k beyond the vocabulary clamps to full exactness
    TopKAdvantageCache clamped = build_advantage_cache(dpo, ref, states, 99);
    CHECK(clamped.k == mdp.vocab_size);
}

TEST_CASE("k=2 substitution and omission rules, hand-verified") {
    TokenMdp mdp = testing::small_mdp(4, 1);
    TabularPolicy dpo(4, PolicyRole::dpo_teacher);
    TabularPolicy ref(4, PolicyRole::reference_teacher);
    // ref (0.4, 0.3, 0.2, 0.1): top-2 {0,1}, in-set floor 0.3
    // dpo (0.45, 0.1, 0.35, 0.1): top-2 {0,2}
    ref.mutable_logits("1") = {std::log(0.4), std::log(0.3), std::log(0.2), std::log(0.1)};
    dpo.mutable_logits("1") = {std::log(0.45), std::log(0.1), std::log(0.35), std::log(0.1)};
    State root = initial_state({1});
    std::vector<State> states{root};

    TopKAdvantageCache cache = build_advantage_cache(dpo, ref, states, 2);
    const auto& row = cache.entries.at("1");
    REQUIRE(row.size() == 2);
    // token 1 (reference-only) omitted; tokens sorted
    CHECK(row[0].token == 0);
    CHECK(row[1].token == 2);

    auto p_dpo = dpo.action_distribution(root);
    auto p_ref = ref.action_distribution(root);
    // token 0 in both top-2 sets: plain log ratio
    CHECK(row[0].log_ratio == std::log(p_dpo[0]) - std::log(p_ref[0]));
    CHECK(row[0].log_ratio == Catch::Approx(std::log(0.45 / 0.4)).margin(1e-12));
    // token 2 outside the reference top-2: the reference's lowest in-set
    // probability substitutes
    CHECK(row[1].log_ratio == std::log(p_dpo[2]) - std::log(p_ref[1]));
    CHECK(row[1].log_ratio == Catch::Approx(std::log(0.35 / 0.3)).margin(1e-12));

    // probability-space variant subtracts the probability itself
    TopKAdvantageCache prob = build_advantage_cache(dpo, ref, states, 2, true);
    CHECK(prob.entries.at("1")[1].log_ratio == std::log(p_dpo[2]) - p_ref[1]);

    AdvantageView view = AdvantageView::cached(&cache, 1.0);
    CHECK_FALSE(view.full_support());
    State unseen = initial_state({2});
    CHECK_THROWS_AS(view.log_ratios(unseen), CacheMissError);
}

TEST_CASE("cache files round-trip and verify teacher provenance") {
    TokenMdp mdp = testing::small_mdp(4, 2);
    Rng rng(31);
    TabularPolicy dpo = testing::random_policy(mdp, PolicyRole::dpo_teacher, rng);
    TabularPolicy ref = testing::random_policy(mdp, PolicyRole::reference_teacher, rng);
    std::vector<State> states;
    for (const auto& group : reachable_states_by_depth(mdp, {1}))
        for (const State& s : group)
            if (!s.terminal) states.push_back(s);
    TopKAdvantageCache cache = build_advantage_cache(dpo, ref, states, 2);
    cache.dpo_hash = policy_hash(dpo);
    cache.ref_hash = policy_hash(ref);

    auto path = temp_dir() / "cache.bin";
    save_cache(path, cache);
    TopKAdvantageCache loaded = load_cache(path, cache.dpo_hash, cache.ref_hash);
    CHECK(loaded.k == cache.k);
    CHECK(loaded.vocab_size == cache.vocab_size);
    REQUIRE(loaded.entries.size() == cache.entries.size());
    for (const auto& [key, row] : cache.entries) {
        const auto& got = loaded.entries.at(key);
        REQUIRE(got.size() == row.size());
        for (std::size_t i = 0; i < row.size(); ++i) {
            CHECK(got[i].token == row[i].token);
            CHECK(got[i].log_ratio == row[i].log_ratio); // binary doubles round-trip bitwise
        }
    }
    CHECK_THROWS_AS(load_cache(path, "deadbeefdeadbeef", cache.ref_hash), IntegrityError);
}

TEST_CASE("task files round-trip with a stable hash") {
    TaskSpec spec;
    spec.vocab_size = 4;
    spec.horizon = 3;
    spec.num_prompts = 2;
    SynthTask task = synth_task(4, spec);
    auto path = temp_dir() / "task.json";
    save_task(path, task, spec);
    LoadedTask back = load_task(path);
    CHECK(back.task.mdp.prompts == task.mdp.prompts);
    CHECK(back.task.reward.table == task.reward.table);

    // identical content, identical hash
    auto path2 = temp_dir() / "task2.json";
    save_task(path2, task, spec);
    CHECK(content_hash(read_file(path)) == content_hash(read_file(path2)));

    // corrupting the magic fails the integrity check
    std::string bytes = read_file(path);
    atomic_write(path, "{\"magic\": \"NOT-A-TASK\"}");
    CHECK_THROWS_AS(load_task(path), IntegrityError);
    atomic_write(path, bytes);
    CHECK_NOTHROW(load_task(path));
}

TEST_CASE("policy checkpoints round-trip and validate the parent task hash") {
    TokenMdp mdp = testing::small_mdp(4, 2);
    Rng rng(33);
    TabularPolicy p = testing::random_policy(mdp, PolicyRole::dpo_teacher, rng);
    auto path = temp_dir() / "policy.json";
    save_policy(path, p, "0123456789abcdef");
    LoadedPolicy back = load_policy(path, "0123456789abcdef");
    CHECK(back.policy.role() == PolicyRole::dpo_teacher);
    CHECK(back.policy.vocab_size() == 4);
    CHECK(back.policy.logits() == p.logits());
    CHECK_THROWS_AS(load_policy(path, "ffffffffffffffff"), IntegrityError);
}

TEST_CASE("metrics serialize with fixed field order") {
    MetricsRecord r{"adpa:student", 3, 7, 0.25, 1.5, 0.01, 42};
    CHECK(to_jsonl(r) ==
          "{\"phase\":\"adpa:student\",\"step\":3,\"seed\":7,\"mean_true_reward\":0.25,"
          "\"loss\":1.5,\"kl_to_ref\":0.01,\"queries_used\":42}");
    SummaryRow row{"adpa", 7, 3, 0.25, 0.75, 0.5};
    CHECK(summary_csv({row}) ==
          "method,seed,best_step,mean_true_reward,reward_accuracy,win_rate\n"
          "adpa,7,3,0.25,0.75,0.5\n");
}
