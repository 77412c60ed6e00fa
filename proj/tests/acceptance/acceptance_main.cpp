// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria 1-5 and 9 verify exact identities, gradient oracles, and
// counting; 6-8 run the desk-scale training comparisons; 10 checks
// bit-reproducibility.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "alignlab/alignlab.hpp"
#include "../support/finite_diff.hpp"
#include "../support/instances.hpp"

using namespace alignlab;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what, const std::string& detail) {
    std::printf("%s criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, what.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename... Args>
std::string strf(const char* format, Args... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

// ---------------------------------------------------------------------------
// criteria 1-2: identity suite on random tasks
// ---------------------------------------------------------------------------

void criterion_1_and_2() {
    auto t0 = Clock::now();
    const std::vector<double> betas{0.05, 0.5, 1.0};
    double max_dev_22 = 0.0, max_dev_24 = 0.0, max_dev_25 = 0.0;
    int n_tasks = 0;

    Rng seeder(20240811);
    for (int trial = 0; trial < 102; ++trial) {
        int vocab = 2 + static_cast<int>(seeder.uniform_int(4));   // 2..5
        int horizon = 1 + static_cast<int>(seeder.uniform_int(4)); // 1..4
        double beta = betas[static_cast<std::size_t>(trial) % betas.size()];
        TokenMdp mdp = testing::small_mdp(vocab, horizon, 2);
        Rng rng(seeder.next_u64());
        TabularPolicy ref = testing::random_policy(mdp, PolicyRole::reference_teacher, rng);
        GroundTruthReward reward = testing::random_reward(mdp, rng);
        OptimalSolution sol = backward_induction(mdp, reward, ref, beta);

        for (const auto& [key, q] : sol.q_star) {
            std::vector<double> terms(q.size());
            auto log_ref = log_softmax(ref.logits_for(key));
            for (std::size_t a = 0; a < q.size(); ++a) terms[a] = log_ref[a] + q[a] / beta;
            max_dev_22 = std::max(max_dev_22,
                                  std::fabs(sol.v_star.at(key) - beta * log_sum_exp(terms)));
        }
        max_dev_24 = std::max(max_dev_24, advantage_identity_check(sol, ref));
        for (const auto& prompt : mdp.prompts) {
            for (const auto& traj : enumerate_trajectories(mdp, prompt)) {
                max_dev_25 = std::max(
                    max_dev_25, telescoping_check(sol, mdp, reward, ref, beta, traj).abs_diff);
            }
        }
        ++n_tasks;
    }
    double elapsed = seconds_since(t0);
    bool pass = n_tasks >= 100 && max_dev_22 < 1e-8 && max_dev_24 < 1e-8 &&
                max_dev_25 < 1e-8 && elapsed < 60.0;
    report(1, pass, "soft-value, advantage, telescoping identities on random tasks",
           strf("devs: lse=%.2e adv=%.2e tele=%.2e, %d tasks in %.1fs", max_dev_22, max_dev_24,
                max_dev_25, n_tasks, elapsed));

    // criterion 2: same-prompt implicit-reward identity, exhaustive over all
    // pairs on tasks with <= 200 trajectories
    double max_dev_mle = 0.0;
    std::uint64_t n_pairs = 0;
    Rng seeder2(977);
    for (int trial = 0; trial < 12; ++trial) {
        int vocab = 3 + static_cast<int>(seeder2.uniform_int(2));  // 3..4
        int horizon = 2 + static_cast<int>(seeder2.uniform_int(2)); // 2..3
        TokenMdp mdp = testing::small_mdp(vocab, horizon, 2);
        if (count_terminal_trajectories(vocab, horizon) > 200) continue;
        double beta = betas[static_cast<std::size_t>(trial) % betas.size()];
        Rng rng(seeder2.next_u64());
        TabularPolicy ref = testing::random_policy(mdp, PolicyRole::reference_teacher, rng);
        GroundTruthReward reward = testing::random_reward(mdp, rng);
        OptimalSolution sol = backward_induction(mdp, reward, ref, beta);
        for (const auto& prompt : mdp.prompts) {
            auto trajs = enumerate_trajectories(mdp, prompt);
            for (std::size_t i = 0; i < trajs.size(); ++i) {
                for (std::size_t k = i + 1; k < trajs.size(); ++k) {
                    auto d = implicit_reward_identity(sol, mdp, reward, ref, beta, trajs[i],
                                                      trajs[k]);
                    max_dev_mle = std::max(max_dev_mle, std::fabs(d.implicit - d.true_delta));
                    ++n_pairs;
                }
            }
        }
    }
    report(2, max_dev_mle < 1e-8 && n_pairs > 0,
           "same-prompt implicit-reward margins equal true reward gaps",
           strf("max dev %.2e over %llu pairs", max_dev_mle,
                (unsigned long long)n_pairs));
}

// ---------------------------------------------------------------------------
// criterion 3: gradient oracle for every loss
// ---------------------------------------------------------------------------

void criterion_3() {
    TokenMdp mdp = testing::small_mdp(4, 3);
    Rng rng(31337);
    std::map<std::string, double> worst;
    auto note = [&](const std::string& name, double err) {
        worst[name] = std::max(worst[name], err);
    };

    for (int trial = 0; trial < 50; ++trial) {
        TabularPolicy student = testing::random_policy(mdp, PolicyRole::student, rng);
        TabularPolicy dpo = testing::random_policy(mdp, PolicyRole::dpo_teacher, rng);
        TabularPolicy ref = testing::random_policy(mdp, PolicyRole::reference_teacher, rng);
        double alpha = rng.uniform(0.1, 2.0);
        double beta = rng.uniform(0.1, 1.0);
        double gamma = rng.uniform(0.3, 3.0);
        PreferenceTriple triple = testing::random_triple(mdp, {1}, rng);
        TokenSeq y_hat = testing::random_response(mdp, {1}, rng);
        AdvantageView view = AdvantageView::exact(&dpo, &ref, beta);

        note("sft", testing::max_rel_grad_error(
                        student, sft_loss_and_grad(student, mdp, {1}, triple.y_w).grad,
                        [&](const TabularPolicy& q) {
                            return sft_loss_and_grad(q, mdp, {1}, triple.y_w).value;
                        }));
        note("kd", testing::max_rel_grad_error(
                       student, kd_loss(student, dpo, mdp, {1}, triple.y_w, alpha).grad,
                       [&](const TabularPolicy& q) {
                           return kd_loss(q, dpo, mdp, {1}, triple.y_w, alpha).value;
                       }));
        note("dckd", testing::max_rel_grad_error(
                         student, dckd_loss(student, dpo, mdp, triple, alpha).grad,
                         [&](const TabularPolicy& q) {
                             return dckd_loss(q, dpo, mdp, triple, alpha).value;
                         }));
        note("dpo", testing::max_rel_grad_error(
                        student, dpo_loss(student, ref, mdp, triple, beta).grad,
                        [&](const TabularPolicy& q) {
                            return dpo_loss(q, ref, mdp, triple, beta).value;
                        }));
        note("adpa",
             testing::max_rel_grad_error(
                 student, adpa_loss(student, view, mdp, {1}, triple.y_w, y_hat, gamma).grad,
                 [&](const TabularPolicy& q) {
                     return adpa_loss(q, view, mdp, {1}, triple.y_w, y_hat, gamma).value;
                 }));
        note("q-argmax",
             testing::max_rel_grad_error(
                 student,
                 q_argmax_kd_loss(student, view, mdp, {1}, triple.y_w, y_hat, gamma).grad,
                 [&](const TabularPolicy& q) {
                     return q_argmax_kd_loss(q, view, mdp, {1}, triple.y_w, y_hat, gamma).value;
                 }));
        note("q-softmax",
             testing::max_rel_grad_error(
                 student,
                 q_softmax_kd_loss(student, view, mdp, {1}, triple.y_w, y_hat, gamma).grad,
                 [&](const TabularPolicy& q) {
                     return q_softmax_kd_loss(q, view, mdp, {1}, triple.y_w, y_hat, gamma)
                         .value;
                 }));
    }

    // PPO surrogate, regenerating any batch that sits near a clip kink
    int accepted = 0;
    while (accepted < 50) {
        TabularPolicy policy = testing::random_policy(mdp, PolicyRole::student, rng);
        TabularPolicy old = testing::random_policy(mdp, PolicyRole::student, rng, 0.8);
        std::vector<PpoStep> batch;
        Rng roll(rng.next_u64());
        bool near_kink = false;
        for (int r = 0; r < 4; ++r) {
            Trajectory t = old.sample_response(mdp, {1}, roll);
            auto states = visited_states(mdp, {1}, t.actions);
            for (std::size_t i = 0; i < t.actions.size(); ++i) {
                PpoStep step;
                step.state = states[i];
                step.key = state_key(step.state);
                step.action = t.actions[i];
                step.old_logprob =
                    old.action_log_distribution(step.state)[static_cast<std::size_t>(step.action)];
                step.advantage = roll.uniform(-1.0, 1.0);
                double ratio = std::exp(policy.action_log_distribution(
                                            step.state)[static_cast<std::size_t>(step.action)] -
                                        step.old_logprob);
                if (std::fabs(ratio - 0.8) < 5e-3 || std::fabs(ratio - 1.2) < 5e-3 ||
                    std::fabs(step.advantage) < 1e-3)
                    near_kink = true;
                batch.push_back(step);
            }
        }
        if (near_kink) continue;
        note("ppo-surrogate",
             testing::max_rel_grad_error(
                 policy, ppo_surrogate_loss_and_grad(policy, batch, 0.2).grad,
                 [&](const TabularPolicy& q) {
                     return ppo_surrogate_loss_and_grad(q, batch, 0.2).value;
                 }));
        ++accepted;
    }

    double overall = 0.0;
    std::string details;
    for (const auto& [name, err] : worst) {
        overall = std::max(overall, err);
        if (!details.empty()) details += " ";
        details += name + "=" + strf("%.1e", err);
    }
    report(3, overall < 1e-5, "analytic gradients match central finite differences", details);
}

// ---------------------------------------------------------------------------
// criterion 4: the two advantage-distillation gradient forms agree
// ---------------------------------------------------------------------------

void criterion_4() {
    TokenMdp mdp = testing::small_mdp(4, 3);
    Rng rng(424242);
    double max_dev = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        TabularPolicy student = testing::random_policy(mdp, PolicyRole::student, rng);
        TabularPolicy dpo = testing::random_policy(mdp, PolicyRole::dpo_teacher, rng);
        TabularPolicy ref = testing::random_policy(mdp, PolicyRole::reference_teacher, rng);
        double beta = trial % 2 == 0 ? 0.5 : 1.0;
        double gamma = rng.uniform(0.3, 3.0);
        AdvantageView view = AdvantageView::exact(&dpo, &ref, beta);
        TokenSeq y = testing::random_response(mdp, {1}, rng);
        TokenSeq y_hat = testing::random_response(mdp, {1}, rng);

        auto total = adpa_loss(student, view, mdp, {1}, y, y_hat, gamma);
        auto sft = sft_loss_and_grad(student, mdp, {1}, y);
        GradientAccumulator direct = total.grad;
        direct.add_scaled(sft.grad, -1.0);
        GradientAccumulator pg =
            adpa_distill_grad_policy_form(student, view, mdp, {1}, y_hat, gamma);
        for (const auto& [key, row] : pg.rows) {
            const auto& other = direct.rows.at(key);
            for (std::size_t i = 0; i < row.size(); ++i)
                max_dev = std::max(max_dev, std::fabs(row[i] - other[i]));
        }
    }
    report(4, max_dev < 1e-12, "direct and policy-gradient forms agree entrywise",
           strf("max dev %.2e over 50 instances", max_dev));
}

// ---------------------------------------------------------------------------
// criterion 5: sample-complexity counts
// ---------------------------------------------------------------------------

void criterion_5() {
    Rng rng(550);
    bool pass = true;
    std::string detail;
    for (int vocab : {3, 4}) {
        for (int remaining : {2, 3}) {
            TokenMdp mdp = testing::small_mdp(vocab, remaining);
            TabularPolicy dpo = testing::random_policy(mdp, PolicyRole::dpo_teacher, rng);
            TabularPolicy ref = testing::random_policy(mdp, PolicyRole::reference_teacher, rng);
            TeacherOracles oracles{&dpo, &ref, &mdp, 0.5};
            State root = initial_state({1});
            auto dist =
                sample_complexity_probe(root, RewardGranularity::distribution_level, oracles);
            auto tok = sample_complexity_probe(root, RewardGranularity::token_level, oracles);
            auto seq =
                sample_complexity_probe(root, RewardGranularity::sequence_level, oracles);
            std::uint64_t expect = 1;
            for (int i = 0; i < remaining; ++i) expect *= static_cast<std::uint64_t>(vocab);
            bool ok = dist.queries == 1 && tok.queries == static_cast<std::uint64_t>(vocab) &&
                      seq.queries == expect;
            pass = pass && ok;
            detail += strf("|A|=%d,T-t=%d:%llu/%llu/%llu ", vocab, remaining,
                           (unsigned long long)dist.queries, (unsigned long long)tok.queries,
                           (unsigned long long)seq.queries);
        }
    }
    report(5, pass, "probe query counts are exactly 1, |A|, |A|^(T-t)", detail);
}

// ---------------------------------------------------------------------------
// criteria 6-8: desk-scale training comparisons
// ---------------------------------------------------------------------------

TaskSpec ordering_task_spec(std::uint64_t seed) {
    TaskSpec spec;
    spec.vocab_size = 4;
    spec.horizon = 4;
    spec.num_prompts = 3;
    spec.final_bonus_scale = 2.5;
    spec.seed = seed;
    return spec;
}

TrainConfig ordering_config(std::uint64_t seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.hp = DistillHyperparams{1.0, 0.5, 1.5};
    cfg.teacher_sft = PhaseSpec{140, 0.5};
    cfg.student_sft = PhaseSpec{10, 0.5};
    cfg.teacher_dpo = PhaseSpec{2400, 2.0};
    cfg.student = PhaseSpec{300, 0.5};
    cfg.student_dpo_lr = 2.0;
    cfg.data.n_pref_pairs = 1024;
    cfg.data.n_eval_pairs = 256;
    cfg.data.samples_per_prompt = 2;
    cfg.ppo.rollouts_per_epoch = 8;
    cfg.ppo.inner_epochs = 4;
    cfg.ppo.clip_eps = 0.2;
    cfg.ppo.lr = 0.5;
    cfg.ppo.critic_lr = 0.3;
    cfg.ppo.epochs = 300; // matched with cfg.student
    return cfg;
}

double trace_std_late_half(const PipelineRun& run, const std::string& phase_prefix) {
    std::vector<double> vals;
    int max_step = 0;
    for (const auto& m : run.metrics)
        if (m.phase.rfind(phase_prefix, 0) == 0) max_step = std::max(max_step, m.step);
    int warm = max_step / 2; // warm-up: first half of the budget
    for (const auto& m : run.metrics)
        if (m.phase.rfind(phase_prefix, 0) == 0 && m.step > warm)
            vals.push_back(m.mean_true_reward);
    if (vals.size() < 2) return 0.0;
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    return std::sqrt(var / (static_cast<double>(vals.size()) - 1.0));
}

struct OrderingResults {
    // reward[label][seed-1]
    std::map<std::string, std::vector<double>> reward;
    std::map<std::string, std::vector<double>> trace_std;
    std::map<std::string, std::vector<double>> accuracy;
};

int count_wins(const OrderingResults& r, const std::string& a, const std::string& b,
               bool strict) {
    int wins = 0;
    const auto& ra = r.reward.at(a);
    const auto& rb = r.reward.at(b);
    for (std::size_t i = 0; i < ra.size(); ++i)
        if (strict ? ra[i] > rb[i] : ra[i] >= rb[i]) ++wins;
    return wins;
}

void criteria_6_and_7(OrderingResults& results) {
    auto t0 = Clock::now();
    const int n_seeds = 5;
    for (std::uint64_t seed = 1; seed <= n_seeds; ++seed) {
        SynthTask task = synth_task(seed, ordering_task_spec(seed));
        TrainConfig cfg = ordering_config(seed);

        PipelinePrefix prefix = build_pipeline_prefix(task, cfg, true);
        auto go = [&](const std::string& label, const std::string& method,
                      const TrainConfig& c, const PipelinePrefix& p) {
            PipelineRun run = run_method_with_prefix(method, task, c, p);
            results.reward[label].push_back(run.summary.mean_true_reward);
            results.trace_std[label].push_back(trace_std_late_half(run, method + ":student"));
            results.accuracy[label].push_back(run.summary.reward_accuracy);
        };
        go("dpo", "dpo", cfg, prefix);
        go("dckd", "dckd", cfg, prefix);
        go("adpa", "adpa", cfg, prefix);
        go("adpa+", "adpa+", cfg, prefix);
        go("dppo-token", "dppo-token", cfg, prefix);
        go("dppo-seq", "dppo-seq", cfg, prefix);
        {
            TrainConfig c = cfg;
            c.ablation.no_dpo_teacher = true;
            PipelinePrefix substitute = build_pipeline_prefix(task, c, true);
            go("dckd-noDPO", "dckd", c, substitute);
        }
        {
            TrainConfig c = cfg;
            c.ablation.no_dispreferred = true;
            go("dckd-noDis", "dckd", c, prefix);
        }
        {
            TrainConfig c = cfg;
            c.ablation.no_reference_teacher = true;
            go("adpa-noRef", "adpa", c, prefix);
        }
        for (const char* src : {"teacher", "preferred", "dispreferred"}) {
            TrainConfig c = cfg;
            c.state_source = state_source_from_string(src);
            go(std::string("adpa-src-") + src, "adpa", c, prefix);
        }
    }
    double elapsed = seconds_since(t0);

    // criterion 6: reward ordering and trace stability vs the PPO variants
    int w_tok = count_wins(results, "adpa", "dppo-token", true);
    int w_seq = count_wins(results, "dppo-token", "dppo-seq", true);
    int std_tok = 0, std_seq = 0;
    for (int i = 0; i < n_seeds; ++i) {
        if (results.trace_std.at("adpa")[i] < results.trace_std.at("dppo-token")[i]) ++std_tok;
        if (results.trace_std.at("adpa")[i] < results.trace_std.at("dppo-seq")[i]) ++std_seq;
    }
    bool pass6 = w_tok >= 4 && w_seq >= 4 && std_tok >= 4 && std_seq >= 4 && elapsed < 600.0;
    report(6, pass6, "adpa > dppo-token > dppo-seq with a steadier eval trace",
           strf("reward wins %d/5 and %d/5; std wins %d/5 and %d/5; %.0fs", w_tok, w_seq,
                std_tok, std_seq, elapsed));

    // criterion 7: preference-distillation orderings
    int adpa_plus = count_wins(results, "adpa+", "adpa", false);
    int adpa_dpo = count_wins(results, "adpa", "dpo", false);
    int dckd_nodpo = count_wins(results, "dckd", "dckd-noDPO", true);
    int dckd_nodis = count_wins(results, "dckd", "dckd-noDis", true);
    int adpa_noref = count_wins(results, "adpa", "adpa-noRef", true);
    int src_teacher = count_wins(results, "adpa", "adpa-src-teacher", false);
    int src_pref = count_wins(results, "adpa", "adpa-src-preferred", false);
    int src_dis = count_wins(results, "adpa", "adpa-src-dispreferred", false);
    bool pass7 = adpa_plus >= 4 && adpa_dpo >= 4 && dckd_nodpo >= 4 && dckd_nodis >= 4 &&
                 adpa_noref >= 4 && src_teacher >= 4 && src_pref >= 4 && src_dis >= 4;
    report(7, pass7, "ablation and state-source orderings hold on majority of seeds",
           "adpa+>=adpa:" + std::to_string(adpa_plus) + " adpa>=dpo:" +
               std::to_string(adpa_dpo) + " dckd>noDPO:" + std::to_string(dckd_nodpo) +
               " dckd>noDis:" + std::to_string(dckd_nodis) + " adpa>noRef:" +
               std::to_string(adpa_noref) + " src t/p/d:" + std::to_string(src_teacher) + "/" +
               std::to_string(src_pref) + "/" + std::to_string(src_dis));
}

void criterion_8() {
    const std::vector<double> grid{0.5, 1.0, 1.5, 2.0, 3.0, 5.0};
    const std::vector<std::uint64_t> seeds{1, 2, 3};
    std::vector<double> mean_acc(grid.size(), 0.0), mean_reward(grid.size(), 0.0);

    for (std::uint64_t seed : seeds) {
        SynthTask task = synth_task(seed, ordering_task_spec(seed));
        TrainConfig cfg = ordering_config(seed);
        PipelinePrefix prefix = build_pipeline_prefix(task, cfg, true);
        for (std::size_t gi = 0; gi < grid.size(); ++gi) {
            TrainConfig c = cfg;
            c.hp.gamma = grid[gi];
            PipelineRun run = run_method_with_prefix("adpa", task, c, prefix);
            mean_acc[gi] += run.summary.reward_accuracy / seeds.size();
            mean_reward[gi] += run.summary.mean_true_reward / seeds.size();
        }
    }

    std::size_t star = 0;
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (mean_acc[i] > mean_acc[star]) star = i;
    bool non_decreasing = true;
    for (std::size_t i = 1; i <= star; ++i)
        if (mean_acc[i] + 1e-12 < mean_acc[i - 1]) non_decreasing = false;
    bool from_half = mean_acc[star] >= 0.5;

    std::size_t best_reward = 0;
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (mean_reward[i] > mean_reward[best_reward]) best_reward = i;
    bool interior_or_right = best_reward > 0;

    bool decline_beyond_3 = false; // reported, not asserted
    for (std::size_t i = 0; i + 1 < grid.size(); ++i)
        if (grid[i] >= 3.0 - 1e-9 && mean_reward[i + 1] < mean_reward[i])
            decline_beyond_3 = true;

    std::string detail = "acc:";
    for (double a : mean_acc) detail += strf(" %.3f", a);
    detail += " reward:";
    for (double r : mean_reward) detail += strf(" %.3f", r);
    detail += strf("; gamma*=%.1f", grid[star]);
    detail += decline_beyond_3 ? "; decline beyond gamma=3 reproduced"
                               : "; no decline beyond gamma=3 (reported only)";
    report(8, non_decreasing && from_half && interior_or_right,
           "gamma sweep: accuracy non-decreasing to its peak, reward peak not at the left edge",
           detail);
}

// ---------------------------------------------------------------------------
// criterion 9: cache exactness and the k=2 fixture
// ---------------------------------------------------------------------------

void criterion_9() {
    TokenMdp mdp = testing::small_mdp(5, 3);
    Rng rng(909);
    TabularPolicy dpo = testing::random_policy(mdp, PolicyRole::dpo_teacher, rng);
    TabularPolicy ref = testing::random_policy(mdp, PolicyRole::reference_teacher, rng);
    std::vector<State> states;
    for (const auto& group : reachable_states_by_depth(mdp, {1}))
        for (const State& s : group)
            if (!s.terminal) states.push_back(s);
    TopKAdvantageCache cache = build_advantage_cache(dpo, ref, states, mdp.vocab_size);
    AdvantageView exact = AdvantageView::exact(&dpo, &ref, 0.5);
    AdvantageView cached = AdvantageView::cached(&cache, 0.5);
    double max_dev = 0.0;
    for (const State& s : states) {
        auto a = exact.advantage(s);
        auto b = cached.advantage(s);
        for (std::size_t i = 0; i < a.size(); ++i)
            max_dev = std::max(max_dev, std::fabs(a[i] - b[i]));
    }

    // hand fixture: ref (0.4,0.3,0.2,0.1), dpo (0.45,0.1,0.35,0.1), k=2
    TokenMdp small = testing::small_mdp(4, 1);
    TabularPolicy d2(4, PolicyRole::dpo_teacher);
    TabularPolicy r2(4, PolicyRole::reference_teacher);
    r2.mutable_logits("1") = {std::log(0.4), std::log(0.3), std::log(0.2), std::log(0.1)};
    d2.mutable_logits("1") = {std::log(0.45), std::log(0.1), std::log(0.35), std::log(0.1)};
    State root = initial_state({1});
    TopKAdvantageCache k2 = build_advantage_cache(d2, r2, {root}, 2);
    auto p_dpo = d2.action_distribution(root);
    auto p_ref = r2.action_distribution(root);
    const auto& row = k2.entries.at("1");
    bool fixture_ok = row.size() == 2 && row[0].token == 0 && row[1].token == 2 &&
                      row[0].log_ratio == std::log(p_dpo[0]) - std::log(p_ref[0]) &&
                      row[1].log_ratio == std::log(p_dpo[2]) - std::log(p_ref[1]);

    report(9, max_dev < 1e-10 && fixture_ok,
           "untruncated cache is exact; k=2 substitution/omission fixture is bit-exact",
           strf("full-k max dev %.2e; fixture %s", max_dev, fixture_ok ? "ok" : "broken"));
}

// ---------------------------------------------------------------------------
// criterion 10: determinism of pipeline outputs
// ---------------------------------------------------------------------------

void criterion_10() {
    TaskSpec spec = ordering_task_spec(21);
    spec.horizon = 3; // keep the double run cheap
    SynthTask task = synth_task(21, spec);
    TrainConfig cfg = ordering_config(21);
    cfg.teacher_sft.epochs = 40;
    cfg.teacher_dpo.epochs = 60;
    cfg.student.epochs = 25;
    cfg.ppo.epochs = 25;
    cfg.data.n_pref_pairs = 32;
    cfg.data.n_eval_pairs = 32;

    bool pass = true;
    for (const std::string method : {"adpa+", "dppo-token"}) {
        PipelineRun a = run_method(method, task, cfg);
        PipelineRun b = run_method(method, task, cfg);
        pass = pass && metrics_jsonl(a.metrics) == metrics_jsonl(b.metrics) &&
               summary_csv({a.summary}) == summary_csv({b.summary});
    }
    report(10, pass, "re-runs from identical (config, seed) are byte-identical",
           "metrics jsonl and summary csv compared");
}

} // namespace

int main() {
    auto t0 = Clock::now();
    criterion_1_and_2();
    criterion_3();
    criterion_4();
    criterion_5();
    OrderingResults results;
    criteria_6_and_7(results);
    criterion_8();
    criterion_9();
    criterion_10();
    std::printf("%s: %d criterion failures, %.1fs total\n",
                g_failures == 0 ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL", g_failures,
                seconds_since(t0));
    return g_failures == 0 ? 0 : 1;
}
