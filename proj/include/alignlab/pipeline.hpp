#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "alignlab/advantage.hpp"
#include "alignlab/config.hpp"
#include "alignlab/data.hpp"
#include "alignlab/errors.hpp"
#include "alignlab/metrics.hpp"
#include "alignlab/objectives.hpp"
#include "alignlab/optimizer.hpp"
#include "alignlab/policy.hpp"
#include "alignlab/rl.hpp"

namespace alignlab {

/// Full-batch trainer shared by the offline phases. loss_fn aggregates over
/// its dataset and returns the batch loss with its gradient; eval_fn scores a
/// snapshot (exact held-out mean true reward). With select_best the returned
/// policy is the best-scoring snapshot (ties to the earliest step), otherwise
/// the final one.
template <typename LossFn>
PhaseResult train_full_batch(TabularPolicy policy, LossFn&& loss_fn, int epochs,
                             Optimizer opt,
                             const std::function<double(const TabularPolicy&)>& eval_fn,
                             int cadence, const std::string& phase_name, std::uint64_t seed,
                             bool select_best, const TabularPolicy* kl_ref = nullptr,
                             std::uint64_t queries_per_epoch = 0) {
    PhaseResult out;
    out.best_eval = eval_fn(policy);
    out.best_step = 0;
    out.metrics.push_back(MetricsRecord{
        phase_name, 0, seed, out.best_eval, 0.0,
        kl_ref ? mean_kl_to_reference(policy, *kl_ref) : 0.0, 0});
    TabularPolicy best = policy;
    std::uint64_t queries = 0;
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        LossResult batch = loss_fn(policy);
        if (!std::isfinite(batch.value) || !batch.grad.finite())
            throw DivergenceError(phase_name + ": non-finite loss at epoch " +
                                  std::to_string(epoch));
        opt.apply(policy, batch.grad);
        queries += queries_per_epoch;
        if (epoch % cadence == 0 || epoch == epochs) {
            double e = eval_fn(policy);
            out.metrics.push_back(MetricsRecord{
                phase_name, epoch, seed, e, batch.value,
                kl_ref ? mean_kl_to_reference(policy, *kl_ref) : 0.0, queries});
            if (select_best && e > out.best_eval) {
                out.best_eval = e;
                out.best_step = epoch;
                best = policy;
            }
        }
    }
    out.policy = select_best ? std::move(best) : std::move(policy);
    if (!select_best) out.best_step = epochs;
    return out;
}

/// SFT to the configured number of epochs; returns the final snapshot.
inline PhaseResult run_sft_phase(TabularPolicy policy, const TokenMdp& mdp,
                                 const std::vector<InstructionPair>& data, PhaseSpec phase,
                                 OptimizerKind opt_kind,
                                 const std::function<double(const TabularPolicy&)>& eval_fn,
                                 int cadence, const std::string& phase_name,
                                 std::uint64_t seed, bool select_best = false) {
    if (data.empty()) throw std::invalid_argument("run_sft_phase: empty instruction data");
    auto loss_fn = [&](const TabularPolicy& p) {
        LossResult batch;
        batch.grad = GradientAccumulator(p.vocab_size());
        const double inv_n = 1.0 / static_cast<double>(data.size());
        for (const auto& item : data) {
            LossResult one = sft_loss_and_grad(p, mdp, item.x, item.y);
            batch.value += inv_n * one.value;
            batch.grad.add_scaled(one.grad, inv_n);
        }
        return batch;
    };
    return train_full_batch(std::move(policy), loss_fn, phase.epochs,
                            Optimizer(opt_kind, phase.lr), eval_fn, cadence, phase_name, seed,
                            select_best);
}

/// DPO against a frozen reference snapshot; returns the final policy unless
/// select_best is requested.
inline PhaseResult run_dpo_phase(TabularPolicy policy, const TabularPolicy& ref_snapshot,
                                 const TokenMdp& mdp, const PreferenceDataset& data,
                                 double beta, PhaseSpec phase, OptimizerKind opt_kind,
                                 const std::function<double(const TabularPolicy&)>& eval_fn,
                                 int cadence, const std::string& phase_name,
                                 std::uint64_t seed, bool select_best = false) {
    if (data.empty()) throw std::invalid_argument("run_dpo_phase: empty preference data");
    auto loss_fn = [&](const TabularPolicy& p) {
        LossResult batch;
        batch.grad = GradientAccumulator(p.vocab_size());
        const double inv_n = 1.0 / static_cast<double>(data.size());
        for (const auto& triple : data) {
            LossResult one = dpo_loss(p, ref_snapshot, mdp, triple, beta);
            batch.value += inv_n * one.value;
            batch.grad.add_scaled(one.grad, inv_n);
        }
        return batch;
    };
    return train_full_batch(std::move(policy), loss_fn, phase.epochs,
                            Optimizer(opt_kind, phase.lr), eval_fn, cadence, phase_name, seed,
                            select_best, &ref_snapshot);
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalReport {
    double mean_true_reward = 0.0; // over sampled responses
    double reward_accuracy = 0.5;
    double win_rate = 0.5;
};

/// Mean per-token log-probability comparison over preference pairs; exact
/// ties count one half.
inline double reward_accuracy(const TabularPolicy& policy, const TokenMdp& mdp,
                              const PreferenceDataset& pairs) {
    if (pairs.empty()) return 0.5;
    double hits = 0.0;
    for (const auto& t : pairs) {
        Trajectory tw = make_trajectory(mdp, t.x, t.y_w);
        Trajectory tl = make_trajectory(mdp, t.x, t.y_l);
        double lw = policy.trajectory_logprob(mdp, tw) / static_cast<double>(t.y_w.size());
        double ll = policy.trajectory_logprob(mdp, tl) / static_cast<double>(t.y_l.size());
        if (lw > ll)
            hits += 1.0;
        else if (lw == ll)
            hits += 0.5;
    }
    return hits / static_cast<double>(pairs.size());
}

/// Sampled evaluation: mean true reward over n responses per prompt, reward
/// accuracy over held-out pairs, and (optionally) a head-to-head win rate
/// judged by ground-truth cumulative reward. Both contestants draw from
/// identically derived streams, so a policy against itself ties every round.
inline EvalReport evaluate(const TabularPolicy& policy, const TokenMdp& mdp,
                           const GroundTruthReward& truth, const PreferenceDataset& eval_pairs,
                           const TabularPolicy* opponent, int n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("evaluate: n >= 1");
    EvalReport rep;
    double total = 0.0;
    for (std::size_t pi = 0; pi < mdp.prompts.size(); ++pi) {
        Rng rng = substream(seed, "eval-samples", pi);
        for (int i = 0; i < n; ++i) {
            Trajectory t = policy.sample_response(mdp, mdp.prompts[pi], rng);
            total += cumulative_reward(mdp, truth, t);
        }
    }
    rep.mean_true_reward = total / static_cast<double>(mdp.prompts.size() * n);
    rep.reward_accuracy = reward_accuracy(policy, mdp, eval_pairs);
    if (opponent) {
        double wins = 0.0;
        int rounds = 0;
        for (std::size_t pi = 0; pi < mdp.prompts.size(); ++pi) {
            for (int i = 0; i < n; ++i) {
                std::uint64_t round_idx = pi * static_cast<std::uint64_t>(n) + i;
                Rng rng_a = substream(seed, "win", round_idx);
                Rng rng_b = substream(seed, "win", round_idx);
                Trajectory ta = policy.sample_response(mdp, mdp.prompts[pi], rng_a);
                Trajectory tb = opponent->sample_response(mdp, mdp.prompts[pi], rng_b);
                double ra = cumulative_reward(mdp, truth, ta);
                double rb = cumulative_reward(mdp, truth, tb);
                wins += ra > rb ? 1.0 : (ra == rb ? 0.5 : 0.0);
                ++rounds;
            }
        }
        rep.win_rate = wins / rounds;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// pipelines
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& known_methods() {
    static const std::vector<std::string> methods = {
        "sft",  "dpo",          "vanilla-kd",   "dckd",       "adpa",
        "adpa+", "q-argmax-kd", "q-softmax-kd", "dppo-token", "dppo-seq"};
    return methods;
}

/// Ordered phase plan a method executes; the dry-run output.
inline std::vector<std::string> phase_plan(const std::string& method) {
    std::vector<std::string> plan = {"data:instruction", "sft:teacher", "data:preference",
                                     "sft:student"};
    if (method == "sft") {
        plan.push_back("sft-continue:student");
    } else if (method == "dpo") {
        plan.push_back("dpo:student");
    } else if (method == "vanilla-kd") {
        plan.push_back("dpo:teacher");
        plan.push_back("kd:student");
    } else if (method == "dckd") {
        plan.push_back("dpo:teacher");
        plan.push_back("dckd:student");
    } else if (method == "adpa") {
        plan.push_back("dpo:teacher");
        plan.push_back("generate:student");
        plan.push_back("adpa:student");
    } else if (method == "adpa+") {
        plan.push_back("dpo:teacher");
        plan.push_back("dckd:student");
        plan.push_back("generate:dckd-student");
        plan.push_back("adpa:dckd-student");
    } else if (method == "q-argmax-kd" || method == "q-softmax-kd") {
        plan.push_back("dpo:teacher");
        plan.push_back("generate:student");
        plan.push_back(method + ":student");
    } else if (method == "dppo-token" || method == "dppo-seq") {
        plan.push_back("dpo:teacher");
        plan.push_back("freeze:student-reference");
        plan.push_back(method + ":student");
    } else {
        throw ConfigError("method: unknown value '" + method + "'");
    }
    return plan;
}

struct PipelineRun {
    TabularPolicy policy; // selected student
    TabularPolicy teacher_ref;
    TabularPolicy teacher_dpo;
    std::vector<MetricsRecord> metrics;
    std::vector<std::string> executed_plan;
    SummaryRow summary;
};

namespace detail {

struct MethodContext {
    const TokenMdp& mdp;
    const GroundTruthReward& truth;
    const TrainConfig& cfg;
    std::vector<InstructionPair> instruction_data;
    PreferenceDataset pref_data;
    PreferenceDataset eval_pairs;
    std::function<double(const TabularPolicy&)> eval_fn;
};

inline std::vector<OnPolicyItem> generate_on_policy(const MethodContext& ctx,
                                                    const TabularPolicy& generator,
                                                    const TabularPolicy& teacher_dpo) {
    std::vector<OnPolicyItem> items;
    items.reserve(ctx.pref_data.size() * static_cast<std::size_t>(ctx.cfg.data.samples_per_prompt));
    std::uint64_t idx = 0;
    for (const auto& triple : ctx.pref_data) {
        for (int rep = 0; rep < ctx.cfg.data.samples_per_prompt; ++rep, ++idx) {
            TokenSeq y_hat;
            switch (ctx.cfg.state_source) {
                case StateSource::student: {
                    Rng rng = substream(ctx.cfg.seed, "gen-yhat", idx);
                    y_hat = generator.sample_response(ctx.mdp, triple.x, rng).actions;
                    break;
                }
                case StateSource::preferred: y_hat = triple.y_w; break;
                case StateSource::dispreferred: y_hat = triple.y_l; break;
                case StateSource::teacher: {
                    Rng rng = substream(ctx.cfg.seed, "gen-yhat", idx);
                    y_hat = teacher_dpo.sample_response(ctx.mdp, triple.x, rng).actions;
                    break;
                }
            }
            items.push_back(OnPolicyItem{triple.x, triple.y_w, y_hat});
        }
    }
    return items;
}

inline std::vector<State> on_policy_states(const TokenMdp& mdp,
                                           const std::vector<OnPolicyItem>& items) {
    std::vector<State> states;
    std::map<StateKey, bool> seen;
    for (const auto& item : items) {
        for (const State& s : visited_states(mdp, item.x, item.y_hat)) {
            if (!seen.emplace(state_key(s), true).second) continue;
            states.push_back(s);
        }
    }
    return states;
}

/// Advantage-guided distillation phase shared by adpa / adpa+ / the Q losses.
/// The teacher signal is precomputed (one distribution fetch per distinct
/// state), so queries do not grow with epochs.
template <typename ItemLoss>
PhaseResult run_distill_phase(const MethodContext& ctx, TabularPolicy init,
                              const std::vector<OnPolicyItem>& items, ItemLoss&& item_loss,
                              const std::string& phase_name) {
    if (items.empty()) throw std::invalid_argument(phase_name + ": empty on-policy data");
    auto loss_fn = [&](const TabularPolicy& p) {
        LossResult batch;
        batch.grad = GradientAccumulator(p.vocab_size());
        const double inv_n = 1.0 / static_cast<double>(items.size());
        for (const auto& item : items) {
            LossResult one = item_loss(p, item);
            batch.value += inv_n * one.value;
            batch.grad.add_scaled(one.grad, inv_n);
        }
        return batch;
    };
    PhaseResult res = train_full_batch(std::move(init), loss_fn, ctx.cfg.student.epochs,
                                       Optimizer(ctx.cfg.optimizer, ctx.cfg.student.lr),
                                       ctx.eval_fn, ctx.cfg.eval.cadence, phase_name,
                                       ctx.cfg.seed, /*select_best=*/true);
    std::uint64_t distinct = on_policy_states(ctx.mdp, items).size();
    for (auto& m : res.metrics) m.queries_used = distinct;
    return res;
}

} // namespace detail

/// Everything the student methods share: the shaped datasets, the SFT'd
/// teacher and student, and (when requested) the DPO teacher. Building it once
/// and fanning out across methods reproduces run_method bit for bit, because
/// no phase before the method-specific one depends on the method.
struct PipelinePrefix {
    std::vector<InstructionPair> instruction_data;
    PreferenceDataset pref_data;
    PreferenceDataset eval_pairs;
    TabularPolicy teacher_ref;
    TabularPolicy teacher_dpo;
    TabularPolicy sft_student;
    bool has_dpo_teacher = false;
    std::vector<MetricsRecord> metrics;
};

inline bool method_needs_dpo_teacher(const std::string& method) {
    return method != "sft" && method != "dpo";
}

inline PipelinePrefix build_pipeline_prefix(const SynthTask& task, const TrainConfig& cfg,
                                            bool with_dpo_teacher) {
    const TokenMdp& mdp = task.mdp;
    const GroundTruthReward& truth = task.reward;
    PipelinePrefix prefix;
    auto eval_fn = [&](const TabularPolicy& p) { return expected_true_reward(p, mdp, truth); };

    InstructionDecode decode = cfg.data.it_decode == "greedy" ? InstructionDecode::greedy
                                                              : InstructionDecode::optimal;
    prefix.instruction_data = make_instruction_data(mdp, truth, decode);
    TabularPolicy teacher_init(mdp.vocab_size, PolicyRole::reference_teacher);
    PhaseResult teacher_sft =
        run_sft_phase(std::move(teacher_init), mdp, prefix.instruction_data, cfg.teacher_sft,
                      cfg.optimizer, eval_fn, cfg.eval.cadence, "sft:teacher", cfg.seed);
    prefix.teacher_ref = std::move(teacher_sft.policy);
    for (auto& m : teacher_sft.metrics) prefix.metrics.push_back(m);

    // preference data (training and held-out evaluation pairs)
    if (cfg.data.sampler == "foreign-pair") {
        Rng rng_a = substream(cfg.seed, "foreign-a");
        Rng rng_b = substream(cfg.seed, "foreign-b");
        TabularPolicy foreign_a = make_foreign_policy(mdp, rng_a, 2.0);
        TabularPolicy foreign_b = make_foreign_policy(mdp, rng_b, 2.0);
        Rng prng = substream(cfg.seed, "pref-data");
        prefix.pref_data =
            synth_preference_data_two(mdp, truth, foreign_a, foreign_b,
                                      cfg.data.n_pref_pairs, prng);
        Rng erng = substream(cfg.seed, "eval-pairs");
        prefix.eval_pairs =
            synth_preference_data_two(mdp, truth, foreign_a, foreign_b,
                                      cfg.data.n_eval_pairs, erng);
    } else {
        TabularPolicy uniform_sampler(mdp.vocab_size, PolicyRole::student);
        const TabularPolicy& sampler =
            cfg.data.sampler == "teacher-sft" ? prefix.teacher_ref : uniform_sampler;
        const TabularPolicy* alt = cfg.data.sampler == "mixed" ? &prefix.teacher_ref : nullptr;
        Rng prng = substream(cfg.seed, "pref-data");
        prefix.pref_data = synth_preference_data(mdp, truth, sampler, cfg.data.n_pref_pairs,
                                                 prng, alt, 0.5);
        Rng erng = substream(cfg.seed, "eval-pairs");
        prefix.eval_pairs = synth_preference_data(mdp, truth, sampler, cfg.data.n_eval_pairs,
                                                  erng, alt, 0.5);
    }

    TabularPolicy student_init(mdp.vocab_size, PolicyRole::student);
    PhaseResult student_sft =
        run_sft_phase(std::move(student_init), mdp, prefix.instruction_data, cfg.student_sft,
                      cfg.optimizer, eval_fn, cfg.eval.cadence, "sft:student", cfg.seed);
    prefix.sft_student = std::move(student_sft.policy);
    for (auto& m : student_sft.metrics) prefix.metrics.push_back(m);

    if (with_dpo_teacher) {
        prefix.has_dpo_teacher = true;
        if (cfg.ablation.no_dpo_teacher) {
            // ablation substitute: SFT the reference teacher on the preferred
            // responses instead of running DPO
            std::vector<InstructionPair> preferred;
            preferred.reserve(prefix.pref_data.size());
            for (const auto& t : prefix.pref_data)
                preferred.push_back(InstructionPair{t.x, t.y_w});
            PhaseResult r = run_sft_phase(
                prefix.teacher_ref.clone_as(PolicyRole::dpo_teacher), mdp, preferred,
                PhaseSpec{cfg.teacher_dpo.epochs, cfg.teacher_sft.lr}, cfg.optimizer, eval_fn,
                cfg.eval.cadence, "sft-preferred:teacher", cfg.seed);
            prefix.teacher_dpo = std::move(r.policy);
            for (auto& m : r.metrics) prefix.metrics.push_back(m);
        } else {
            // checkpoint-select the DPO teacher by validation reward:
            // unbounded logistic margins on a small pair set otherwise degrade
            // the log-ratio signal the distillation losses feed on
            PhaseResult r = run_dpo_phase(
                prefix.teacher_ref.clone_as(PolicyRole::dpo_teacher), prefix.teacher_ref, mdp,
                prefix.pref_data, cfg.hp.beta, cfg.teacher_dpo, cfg.optimizer, eval_fn,
                cfg.eval.cadence, "dpo:teacher", cfg.seed, /*select_best=*/true);
            prefix.teacher_dpo = std::move(r.policy);
            for (auto& m : r.metrics) prefix.metrics.push_back(m);
        }
    }
    return prefix;
}

/// Runs a method's own phases on top of a prepared prefix. The prefix must
/// have been built from the same (task, cfg) modulo method.
inline PipelineRun run_method_with_prefix(const std::string& method, const SynthTask& task,
                                          const TrainConfig& cfg_in,
                                          const PipelinePrefix& prefix) {
    TrainConfig cfg = cfg_in;
    cfg.method = method;
    cfg.validate();
    const TokenMdp& mdp = task.mdp;
    const GroundTruthReward& truth = task.reward;

    PipelineRun run;
    run.executed_plan = phase_plan(method);
    if (cfg.dry_run) return run;
    if (method_needs_dpo_teacher(method) && !prefix.has_dpo_teacher)
        throw std::invalid_argument("run_method_with_prefix: prefix lacks the DPO teacher");

    run.teacher_ref = prefix.teacher_ref;
    run.teacher_dpo = prefix.teacher_dpo;
    run.metrics = prefix.metrics;

    detail::MethodContext ctx{mdp, truth, cfg, prefix.instruction_data, prefix.pref_data,
                              prefix.eval_pairs, {}};
    ctx.eval_fn = [&](const TabularPolicy& p) { return expected_true_reward(p, mdp, truth); };
    const TabularPolicy& sft_student = prefix.sft_student;

    PhaseResult final_phase;
    std::string summary_method = method;

    if (method == "sft") {
        std::vector<InstructionPair> continue_data = ctx.instruction_data;
        final_phase = run_sft_phase(sft_student, mdp, continue_data, cfg.student, cfg.optimizer,
                                    ctx.eval_fn, cfg.eval.cadence, "sft-continue:student",
                                    cfg.seed, /*select_best=*/true);
    } else if (method == "dpo") {
        final_phase = run_dpo_phase(sft_student, sft_student, mdp, ctx.pref_data, cfg.hp.beta,
                                    PhaseSpec{cfg.student.epochs, cfg.student_dpo_lr},
                                    cfg.optimizer, ctx.eval_fn, cfg.eval.cadence, "dpo:student",
                                    cfg.seed, /*select_best=*/true);
    } else if (method == "vanilla-kd" || method == "dckd") {
        auto loss_fn = [&](const TabularPolicy& p) {
            LossResult batch;
            batch.grad = GradientAccumulator(p.vocab_size());
            const double inv_n = 1.0 / static_cast<double>(ctx.pref_data.size());
            for (const auto& triple : ctx.pref_data) {
                LossResult one =
                    method == "vanilla-kd"
                        ? kd_loss(p, run.teacher_dpo, mdp, triple.x, triple.y_w, cfg.hp.alpha)
                        : dckd_loss(p, run.teacher_dpo, mdp, triple, cfg.hp.alpha,
                                    DckdOptions{!cfg.ablation.no_dispreferred});
                batch.value += inv_n * one.value;
                batch.grad.add_scaled(one.grad, inv_n);
            }
            return batch;
        };
        final_phase = train_full_batch(sft_student, loss_fn, cfg.student.epochs,
                                       Optimizer(cfg.optimizer, cfg.student.lr), ctx.eval_fn,
                                       cfg.eval.cadence, method + ":student", cfg.seed,
                                       /*select_best=*/true);
    } else if (method == "adpa" || method == "adpa+" || method == "q-argmax-kd" ||
               method == "q-softmax-kd") {
        TabularPolicy distill_init = sft_student;
        if (method == "adpa+") {
            auto dckd_fn = [&](const TabularPolicy& p) {
                LossResult batch;
                batch.grad = GradientAccumulator(p.vocab_size());
                const double inv_n = 1.0 / static_cast<double>(ctx.pref_data.size());
                for (const auto& triple : ctx.pref_data) {
                    LossResult one = dckd_loss(p, run.teacher_dpo, mdp, triple, cfg.hp.alpha,
                                               DckdOptions{!cfg.ablation.no_dispreferred});
                    batch.value += inv_n * one.value;
                    batch.grad.add_scaled(one.grad, inv_n);
                }
                return batch;
            };
            PhaseResult dckd_phase = train_full_batch(
                std::move(distill_init), dckd_fn, cfg.student.epochs,
                Optimizer(cfg.optimizer, cfg.student.lr), ctx.eval_fn, cfg.eval.cadence,
                "dckd:student", cfg.seed, /*select_best=*/true);
            for (auto& m : dckd_phase.metrics) run.metrics.push_back(m);
            distill_init = std::move(dckd_phase.policy);
        }

        // on-policy generations come from the policy the distillation starts at
        std::vector<OnPolicyItem> items =
            detail::generate_on_policy(ctx, distill_init, run.teacher_dpo);

        TopKAdvantageCache cache;
        AdvantageView view = cfg.ablation.no_reference_teacher
                                 ? AdvantageView::dpo_only(&run.teacher_dpo, cfg.hp.beta)
                                 : AdvantageView::exact(&run.teacher_dpo, &run.teacher_ref,
                                                        cfg.hp.beta);
        if (cfg.cache.enabled && !cfg.ablation.no_reference_teacher) {
            cache = build_advantage_cache(run.teacher_dpo, run.teacher_ref,
                                          detail::on_policy_states(mdp, items), cfg.cache.k,
                                          cfg.cache.prob_space_subtraction);
            view = AdvantageView::cached(&cache, cfg.hp.beta);
        }

        AdpaOptions adpa_opts{cfg.adpa_length_normalize};
        auto item_loss = [&](const TabularPolicy& p, const OnPolicyItem& item) {
            if (method == "q-argmax-kd")
                return q_argmax_kd_loss(p, view, mdp, item.x, item.y, item.y_hat, cfg.hp.gamma);
            if (method == "q-softmax-kd")
                return q_softmax_kd_loss(p, view, mdp, item.x, item.y, item.y_hat, cfg.hp.gamma);
            return adpa_loss(p, view, mdp, item.x, item.y, item.y_hat, cfg.hp.gamma, adpa_opts);
        };
        std::string phase_name = method == "adpa+" ? "adpa:dckd-student"
                                                   : method + std::string(":student");
        final_phase =
            detail::run_distill_phase(ctx, std::move(distill_init), items, item_loss, phase_name);
    } else if (method == "dppo-token" || method == "dppo-seq") {
        TabularPolicy s_ref = sft_student.clone_as(PolicyRole::student_reference);
        std::vector<InstructionPair> anchor;
        anchor.reserve(ctx.pref_data.size());
        for (const auto& t : ctx.pref_data) anchor.push_back(InstructionPair{t.x, t.y_w});
        PpoConfig ppo = cfg.ppo;
        ppo.eval_cadence = cfg.eval.cadence;
        final_phase = dppo_train(sft_student, s_ref, run.teacher_dpo, run.teacher_ref,
                                 method == "dppo-token" ? RewardGranularity::token_level
                                                        : RewardGranularity::sequence_level,
                                 ppo, mdp, truth, anchor, cfg.hp.beta, cfg.seed,
                                 method + ":student");
    } else {
        throw ConfigError("method: unknown value '" + method + "'");
    }

    for (auto& m : final_phase.metrics) run.metrics.push_back(m);
    run.policy = std::move(final_phase.policy);

    run.summary.method = summary_method;
    run.summary.seed = cfg.seed;
    run.summary.best_step = final_phase.best_step;
    run.summary.mean_true_reward = expected_true_reward(run.policy, mdp, truth);
    run.summary.reward_accuracy = reward_accuracy(run.policy, mdp, ctx.eval_pairs);
    run.summary.win_rate = 0.5;
    return run;
}

/// Runs one training method end to end: teacher SFT, preference data, student
/// SFT, the method's own phases, and final evaluation. Fully deterministic
/// from (task, cfg).
inline PipelineRun run_method(const std::string& method, const SynthTask& task,
                              const TrainConfig& cfg_in) {
    TrainConfig cfg = cfg_in;
    cfg.method = method;
    cfg.validate();
    if (cfg.dry_run) {
        PipelineRun run;
        run.executed_plan = phase_plan(method);
        return run;
    }
    PipelinePrefix prefix = build_pipeline_prefix(task, cfg, method_needs_dpo_teacher(method));
    return run_method_with_prefix(method, task, cfg, prefix);
}

/// Algorithm-style entry points; cfg.method is overridden accordingly.
inline PipelineRun run_adpa(const SynthTask& task, const TrainConfig& cfg) {
    return run_method("adpa", task, cfg);
}

inline PipelineRun run_adpa_plus(const SynthTask& task, const TrainConfig& cfg) {
    return run_method("adpa+", task, cfg);
}

} // namespace alignlab
