#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignlab/advantage.hpp"
#include "alignlab/data.hpp"
#include "alignlab/errors.hpp"
#include "alignlab/math.hpp"
#include "alignlab/mdp.hpp"
#include "alignlab/metrics.hpp"
#include "alignlab/optimizer.hpp"
#include "alignlab/policy.hpp"

namespace alignlab {

enum class RewardGranularity { distribution_level, token_level, sequence_level };

inline std::string to_string(RewardGranularity g) {
    switch (g) {
        case RewardGranularity::distribution_level: return "distribution-level";
        case RewardGranularity::token_level: return "token-level";
        case RewardGranularity::sequence_level: return "sequence-level";
    }
    return "distribution-level";
}

/// beta * log(pi_dpo(a|s) / pi_ref(a|s)).
inline double token_reward(const TabularPolicy& dpo, const TabularPolicy& ref, const State& s,
                           int action, double beta) {
    double lp_dpo = dpo.action_log_distribution(s)[static_cast<std::size_t>(action)];
    double lp_ref = ref.action_log_distribution(s)[static_cast<std::size_t>(action)];
    return beta * (lp_dpo - lp_ref);
}

/// beta * log(pi_dpo(y|x) / pi_ref(y|x)); equals the sum of token rewards
/// along the same response.
inline double sequence_reward(const TabularPolicy& dpo, const TabularPolicy& ref,
                              const TokenMdp& mdp, const TokenSeq& x, const TokenSeq& y,
                              double beta) {
    if (y.empty()) throw std::invalid_argument("sequence_reward: empty response");
    Trajectory t = make_trajectory(mdp, x, y);
    return beta * (dpo.trajectory_logprob(mdp, t) - ref.trajectory_logprob(mdp, t));
}

/// Per-position reward vector for PPO. Token-level grants the teacher
/// log-ratio at every position; sequence-level grants the whole-sequence
/// reward at the final position only (EOS, or the cap step when no EOS was
/// emitted). Every position subtracts the KL penalty to the student's own
/// frozen reference.
inline std::vector<double> kl_penalized_rewards(RewardGranularity granularity,
                                                const TabularPolicy& student,
                                                const TabularPolicy& s_ref,
                                                const TabularPolicy& dpo,
                                                const TabularPolicy& ref, const TokenMdp& mdp,
                                                const TokenSeq& x, const TokenSeq& y,
                                                double beta) {
    if (granularity == RewardGranularity::distribution_level)
        throw std::invalid_argument(
            "kl_penalized_rewards: distribution-level has no per-token reward form");
    if (y.empty()) throw std::invalid_argument("kl_penalized_rewards: empty response");
    std::vector<double> out(y.size(), 0.0);
    State s = initial_state(x);
    for (std::size_t t = 0; t < y.size(); ++t) {
        int a = y[t];
        double lp_student = student.action_log_distribution(s)[static_cast<std::size_t>(a)];
        double lp_sref = s_ref.action_log_distribution(s)[static_cast<std::size_t>(a)];
        out[t] = -beta * (lp_student - lp_sref);
        if (granularity == RewardGranularity::token_level)
            out[t] += token_reward(dpo, ref, s, a, beta);
        s = transition(mdp, s, a);
    }
    if (granularity == RewardGranularity::sequence_level)
        out.back() += sequence_reward(dpo, ref, mdp, x, y, beta);
    return out;
}

// ---------------------------------------------------------------------------
// Bradley-Terry sequence reward model
// ---------------------------------------------------------------------------

using FeatureMap = std::function<std::vector<double>(const TokenSeq& x, const TokenSeq& y)>;

/// Default trajectory features: response length plus per-token occurrence
/// counts over the response.
inline FeatureMap default_feature_map(int vocab_size) {
    return [vocab_size](const TokenSeq& /*x*/, const TokenSeq& y) {
        std::vector<double> f(static_cast<std::size_t>(vocab_size) + 1, 0.0);
        f[0] = static_cast<double>(y.size());
        for (int t : y) f[static_cast<std::size_t>(t) + 1] += 1.0;
        return f;
    };
}

/// Linear scorer over trajectory features.
struct SequenceRewardModel {
    std::vector<double> weights;
    FeatureMap features;

    double score(const TokenSeq& x, const TokenSeq& y) const {
        std::vector<double> f = features(x, y);
        double s = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * f[i];
        return s;
    }
};

struct BtFitOptions {
    double reg = 1e-4;
    double lr = 0.5;
    int max_iters = 20000;
    double grad_tol = 1e-6;
};

inline double bt_rm_loss(const SequenceRewardModel& model, const PreferenceDataset& data,
                         double reg) {
    double loss = 0.0;
    for (const auto& t : data)
        loss -= log_sigmoid(model.score(t.x, t.y_w) - model.score(t.x, t.y_l));
    loss /= static_cast<double>(data.size());
    for (double w : model.weights) loss += reg * w * w;
    return loss;
}

/// Full-batch gradient descent on the pairwise logistic loss with L2
/// regularization, run until the gradient norm drops below grad_tol.
inline SequenceRewardModel bt_rm_fit(const PreferenceDataset& data, FeatureMap features,
                                     BtFitOptions opts = {}) {
    if (data.empty()) throw std::invalid_argument("bt_rm_fit: empty dataset");
    SequenceRewardModel model;
    model.features = std::move(features);
    std::size_t dim = model.features(data.front().x, data.front().y_w).size();
    model.weights.assign(dim, 0.0);
    if (dim == 0) return model; // no parameters: loss is log 2 forever

    for (int iter = 0; iter < opts.max_iters; ++iter) {
        std::vector<double> grad(dim, 0.0);
        for (const auto& t : data) {
            std::vector<double> fw = model.features(t.x, t.y_w);
            std::vector<double> fl = model.features(t.x, t.y_l);
            double margin = 0.0;
            for (std::size_t i = 0; i < dim; ++i)
                margin += model.weights[i] * (fw[i] - fl[i]);
            double coeff = sigmoid(margin) - 1.0;
            for (std::size_t i = 0; i < dim; ++i) grad[i] += coeff * (fw[i] - fl[i]);
        }
        double max_g = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            grad[i] = grad[i] / static_cast<double>(data.size()) + 2.0 * opts.reg * model.weights[i];
            max_g = std::max(max_g, std::fabs(grad[i]));
        }
        if (!all_finite(grad) || !all_finite(model.weights))
            throw DivergenceError("bt_rm_fit: non-finite parameters");
        if (max_g < opts.grad_tol) break;
        for (std::size_t i = 0; i < dim; ++i) model.weights[i] -= opts.lr * grad[i];
    }
    return model;
}

// ---------------------------------------------------------------------------
// PPO
// ---------------------------------------------------------------------------

/// One (state, action) visit in a rollout batch.
struct PpoStep {
    State state;
    StateKey key;
    int action = 0;
    double old_logprob = 0.0;
    double advantage = 0.0;
    double ret = 0.0; // empirical return-to-go
};

/// Tabular state-value estimates for the PPO baseline.
struct CriticTable {
    std::map<StateKey, double> values;
    double value(const StateKey& key) const {
        auto it = values.find(key);
        return it == values.end() ? 0.0 : it->second;
    }
};

/// Clipped-surrogate loss (minimization form) with its exact gradient:
/// -mean_t min(ratio*A, clip(ratio, 1-eps, 1+eps)*A).
inline LossResult ppo_surrogate_loss_and_grad(const TabularPolicy& policy,
                                              const std::vector<PpoStep>& batch,
                                              double clip_eps) {
    if (batch.empty()) throw std::invalid_argument("ppo_surrogate_loss_and_grad: empty batch");
    LossResult res;
    res.grad = GradientAccumulator(policy.vocab_size());
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (const PpoStep& step : batch) {
        std::vector<double> logp = log_softmax(policy.logits_for(step.key));
        double ratio = std::exp(logp[static_cast<std::size_t>(step.action)] - step.old_logprob);
        double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
        double u_plain = ratio * step.advantage;
        double u_clip = clipped * step.advantage;
        res.value -= inv_n * std::min(u_plain, u_clip);
        if (u_plain <= u_clip) {
            // unclipped branch active: d(ratio*A)/dz = A * ratio * (onehot - p)
            double c = inv_n * step.advantage * ratio;
            auto& g = res.grad.row(step.key);
            for (std::size_t j = 0; j < logp.size(); ++j) g[j] += c * std::exp(logp[j]);
            g[static_cast<std::size_t>(step.action)] -= c;
        }
        // clipped branch active: constant in theta, zero gradient
    }
    return res;
}

/// Vanilla advantage-weighted policy gradient on the same batch:
/// -mean_t A_t * grad log pi(a_t|s_t).
inline GradientAccumulator vanilla_policy_gradient(const TabularPolicy& policy,
                                                   const std::vector<PpoStep>& batch) {
    if (batch.empty()) throw std::invalid_argument("vanilla_policy_gradient: empty batch");
    GradientAccumulator grad(policy.vocab_size());
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (const PpoStep& step : batch) {
        std::vector<double> p = softmax(policy.logits_for(step.key));
        auto& g = grad.row(step.key);
        double c = inv_n * step.advantage;
        for (std::size_t j = 0; j < p.size(); ++j) g[j] += c * p[j];
        g[static_cast<std::size_t>(step.action)] -= c;
    }
    return grad;
}

struct PpoConfig {
    int epochs = 40;
    int rollouts_per_epoch = 16;
    int inner_epochs = 4;
    double clip_eps = 0.2;
    double lr = 0.3;
    double critic_lr = 0.3;
    int critic_steps = 4;
    double sft_weight = 1.0;
    int eval_cadence = 1;
};

/// A trained policy plus its trace; best_step is the eval-selected snapshot.
struct PhaseResult {
    TabularPolicy policy;
    std::vector<MetricsRecord> metrics;
    int best_step = 0;
    double best_eval = 0.0;
};

/// PPO on teacher-derived rewards (distilled PPO). Rollouts come from the
/// current student; rewards follow the chosen granularity with a KL penalty
/// to the student's frozen SFT snapshot; the SFT anchor term is added with
/// sft_weight. Returns the best checkpoint by exact held-out mean true reward.
inline PhaseResult dppo_train(TabularPolicy student, const TabularPolicy& s_ref,
                              const TabularPolicy& dpo, const TabularPolicy& ref,
                              RewardGranularity granularity, const PpoConfig& cfg,
                              const TokenMdp& mdp, const GroundTruthReward& truth,
                              const std::vector<InstructionPair>& sft_anchor, double beta,
                              std::uint64_t seed, const std::string& phase_name) {
    if (cfg.rollouts_per_epoch < 1) throw ConfigError("ppo.rollouts_per_epoch: must be >= 1");
    if (granularity == RewardGranularity::distribution_level)
        throw std::invalid_argument("dppo_train: use the offline advantage trainer instead");

    PhaseResult out;
    out.best_eval = expected_true_reward(student, mdp, truth);
    out.metrics.push_back(MetricsRecord{phase_name, 0, seed, out.best_eval, 0.0,
                                        mean_kl_to_reference(student, s_ref), 0});
    CriticTable critic;
    Optimizer policy_opt(OptimizerKind::gd, cfg.lr);
    std::uint64_t queries = 0;
    TabularPolicy best = student;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng rng = substream(seed, "rollout", static_cast<std::uint64_t>(epoch));
        std::vector<PpoStep> batch;
        for (int r = 0; r < cfg.rollouts_per_epoch; ++r) {
            const TokenSeq& prompt = mdp.prompts[static_cast<std::size_t>(r) % mdp.prompts.size()];
            Trajectory traj = student.sample_response(mdp, prompt, rng);
            std::vector<double> rewards = kl_penalized_rewards(
                granularity, student, s_ref, dpo, ref, mdp, prompt, traj.actions, beta);
            queries += granularity == RewardGranularity::token_level
                           ? traj.actions.size() // one teacher log-ratio per position
                           : 1;                  // one whole-sequence teacher score
            std::vector<State> states = visited_states(mdp, prompt, traj.actions);
            double ret = 0.0;
            std::vector<PpoStep> steps(traj.actions.size());
            for (int t = static_cast<int>(traj.actions.size()) - 1; t >= 0; --t) {
                ret += rewards[static_cast<std::size_t>(t)];
                auto& st = steps[static_cast<std::size_t>(t)];
                st.state = states[static_cast<std::size_t>(t)];
                st.key = state_key(st.state);
                st.action = traj.actions[static_cast<std::size_t>(t)];
                st.old_logprob = student.action_log_distribution(
                    st.state)[static_cast<std::size_t>(st.action)];
                st.ret = ret;
                st.advantage = ret - critic.value(st.key);
            }
            for (auto& st : steps) batch.push_back(std::move(st));
        }

        double last_loss = 0.0;
        for (int inner = 0; inner < cfg.inner_epochs; ++inner) {
            LossResult surrogate = ppo_surrogate_loss_and_grad(student, batch, cfg.clip_eps);
            GradientAccumulator total = surrogate.grad;
            double value = surrogate.value;
            if (cfg.sft_weight != 0.0 && !sft_anchor.empty()) {
                for (const auto& pair : sft_anchor) {
                    LossResult sft = sft_loss_and_grad(student, mdp, pair.x, pair.y);
                    total.add_scaled(sft.grad,
                                     cfg.sft_weight / static_cast<double>(sft_anchor.size()));
                    value += cfg.sft_weight * sft.value / static_cast<double>(sft_anchor.size());
                }
            }
            if (!total.finite()) throw DivergenceError("dppo_train: non-finite gradient");
            policy_opt.apply(student, total);
            last_loss = value;
        }
        for (int cs = 0; cs < cfg.critic_steps; ++cs) {
            // squared-error regression of V(s) toward empirical returns
            std::map<StateKey, std::pair<double, int>> residuals;
            for (const PpoStep& st : batch) {
                auto& [sum, n] = residuals[st.key];
                sum += critic.value(st.key) - st.ret;
                n += 1;
            }
            for (const auto& [key, acc] : residuals) {
                critic.values[key] = critic.value(key) -
                                     cfg.critic_lr * 2.0 * acc.first /
                                         static_cast<double>(batch.size());
            }
        }

        if (epoch % cfg.eval_cadence == 0 || epoch == cfg.epochs) {
            double eval = expected_true_reward(student, mdp, truth);
            out.metrics.push_back(MetricsRecord{phase_name, epoch, seed, eval, last_loss,
                                                mean_kl_to_reference(student, s_ref), queries});
            if (eval > out.best_eval) {
                out.best_eval = eval;
                out.best_step = epoch;
                best = student;
            }
        }
    }
    out.policy = std::move(best);
    return out;
}

// ---------------------------------------------------------------------------
// sample-complexity probes
// ---------------------------------------------------------------------------

struct ProbeResult {
    int best_action = 0;
    std::uint64_t queries = 0;
};

struct TeacherOracles {
    const TabularPolicy* dpo = nullptr;
    const TabularPolicy* ref = nullptr;
    const TokenMdp* mdp = nullptr;
    double beta = 1.0;
};

namespace detail {
/// Exact soft value of the continuation subtree under (pi_ref, beta) with the
/// teacher log-ratio as the per-step reward.
inline double soft_continuation_value(const TeacherOracles& o, const State& s) {
    if (s.terminal) return 0.0;
    std::vector<double> log_ref = o.ref->action_log_distribution(s);
    std::vector<double> terms(static_cast<std::size_t>(o.mdp->vocab_size));
    for (int a = 0; a < o.mdp->vocab_size; ++a) {
        double q = token_reward(*o.dpo, *o.ref, s, a, o.beta) +
                   soft_continuation_value(o, transition(*o.mdp, s, a));
        terms[static_cast<std::size_t>(a)] = log_ref[static_cast<std::size_t>(a)] + q / o.beta;
    }
    return o.beta * log_sum_exp(terms);
}
} // namespace detail

/// Counts the oracle interactions each reward granularity needs to name the
/// best next action: one distribution fetch, |A| token-reward queries, or
/// |A|^(T-t) fixed-depth simulations (actions after termination are absorbed
/// but each padded action string still costs one evaluation).
inline ProbeResult sample_complexity_probe(const State& s, RewardGranularity granularity,
                                           const TeacherOracles& o,
                                           std::uint64_t budget = kDefaultEnumerationBudget) {
    if (s.terminal) throw std::invalid_argument("sample_complexity_probe: terminal state");
    const int vocab = o.mdp->vocab_size;
    ProbeResult res;
    switch (granularity) {
        case RewardGranularity::distribution_level: {
            AdvantageView view = AdvantageView::exact(o.dpo, o.ref, o.beta);
            res.best_action = argmax_lowest(view.advantage(s));
            res.queries = 1;
            return res;
        }
        case RewardGranularity::token_level: {
            std::vector<double> r(static_cast<std::size_t>(vocab));
            for (int a = 0; a < vocab; ++a) {
                r[static_cast<std::size_t>(a)] = token_reward(*o.dpo, *o.ref, s, a, o.beta);
                ++res.queries;
            }
            res.best_action = argmax_lowest(r);
            return res;
        }
        case RewardGranularity::sequence_level: {
            int remaining = o.mdp->horizon - static_cast<int>(s.generated.size());
            std::uint64_t total = 1;
            for (int i = 0; i < remaining; ++i) {
                total *= static_cast<std::uint64_t>(vocab);
                if (total > budget)
                    throw BudgetExceededError("sample_complexity_probe: enumeration over budget");
            }
            // every padded action string is one simulated trajectory
            std::vector<int> digits(static_cast<std::size_t>(remaining), 0);
            for (std::uint64_t i = 0; i < total; ++i) {
                State cur = s;
                for (int d = 0; d < remaining; ++d) {
                    if (cur.terminal) break; // absorbing: padding consumes no steps
                    cur = transition(*o.mdp, cur, digits[static_cast<std::size_t>(d)]);
                }
                ++res.queries;
                for (int d = remaining - 1; d >= 0; --d) {
                    if (++digits[static_cast<std::size_t>(d)] < vocab) break;
                    digits[static_cast<std::size_t>(d)] = 0;
                }
            }
            std::vector<double> q(static_cast<std::size_t>(vocab));
            for (int a = 0; a < vocab; ++a)
                q[static_cast<std::size_t>(a)] =
                    token_reward(*o.dpo, *o.ref, s, a, o.beta) +
                    detail::soft_continuation_value(o, transition(*o.mdp, s, a));
            res.best_action = argmax_lowest(q);
            return res;
        }
    }
    throw std::invalid_argument("sample_complexity_probe: unknown granularity");
}

} // namespace alignlab
