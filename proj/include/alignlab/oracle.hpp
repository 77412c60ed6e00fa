#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignlab/advantage.hpp"
#include "alignlab/errors.hpp"
#include "alignlab/math.hpp"
#include "alignlab/mdp.hpp"
#include "alignlab/policy.hpp"

namespace alignlab {

/// Exact solution of the KL-regularized control problem on a task: soft
/// action values, soft state values, and the induced optimal policy
/// pi*(a|s) = pi_ref(a|s) * exp((Q*(s,a) - V*(s)) / beta).
struct OptimalSolution {
    std::map<StateKey, std::vector<double>> q_star; // non-terminal states
    std::map<StateKey, double> v_star;              // all reachable states; terminal = 0
    TabularPolicy pi_star;
    double beta = 1.0;
};

/// Sweeps reachable states from deepest generated length to the root. Each
/// non-terminal state gets Q(s,a) = r(s,a) + V(next) and
/// V(s) = beta * log sum_a pi_ref(a|s) exp(Q(s,a)/beta); terminal states are 0.
inline OptimalSolution backward_induction(const TokenMdp& mdp, const GroundTruthReward& reward,
                                          const TabularPolicy& ref, double beta,
                                          std::uint64_t budget = kDefaultEnumerationBudget) {
    if (!(beta > 0.0)) throw std::invalid_argument("backward_induction: beta must be > 0");
    std::uint64_t traj_count = 0;
    for (std::size_t i = 0; i < mdp.prompts.size(); ++i)
        traj_count += count_terminal_trajectories(mdp.vocab_size, mdp.horizon);
    if (traj_count > budget)
        throw BudgetExceededError("backward_induction: state space exceeds budget");

    OptimalSolution sol;
    sol.beta = beta;
    sol.pi_star = TabularPolicy(mdp.vocab_size, PolicyRole::dpo_teacher);

    // depth groups merged across prompts; duplicate keys resolve identically
    std::vector<std::map<StateKey, State>> by_depth(static_cast<std::size_t>(mdp.horizon) + 1);
    for (const auto& prompt : mdp.prompts) {
        auto groups = reachable_states_by_depth(mdp, prompt);
        for (std::size_t d = 0; d < groups.size(); ++d)
            for (const State& s : groups[d]) by_depth[d].emplace(state_key(s), s);
    }

    for (int d = mdp.horizon; d >= 0; --d) {
        for (const auto& [key, s] : by_depth[static_cast<std::size_t>(d)]) {
            if (s.terminal) {
                sol.v_star[key] = 0.0; // no reward can follow the final action
                continue;
            }
            std::vector<double> log_ref = ref.action_log_distribution(s);
            std::vector<double> q(static_cast<std::size_t>(mdp.vocab_size));
            std::vector<double> lse_terms(static_cast<std::size_t>(mdp.vocab_size));
            for (int a = 0; a < mdp.vocab_size; ++a) {
                State next = transition(mdp, s, a);
                double v_next = sol.v_star.at(state_key(next));
                q[static_cast<std::size_t>(a)] = reward.value(s, a) + v_next;
                lse_terms[static_cast<std::size_t>(a)] =
                    log_ref[static_cast<std::size_t>(a)] + q[static_cast<std::size_t>(a)] / beta;
            }
            double v = beta * log_sum_exp(lse_terms);
            std::vector<double> log_pi(static_cast<std::size_t>(mdp.vocab_size));
            for (int a = 0; a < mdp.vocab_size; ++a)
                log_pi[static_cast<std::size_t>(a)] =
                    log_ref[static_cast<std::size_t>(a)] +
                    (q[static_cast<std::size_t>(a)] - v) / beta;
            sol.v_star[key] = v;
            sol.q_star[key] = std::move(q);
            sol.pi_star.mutable_logits(key) = std::move(log_pi);
        }
    }
    return sol;
}

struct TelescopeReport {
    double reward_sum = 0.0;     // sum of token rewards along the trajectory
    double log_ratio_form = 0.0; // beta * sum log(pi*/pi_ref) + V*(s1)
    double abs_diff = 0.0;
};

/// The cumulative reward of any terminal trajectory equals the beta-scaled
/// log-ratio sum under pi* plus the root state value.
inline TelescopeReport telescoping_check(const OptimalSolution& sol, const TokenMdp& mdp,
                                         const GroundTruthReward& reward,
                                         const TabularPolicy& ref, double beta,
                                         const Trajectory& traj) {
    if (!traj.terminal) throw std::invalid_argument("telescoping_check: trajectory not terminal");
    TelescopeReport rep;
    State s = initial_state(traj.prompt);
    rep.log_ratio_form = sol.v_star.at(state_key(s));
    for (int a : traj.actions) {
        rep.reward_sum += reward.value(s, a);
        double lp_star = sol.pi_star.action_log_distribution(s)[static_cast<std::size_t>(a)];
        double lp_ref = ref.action_log_distribution(s)[static_cast<std::size_t>(a)];
        rep.log_ratio_form += beta * (lp_star - lp_ref);
        s = transition(mdp, s, a);
    }
    rep.abs_diff = std::fabs(rep.reward_sum - rep.log_ratio_form);
    return rep;
}

struct ImplicitRewardDelta {
    double implicit = 0.0; // beta * (log-ratio(tau_w) - log-ratio(tau_l)) under pi*
    double true_delta = 0.0;
};

/// Between two trajectories sharing a prompt, the root value cancels and the
/// implicit reward margin equals the true cumulative reward difference.
inline ImplicitRewardDelta implicit_reward_identity(const OptimalSolution& sol,
                                                    const TokenMdp& mdp,
                                                    const GroundTruthReward& reward,
                                                    const TabularPolicy& ref, double beta,
                                                    const Trajectory& traj_w,
                                                    const Trajectory& traj_l) {
    if (traj_w.prompt != traj_l.prompt)
        throw std::invalid_argument("implicit_reward_identity: prompts differ");
    auto log_ratio = [&](const Trajectory& t) {
        return sol.pi_star.trajectory_logprob(mdp, t) - ref.trajectory_logprob(mdp, t);
    };
    ImplicitRewardDelta d;
    d.implicit = beta * (log_ratio(traj_w) - log_ratio(traj_l));
    d.true_delta = cumulative_reward(mdp, reward, traj_w) - cumulative_reward(mdp, reward, traj_l);
    return d;
}

/// Max over (state, action) of |(Q* - V*) - beta*log(pi*/pi_ref)|.
inline double advantage_identity_check(const OptimalSolution& sol, const TabularPolicy& ref) {
    double max_dev = 0.0;
    for (const auto& [key, q] : sol.q_star) {
        double v = sol.v_star.at(key);
        std::vector<double> lp_star = log_softmax(sol.pi_star.logits_for(key));
        std::vector<double> lp_ref = log_softmax(ref.logits_for(key));
        for (std::size_t a = 0; a < q.size(); ++a) {
            double dev = std::fabs((q[a] - v) - sol.beta * (lp_star[a] - lp_ref[a]));
            max_dev = std::max(max_dev, dev);
        }
    }
    return max_dev;
}

/// Argmax of the dense advantage vector at a state (distribution-level view).
inline int best_action_distribution(const AdvantageView& view, const State& s) {
    if (s.terminal) throw std::invalid_argument("best_action_distribution: terminal state");
    return argmax_lowest(view.advantage(s));
}

/// Argmax of the immediate token-level reward.
inline int best_action_token(const GroundTruthReward& reward, const State& s) {
    if (s.terminal) throw std::invalid_argument("best_action_token: terminal state");
    auto it = reward.table.find(state_key(s));
    if (it == reward.table.end()) throw std::domain_error("best_action_token: missing state");
    return argmax_lowest(it->second);
}

/// Argmax of the exact soft action values (sequence-level view, computed from
/// exhaustive continuation enumeration inside backward_induction).
inline int best_action_sequence(const OptimalSolution& sol, const State& s) {
    if (s.terminal) throw std::invalid_argument("best_action_sequence: terminal state");
    auto it = sol.q_star.find(state_key(s));
    if (it == sol.q_star.end()) throw std::domain_error("best_action_sequence: state not solved");
    return argmax_lowest(it->second);
}

} // namespace alignlab
