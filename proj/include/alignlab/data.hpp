#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignlab/math.hpp"
#include "alignlab/mdp.hpp"
#include "alignlab/policy.hpp"
#include "alignlab/rng.hpp"

namespace alignlab {

/// A labeled preference pair; both responses are terminal trajectories of the
/// task MDP and y_w != y_l.
struct PreferenceTriple {
    TokenSeq x;
    TokenSeq y_w;
    TokenSeq y_l;
};

using PreferenceDataset = std::vector<PreferenceTriple>;

struct InstructionPair {
    TokenSeq x;
    TokenSeq y;
};

/// Prompt, ground-truth response, and a generated response whose prefixes
/// supply the distillation states.
struct OnPolicyItem {
    TokenSeq x;
    TokenSeq y;
    TokenSeq y_hat;
};

enum class InstructionDecode { greedy, optimal };

/// One demonstration per prompt. `greedy` picks the highest immediate reward
/// token step by step (ties to the lowest token index) and is deliberately
/// myopic; `optimal` takes the argmax-cumulative-reward trajectory from full
/// enumeration (ties to the lexicographically smallest action sequence).
inline std::vector<InstructionPair> make_instruction_data(
    const TokenMdp& mdp, const GroundTruthReward& reward,
    InstructionDecode decode = InstructionDecode::greedy,
    std::uint64_t budget = kDefaultEnumerationBudget) {
    std::vector<InstructionPair> out;
    out.reserve(mdp.prompts.size());
    for (const auto& prompt : mdp.prompts) {
        if (decode == InstructionDecode::greedy) {
            TokenSeq y;
            State s = initial_state(prompt);
            while (!s.terminal) {
                auto it = reward.table.find(state_key(s));
                if (it == reward.table.end())
                    throw std::domain_error("make_instruction_data: reward missing state");
                int a = argmax_lowest(it->second);
                y.push_back(a);
                s = transition(mdp, s, a);
            }
            out.push_back(InstructionPair{prompt, y});
        } else {
            auto trajs = enumerate_trajectories(mdp, prompt, budget);
            const Trajectory* best = &trajs.front();
            double best_r = cumulative_reward(mdp, reward, trajs.front());
            for (const auto& t : trajs) {
                double r = cumulative_reward(mdp, reward, t);
                if (r > best_r) { // lexicographic enumeration order breaks ties
                    best_r = r;
                    best = &t;
                }
            }
            out.push_back(InstructionPair{prompt, best->actions});
        }
    }
    return out;
}

/// Samples preference pairs: two distinct responses per pair, labeled
/// preferred with probability sigmoid(R(t1) - R(t2)) on the ground-truth
/// cumulative rewards. Prompts cycle round-robin. Each response draws from
/// `sampler`, or from `alt_sampler` with probability alt_prob when one is
/// given (a mixture imitates pairs pooled from models of different quality).
inline PreferenceDataset synth_preference_data(const TokenMdp& mdp,
                                               const GroundTruthReward& reward,
                                               const TabularPolicy& sampler, int n_pairs,
                                               Rng& rng,
                                               const TabularPolicy* alt_sampler = nullptr,
                                               double alt_prob = 0.0) {
    if (n_pairs < 1) throw std::invalid_argument("synth_preference_data: n_pairs >= 1");
    PreferenceDataset out;
    out.reserve(static_cast<std::size_t>(n_pairs));
    constexpr int kMaxResample = 256;
    auto draw = [&](const TokenSeq& prompt) {
        const TabularPolicy& pick =
            alt_sampler && rng.bernoulli(alt_prob) ? *alt_sampler : sampler;
        return pick.sample_response(mdp, prompt, rng);
    };
    for (int i = 0; i < n_pairs; ++i) {
        const TokenSeq& prompt = mdp.prompts[static_cast<std::size_t>(i) % mdp.prompts.size()];
        Trajectory t1 = draw(prompt);
        Trajectory t2 = draw(prompt);
        int attempts = 0;
        while (t2.actions == t1.actions) {
            if (++attempts > kMaxResample)
                throw std::runtime_error(
                    "synth_preference_data: prompt has fewer than 2 reachable responses");
            t2 = draw(prompt);
        }
        double r1 = cumulative_reward(mdp, reward, t1);
        double r2 = cumulative_reward(mdp, reward, t2);
        bool first_preferred = rng.bernoulli(sigmoid(r1 - r2));
        if (first_preferred)
            out.push_back(PreferenceTriple{prompt, t1.actions, t2.actions});
        else
            out.push_back(PreferenceTriple{prompt, t2.actions, t1.actions});
    }
    return out;
}

inline PreferenceDataset synth_preference_data(const TokenMdp& mdp,
                                               const GroundTruthReward& reward,
                                               const TabularPolicy& sampler, int n_pairs,
                                               std::uint64_t seed) {
    Rng rng = substream(seed, "pref-data");
    return synth_preference_data(mdp, reward, sampler, n_pairs, rng);
}

/// Pairs whose two responses come from two fixed, distinct policies (the
/// shape of pooled comparison data: candidate responses from different models,
/// ranked by one judge).
inline PreferenceDataset synth_preference_data_two(const TokenMdp& mdp,
                                                   const GroundTruthReward& reward,
                                                   const TabularPolicy& first,
                                                   const TabularPolicy& second, int n_pairs,
                                                   Rng& rng) {
    if (n_pairs < 1) throw std::invalid_argument("synth_preference_data_two: n_pairs >= 1");
    PreferenceDataset out;
    out.reserve(static_cast<std::size_t>(n_pairs));
    constexpr int kMaxResample = 256;
    for (int i = 0; i < n_pairs; ++i) {
        const TokenSeq& prompt = mdp.prompts[static_cast<std::size_t>(i) % mdp.prompts.size()];
        Trajectory t1 = first.sample_response(mdp, prompt, rng);
        Trajectory t2 = second.sample_response(mdp, prompt, rng);
        int attempts = 0;
        while (t2.actions == t1.actions) {
            if (++attempts > kMaxResample)
                throw std::runtime_error(
                    "synth_preference_data_two: prompt has fewer than 2 reachable responses");
            t2 = second.sample_response(mdp, prompt, rng);
        }
        double r1 = cumulative_reward(mdp, reward, t1);
        double r2 = cumulative_reward(mdp, reward, t2);
        bool first_preferred = rng.bernoulli(sigmoid(r1 - r2));
        if (first_preferred)
            out.push_back(PreferenceTriple{prompt, t1.actions, t2.actions});
        else
            out.push_back(PreferenceTriple{prompt, t2.actions, t1.actions});
    }
    return out;
}

/// Opinionated random policy standing in for an external model: every
/// reachable state gets logits drawn from the given stream.
inline TabularPolicy make_foreign_policy(const TokenMdp& mdp, Rng& rng, double scale,
                                         PolicyRole role = PolicyRole::student) {
    TabularPolicy p(mdp.vocab_size, role);
    std::set<StateKey> seen;
    for (const auto& prompt : mdp.prompts) {
        for (const auto& group : reachable_states_by_depth(mdp, prompt)) {
            for (const State& s : group) {
                if (s.terminal) continue;
                StateKey key = state_key(s);
                if (!seen.insert(key).second) continue;
                for (double& v : p.mutable_logits(key)) v = rng.uniform(-scale, scale);
            }
        }
    }
    return p;
}

} // namespace alignlab
