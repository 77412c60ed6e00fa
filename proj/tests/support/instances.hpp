#pragma once

// Randomized small fixtures shared by the property tests.

#include <cstdint>
#include <vector>

#include "alignlab/data.hpp"
#include "alignlab/mdp.hpp"
#include "alignlab/policy.hpp"
#include "alignlab/rng.hpp"

namespace alignlab::testing {

inline TokenMdp small_mdp(int vocab, int horizon, int n_prompts = 1) {
    TokenMdp mdp;
    mdp.vocab_size = vocab;
    mdp.eos_id = 0;
    mdp.horizon = horizon;
    for (int i = 0; i < n_prompts; ++i) mdp.prompts.push_back({1 + (i % (vocab - 1))});
    return mdp;
}

/// Policy with random logits on every reachable state of the mdp.
inline TabularPolicy random_policy(const TokenMdp& mdp, PolicyRole role, Rng& rng,
                                   double scale = 1.5) {
    TabularPolicy p(mdp.vocab_size, role);
    for (const auto& prompt : mdp.prompts) {
        for (const auto& group : reachable_states_by_depth(mdp, prompt)) {
            for (const State& s : group) {
                if (s.terminal) continue;
                auto& logits = p.mutable_logits(state_key(s));
                for (double& v : logits) v = rng.uniform(-scale, scale);
            }
        }
    }
    return p;
}

/// Random terminal response for a prompt under the uniform policy.
inline TokenSeq random_response(const TokenMdp& mdp, const TokenSeq& prompt, Rng& rng) {
    TabularPolicy uniform(mdp.vocab_size, PolicyRole::student);
    return uniform.sample_response(mdp, prompt, rng).actions;
}

/// Random preference triple with distinct responses.
inline PreferenceTriple random_triple(const TokenMdp& mdp, const TokenSeq& prompt, Rng& rng) {
    TokenSeq w = random_response(mdp, prompt, rng);
    TokenSeq l = random_response(mdp, prompt, rng);
    while (l == w) l = random_response(mdp, prompt, rng);
    return PreferenceTriple{prompt, w, l};
}

inline GroundTruthReward random_reward(const TokenMdp& mdp, Rng& rng, double scale = 1.0) {
    GroundTruthReward r;
    for (const auto& prompt : mdp.prompts) {
        for (const auto& group : reachable_states_by_depth(mdp, prompt)) {
            for (const State& s : group) {
                if (s.terminal) continue;
                auto [it, fresh] = r.table.emplace(
                    state_key(s), std::vector<double>(static_cast<std::size_t>(mdp.vocab_size)));
                if (!fresh) continue;
                for (double& v : it->second) v = rng.uniform(-scale, scale);
            }
        }
    }
    return r;
}

} // namespace alignlab::testing
