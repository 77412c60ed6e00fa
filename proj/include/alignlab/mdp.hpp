#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignlab/errors.hpp"
#include "alignlab/rng.hpp"

namespace alignlab {

using TokenSeq = std::vector<int>;
using StateKey = std::string;

/// Finite token-level MDP: a vocabulary with a designated EOS token, a hard
/// length cap, and deterministic append transitions. Prompts are the initial
/// states. Immutable after construction.
struct TokenMdp {
    int vocab_size = 0; // includes EOS
    int eos_id = 0;
    int horizon = 0; // max generated length
    std::vector<TokenSeq> prompts;
};

/// A state is the prompt plus the tokens generated so far. Terminal iff the
/// last generated token is EOS or the generated length reached the horizon.
struct State {
    TokenSeq prompt;
    TokenSeq generated;
    bool terminal = false;
};

/// An action sequence rooted at a prompt. Terminal iff its final action is EOS
/// or its length reached the horizon.
struct Trajectory {
    TokenSeq prompt;
    TokenSeq actions;
    bool terminal = false;
};

inline StateKey make_key(const TokenSeq& prompt, const TokenSeq& generated) {
    StateKey k;
    k.reserve(3 * (prompt.size() + generated.size()));
    bool first = true;
    auto append = [&](const TokenSeq& xs) {
        for (int t : xs) {
            if (!first) k.push_back(',');
            k += std::to_string(t);
            first = false;
        }
    };
    append(prompt);
    append(generated);
    return k;
}

inline StateKey state_key(const State& s) { return make_key(s.prompt, s.generated); }

inline State initial_state(const TokenSeq& prompt) { return State{prompt, {}, false}; }

/// Deterministic append transition. Pure: the input state is unchanged.
inline State transition(const TokenMdp& mdp, const State& s, int action) {
    if (s.terminal) throw std::invalid_argument("transition: state is terminal");
    if (action < 0 || action >= mdp.vocab_size)
        throw std::invalid_argument("transition: action out of vocabulary");
    State next = s;
    next.generated.push_back(action);
    next.terminal = (action == mdp.eos_id) ||
                    (static_cast<int>(next.generated.size()) >= mdp.horizon);
    return next;
}

/// States s_1..s_{|y|} visited when emitting y from (prompt, ""). Throws if y
/// runs past a terminal state.
inline std::vector<State> visited_states(const TokenMdp& mdp, const TokenSeq& prompt,
                                         const TokenSeq& y) {
    std::vector<State> states;
    states.reserve(y.size());
    State s = initial_state(prompt);
    for (int a : y) {
        states.push_back(s);
        s = transition(mdp, s, a);
    }
    return states;
}

inline Trajectory make_trajectory(const TokenMdp& mdp, const TokenSeq& prompt,
                                  const TokenSeq& actions) {
    State s = initial_state(prompt);
    for (int a : actions) s = transition(mdp, s, a);
    return Trajectory{prompt, actions, s.terminal};
}

/// Number of terminal trajectories reachable within `horizon` steps: at each
/// step either EOS ends the trajectory or one of the other vocab_size-1 tokens
/// continues it; a zero-step remainder is the single horizon-cap leaf.
inline std::uint64_t count_terminal_trajectories(int vocab_size, int horizon) {
    std::uint64_t n = 1; // cap leaf
    for (int t = 0; t < horizon; ++t) {
        n = 1 + static_cast<std::uint64_t>(vocab_size - 1) * n;
    }
    return n;
}

inline constexpr std::uint64_t kDefaultEnumerationBudget = 1000000;

/// Every terminal trajectory from (prompt, ""), in lexicographic order of the
/// action sequence. Throws BudgetExceededError before allocating if the count
/// exceeds the budget.
inline std::vector<Trajectory> enumerate_trajectories(
    const TokenMdp& mdp, const TokenSeq& prompt,
    std::uint64_t budget = kDefaultEnumerationBudget) {
    std::uint64_t total = count_terminal_trajectories(mdp.vocab_size, mdp.horizon);
    if (total > budget)
        throw BudgetExceededError("enumerate_trajectories: " + std::to_string(total) +
                                  " trajectories exceed budget " + std::to_string(budget));
    std::vector<Trajectory> out;
    out.reserve(total);
    TokenSeq actions;
    // depth-first over actions 0..vocab-1 gives lexicographic order
    auto rec = [&](auto&& self, const State& s) -> void {
        for (int a = 0; a < mdp.vocab_size; ++a) {
            State next = transition(mdp, s, a);
            actions.push_back(a);
            if (next.terminal) {
                out.push_back(Trajectory{prompt, actions, true});
            } else {
                self(self, next);
            }
            actions.pop_back();
        }
    };
    rec(rec, initial_state(prompt));
    return out;
}

/// All states reachable from (prompt, ""), terminal states included, grouped
/// by generated length (group[d] holds depth-d states in lexicographic order).
inline std::vector<std::vector<State>> reachable_states_by_depth(const TokenMdp& mdp,
                                                                 const TokenSeq& prompt) {
    std::vector<std::vector<State>> groups(static_cast<std::size_t>(mdp.horizon) + 1);
    auto rec = [&](auto&& self, const State& s) -> void {
        groups[s.generated.size()].push_back(s);
        if (s.terminal) return;
        for (int a = 0; a < mdp.vocab_size; ++a) self(self, transition(mdp, s, a));
    };
    rec(rec, initial_state(prompt));
    return groups;
}

/// Ground-truth token-level reward table, defined on every reachable
/// non-terminal (state, action) pair of its task.
struct GroundTruthReward {
    std::map<StateKey, std::vector<double>> table;

    double value(const State& s, int action) const {
        auto it = table.find(state_key(s));
        if (it == table.end() || action < 0 ||
            action >= static_cast<int>(it->second.size()))
            throw std::domain_error("GroundTruthReward: no entry for (" + state_key(s) +
                                    ", " + std::to_string(action) + ")");
        return it->second[static_cast<std::size_t>(action)];
    }
};

/// Sum of per-step rewards along a trajectory.
inline double cumulative_reward(const TokenMdp& mdp, const GroundTruthReward& r,
                                const Trajectory& traj) {
    double total = 0.0;
    State s = initial_state(traj.prompt);
    for (int a : traj.actions) {
        total += r.value(s, a);
        s = transition(mdp, s, a);
    }
    return total;
}

/// Configuration for synthesizing a task. Prompts may be given explicitly or
/// generated as `num_prompts` distinct random sequences of non-EOS tokens.
struct TaskSpec {
    int vocab_size = 4;
    int eos_id = 0;
    int horizon = 3;
    std::vector<TokenSeq> prompts; // explicit; wins over num_prompts
    int num_prompts = 3;
    int prompt_len = 1;
    int max_prompt_len = 8;
    std::string reward_dist = "uniform"; // or "normal"
    double reward_scale = 1.0;
    // extra payoff drawn for actions taken at the last pre-horizon step;
    // responses that stop early forgo it. Zero keeps rewards plain i.i.d.;
    // positive values give tasks delayed structure that myopic decoding
    // cannot see.
    double final_bonus_scale = 0.0;
    std::uint64_t seed = 1;
};

struct SynthTask {
    TokenMdp mdp;
    GroundTruthReward reward;
};

inline void validate_task_spec(const TaskSpec& spec) {
    if (spec.vocab_size < 2)
        throw ConfigError("vocab_size: must be >= 2 (EOS plus at least one token)");
    if (spec.eos_id < 0 || spec.eos_id >= spec.vocab_size)
        throw ConfigError("eos_id: must be < vocab_size");
    if (spec.horizon < 1) throw ConfigError("horizon: must be >= 1");
    if (spec.reward_dist != "uniform" && spec.reward_dist != "normal")
        throw ConfigError("reward.distribution: unknown value '" + spec.reward_dist + "'");
    if (spec.reward_scale < 0.0) throw ConfigError("reward.scale: must be >= 0");
    if (spec.final_bonus_scale < 0.0)
        throw ConfigError("reward.final_bonus_scale: must be >= 0");
    if (spec.prompts.empty() && spec.num_prompts < 1)
        throw ConfigError("num_prompts: must be >= 1");
    for (const auto& p : spec.prompts) {
        if (static_cast<int>(p.size()) >= spec.max_prompt_len)
            throw ConfigError("prompts: prompt length must be < max_prompt_len");
        for (int t : p) {
            if (t < 0 || t >= spec.vocab_size)
                throw ConfigError("prompts: token out of vocabulary");
        }
    }
}

/// Deterministic task synthesis: prompts (if not explicit) and one reward
/// vector per reachable non-terminal state, drawn from the configured
/// distribution. Iteration over sorted state keys pins the draw order.
inline SynthTask synth_task(std::uint64_t seed, const TaskSpec& spec) {
    validate_task_spec(spec);
    TokenMdp mdp;
    mdp.vocab_size = spec.vocab_size;
    mdp.eos_id = spec.eos_id;
    mdp.horizon = spec.horizon;

    if (!spec.prompts.empty()) {
        mdp.prompts = spec.prompts;
    } else {
        if (spec.prompt_len >= spec.max_prompt_len)
            throw ConfigError("prompt_len: must be < max_prompt_len");
        std::vector<int> non_eos;
        for (int t = 0; t < spec.vocab_size; ++t)
            if (t != spec.eos_id) non_eos.push_back(t);
        double distinct = 1.0;
        for (int i = 0; i < spec.prompt_len; ++i) distinct *= static_cast<double>(non_eos.size());
        if (static_cast<double>(spec.num_prompts) > distinct)
            throw ConfigError("num_prompts: more prompts than distinct sequences of prompt_len");
        Rng rng = substream(seed, "prompts");
        std::set<TokenSeq> seen;
        while (static_cast<int>(mdp.prompts.size()) < spec.num_prompts) {
            TokenSeq p(static_cast<std::size_t>(spec.prompt_len));
            for (int& t : p) t = non_eos[rng.uniform_int(non_eos.size())];
            if (seen.insert(p).second) mdp.prompts.push_back(p);
        }
    }

    // collect non-terminal reachable states across all prompts (keys dedupe
    // overlapping subtrees); remember the deepest generated length per key so
    // the final-step bonus applies consistently
    std::map<StateKey, int> keys;
    for (const auto& prompt : mdp.prompts) {
        auto groups = reachable_states_by_depth(mdp, prompt);
        for (std::size_t d = 0; d < groups.size(); ++d) {
            for (const State& s : groups[d]) {
                if (s.terminal) continue;
                auto [it, fresh] = keys.emplace(state_key(s), static_cast<int>(d));
                if (!fresh) it->second = std::max(it->second, static_cast<int>(d));
            }
        }
    }

    GroundTruthReward reward;
    Rng rng = substream(seed, "rewards");
    auto draw = [&](double scale) {
        if (spec.reward_dist == "uniform") return scale * rng.uniform(-1.0, 1.0);
        double u1 = rng.uniform01(); // normal, Box-Muller
        double u2 = rng.uniform01();
        while (u1 <= 0.0) u1 = rng.uniform01();
        return scale * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    };
    for (const auto& [k, depth] : keys) {
        std::vector<double> row(static_cast<std::size_t>(mdp.vocab_size));
        for (double& v : row) v = draw(spec.reward_scale);
        if (depth == mdp.horizon - 1) {
            for (double& v : row) v += draw(spec.final_bonus_scale);
        }
        reward.table.emplace(k, std::move(row));
    }
    return SynthTask{std::move(mdp), std::move(reward)};
}

inline SynthTask synth_task(const TaskSpec& spec) { return synth_task(spec.seed, spec); }

} // namespace alignlab
