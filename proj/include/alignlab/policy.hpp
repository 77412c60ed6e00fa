#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "alignlab/errors.hpp"
#include "alignlab/math.hpp"
#include "alignlab/mdp.hpp"
#include "alignlab/rng.hpp"

namespace alignlab {

enum class PolicyRole { student, reference_teacher, dpo_teacher, student_reference };

inline std::string to_string(PolicyRole r) {
    switch (r) {
        case PolicyRole::student: return "student";
        case PolicyRole::reference_teacher: return "reference-teacher";
        case PolicyRole::dpo_teacher: return "dpo-teacher";
        case PolicyRole::student_reference: return "student-reference";
    }
    return "student";
}

inline PolicyRole policy_role_from_string(const std::string& s) {
    if (s == "student") return PolicyRole::student;
    if (s == "reference-teacher") return PolicyRole::reference_teacher;
    if (s == "dpo-teacher") return PolicyRole::dpo_teacher;
    if (s == "student-reference") return PolicyRole::student_reference;
    throw ConfigError("role: unknown policy role '" + s + "'");
}

/// Tabular softmax policy: one logit vector per visited state, uniform on
/// states it has never seen. Reads are const; training mutates through
/// mutable_logits only.
class TabularPolicy {
public:
    TabularPolicy() = default;
    TabularPolicy(int vocab_size, PolicyRole role)
        : vocab_size_(vocab_size), role_(role) {}

    int vocab_size() const { return vocab_size_; }
    PolicyRole role() const { return role_; }
    void set_role(PolicyRole r) { role_ = r; }

    const std::map<StateKey, std::vector<double>>& logits() const { return logits_; }
    bool has_state(const StateKey& key) const { return logits_.count(key) > 0; }

    /// Logit row for a state, materializing zeros (uniform) on first touch.
    std::vector<double>& mutable_logits(const StateKey& key) {
        auto it = logits_.find(key);
        if (it == logits_.end())
            it = logits_.emplace(key, std::vector<double>(static_cast<std::size_t>(vocab_size_), 0.0)).first;
        return it->second;
    }

    std::vector<double> logits_for(const StateKey& key) const {
        auto it = logits_.find(key);
        if (it != logits_.end()) return it->second;
        return std::vector<double>(static_cast<std::size_t>(vocab_size_), 0.0);
    }

    std::vector<double> action_distribution(const State& s) const {
        return softmax(logits_for(state_key(s)));
    }

    std::vector<double> action_log_distribution(const State& s) const {
        return log_softmax(logits_for(state_key(s)));
    }

    /// Sum of per-step log probabilities of the trajectory's actions.
    double trajectory_logprob(const TokenMdp& mdp, const Trajectory& traj) const {
        double lp = 0.0;
        State s = initial_state(traj.prompt);
        for (int a : traj.actions) {
            lp += action_log_distribution(s)[static_cast<std::size_t>(a)];
            s = transition(mdp, s, a);
        }
        return lp;
    }

    /// Ancestral sampling until EOS or the horizon cap.
    Trajectory sample_response(const TokenMdp& mdp, const TokenSeq& prompt, Rng& rng) const {
        TokenSeq actions;
        State s = initial_state(prompt);
        while (!s.terminal) {
            int a = rng.categorical(action_distribution(s));
            actions.push_back(a);
            s = transition(mdp, s, a);
        }
        return Trajectory{prompt, actions, true};
    }

    Trajectory sample_response(const TokenMdp& mdp, const TokenSeq& prompt,
                               std::uint64_t seed) const {
        Rng rng(seed);
        return sample_response(mdp, prompt, rng);
    }

    TabularPolicy clone_as(PolicyRole role) const {
        TabularPolicy copy = *this;
        copy.role_ = role;
        return copy;
    }

    void set_logits(std::map<StateKey, std::vector<double>> table) {
        logits_ = std::move(table);
    }

private:
    int vocab_size_ = 0;
    PolicyRole role_ = PolicyRole::student;
    std::map<StateKey, std::vector<double>> logits_;
};

/// Per-state d(loss)/d(logit) rows; only states a loss visited have entries.
struct GradientAccumulator {
    int vocab_size = 0;
    std::map<StateKey, std::vector<double>> rows;

    explicit GradientAccumulator(int vocab = 0) : vocab_size(vocab) {}

    std::vector<double>& row(const StateKey& key) {
        auto it = rows.find(key);
        if (it == rows.end())
            it = rows.emplace(key, std::vector<double>(static_cast<std::size_t>(vocab_size), 0.0)).first;
        return it->second;
    }

    void add(const StateKey& key, const std::vector<double>& g, double scale = 1.0) {
        auto& r = row(key);
        for (std::size_t i = 0; i < g.size(); ++i) r[i] += scale * g[i];
    }

    void add_entry(const StateKey& key, int action, double g) {
        row(key)[static_cast<std::size_t>(action)] += g;
    }

    void add_scaled(const GradientAccumulator& other, double scale) {
        for (const auto& [key, g] : other.rows) add(key, g, scale);
    }

    void scale(double c) {
        for (auto& [key, g] : rows)
            for (double& v : g) v *= c;
    }

    double max_abs() const {
        double m = 0.0;
        for (const auto& [key, g] : rows)
            for (double v : g) m = std::max(m, std::fabs(v));
        return m;
    }

    bool finite() const {
        for (const auto& [key, g] : rows)
            if (!all_finite(g)) return false;
        return true;
    }
};

struct LossResult {
    double value = 0.0;
    GradientAccumulator grad;
};

/// Mean next-token negative log-likelihood of y given (x, y_<t), with the
/// exact softmax cross-entropy gradient (p - onehot)/|y| per visited state.
inline LossResult sft_loss_and_grad(const TabularPolicy& policy, const TokenMdp& mdp,
                                    const TokenSeq& x, const TokenSeq& y) {
    if (y.empty()) throw std::invalid_argument("sft_loss_and_grad: empty response");
    LossResult res;
    res.grad = GradientAccumulator(policy.vocab_size());
    const double inv_len = 1.0 / static_cast<double>(y.size());
    State s = initial_state(x);
    for (int a : y) {
        StateKey key = state_key(s);
        std::vector<double> logp = log_softmax(policy.logits_for(key));
        res.value -= inv_len * logp[static_cast<std::size_t>(a)];
        auto& g = res.grad.row(key);
        for (int j = 0; j < policy.vocab_size(); ++j)
            g[static_cast<std::size_t>(j)] += inv_len * std::exp(logp[static_cast<std::size_t>(j)]);
        g[static_cast<std::size_t>(a)] -= inv_len;
        s = transition(mdp, s, a);
    }
    return res;
}

/// Exact expected cumulative ground-truth reward under the policy, averaged
/// over the task prompts: sum over enumerated trajectories of
/// exp(logprob) * R(tau). Noise-free, so training traces are reproducible.
inline double expected_true_reward(const TabularPolicy& policy, const TokenMdp& mdp,
                                   const GroundTruthReward& reward,
                                   std::uint64_t budget = kDefaultEnumerationBudget) {
    double total = 0.0;
    for (const auto& prompt : mdp.prompts) {
        double per_prompt = 0.0;
        for (const Trajectory& t : enumerate_trajectories(mdp, prompt, budget)) {
            per_prompt += std::exp(policy.trajectory_logprob(mdp, t)) *
                          cumulative_reward(mdp, reward, t);
        }
        total += per_prompt;
    }
    return total / static_cast<double>(mdp.prompts.size());
}

/// Mean KL(policy(.|s) || reference(.|s)) over the states in the policy's
/// table; a scalar drift diagnostic for metrics.
inline double mean_kl_to_reference(const TabularPolicy& policy, const TabularPolicy& ref) {
    if (policy.logits().empty()) return 0.0;
    double total = 0.0;
    for (const auto& [key, logits] : policy.logits()) {
        total += kl_divergence(softmax(logits), softmax(ref.logits_for(key)));
    }
    return total / static_cast<double>(policy.logits().size());
}

} // namespace alignlab
