#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "alignlab/advantage.hpp"
#include "alignlab/data.hpp"
#include "alignlab/math.hpp"
#include "alignlab/mdp.hpp"
#include "alignlab/policy.hpp"

namespace alignlab {

/// Shared weights of the distillation objectives.
struct DistillHyperparams {
    double alpha = 1.0; // KD / DCKD constraint weight
    double beta = 0.05; // preference temperature
    double gamma = 1.0; // advantage-distillation weight

    void validate() const {
        if (!(beta > 0.0)) throw ConfigError("hyperparams.beta: must be > 0");
        if (alpha < 0.0) throw ConfigError("hyperparams.alpha: must be >= 0");
        if (gamma < 0.0) throw ConfigError("hyperparams.gamma: must be >= 0");
    }
};

/// Token-level distillation: mean over positions of NLL plus
/// alpha * KL(teacher || student).
inline LossResult kd_loss(const TabularPolicy& student, const TabularPolicy& teacher,
                          const TokenMdp& mdp, const TokenSeq& x, const TokenSeq& y,
                          double alpha) {
    if (y.empty()) throw std::invalid_argument("kd_loss: empty response");
    LossResult res;
    res.grad = GradientAccumulator(student.vocab_size());
    const double inv_len = 1.0 / static_cast<double>(y.size());
    State s = initial_state(x);
    for (int a : y) {
        StateKey key = state_key(s);
        std::vector<double> logp = log_softmax(student.logits_for(key));
        std::vector<double> p(logp.size());
        for (std::size_t i = 0; i < logp.size(); ++i) p[i] = std::exp(logp[i]);
        std::vector<double> pt = teacher.action_distribution(s);

        res.value -= inv_len * logp[static_cast<std::size_t>(a)];
        double kl = 0.0;
        for (std::size_t i = 0; i < pt.size(); ++i)
            if (pt[i] > 0.0) kl += pt[i] * (std::log(pt[i]) - logp[i]);
        res.value += inv_len * alpha * kl;

        auto& g = res.grad.row(key);
        for (std::size_t j = 0; j < p.size(); ++j)
            g[j] += inv_len * (p[j] + alpha * (p[j] - pt[j]));
        g[static_cast<std::size_t>(a)] -= inv_len;
        s = transition(mdp, s, a);
    }
    return res;
}

namespace detail {
/// Unnormalized sum over a response's states of KL(teacher || student), with
/// the matching student-logit gradient accumulated in place.
inline double kl_sum_to_teacher(const TabularPolicy& student, const TabularPolicy& teacher,
                                const TokenMdp& mdp, const TokenSeq& x, const TokenSeq& y,
                                double weight, GradientAccumulator& grad) {
    double total = 0.0;
    State s = initial_state(x);
    for (int a : y) {
        StateKey key = state_key(s);
        std::vector<double> logp = log_softmax(student.logits_for(key));
        std::vector<double> pt = teacher.action_distribution(s);
        double kl = 0.0;
        for (std::size_t i = 0; i < pt.size(); ++i)
            if (pt[i] > 0.0) kl += pt[i] * (std::log(pt[i]) - logp[i]);
        total += kl;
        auto& g = grad.row(key);
        for (std::size_t j = 0; j < pt.size(); ++j)
            g[j] += weight * (std::exp(logp[j]) - pt[j]);
        s = transition(mdp, s, a);
    }
    return total;
}
} // namespace detail

struct DckdOptions {
    bool include_dispreferred = true; // the KLD-l constraint
};

/// SFT on the preferred response plus alpha times the summed KL constraints to
/// the DPO teacher along both responses (the KL sums are not length-averaged).
inline LossResult dckd_loss(const TabularPolicy& student, const TabularPolicy& dpo_teacher,
                            const TokenMdp& mdp, const PreferenceTriple& triple,
                            double alpha, DckdOptions opts = {}) {
    if (triple.y_w.empty() || triple.y_l.empty())
        throw std::invalid_argument("dckd_loss: empty response");
    LossResult res = sft_loss_and_grad(student, mdp, triple.x, triple.y_w);
    res.value += alpha * detail::kl_sum_to_teacher(student, dpo_teacher, mdp, triple.x,
                                                   triple.y_w, alpha, res.grad);
    if (opts.include_dispreferred) {
        res.value += alpha * detail::kl_sum_to_teacher(student, dpo_teacher, mdp, triple.x,
                                                       triple.y_l, alpha, res.grad);
    }
    return res;
}

/// -log sigmoid(beta * (margin of log-prob ratios to the reference policy)).
inline LossResult dpo_loss(const TabularPolicy& policy, const TabularPolicy& ref,
                           const TokenMdp& mdp, const PreferenceTriple& triple,
                           double beta) {
    if (triple.y_w.empty() || triple.y_l.empty())
        throw std::invalid_argument("dpo_loss: empty response");
    Trajectory tw = make_trajectory(mdp, triple.x, triple.y_w);
    Trajectory tl = make_trajectory(mdp, triple.x, triple.y_l);
    double margin = beta * ((policy.trajectory_logprob(mdp, tw) - ref.trajectory_logprob(mdp, tw)) -
                            (policy.trajectory_logprob(mdp, tl) - ref.trajectory_logprob(mdp, tl)));
    LossResult res;
    res.value = -log_sigmoid(margin);
    res.grad = GradientAccumulator(policy.vocab_size());
    const double coeff = (sigmoid(margin) - 1.0) * beta; // dL/dmargin * beta
    auto accumulate = [&](const TokenSeq& y, double sign) {
        State s = initial_state(triple.x);
        for (int a : y) {
            StateKey key = state_key(s);
            std::vector<double> p = softmax(policy.logits_for(key));
            auto& g = res.grad.row(key);
            for (std::size_t j = 0; j < p.size(); ++j) g[j] -= sign * coeff * p[j];
            g[static_cast<std::size_t>(a)] += sign * coeff;
            s = transition(mdp, s, a);
        }
    };
    accumulate(triple.y_w, +1.0);
    accumulate(triple.y_l, -1.0);
    return res;
}

/// Dense per-action advantage vector at a state (beta * log-ratio).
inline std::vector<double> advantage(const AdvantageView& view, const State& s) {
    return view.advantage(s);
}

struct AdpaOptions {
    bool length_normalize = false; // divide the distillation sum by |y_hat|
};

namespace detail {
/// Log-ratio entries scattered into a dense vector; unsupported tokens read 0
/// so restricted sums over the support stay restricted.
inline std::vector<double> scattered_log_ratios(const AdvantageView& view, const State& s) {
    std::vector<double> rho(static_cast<std::size_t>(view.vocab_size()), 0.0);
    for (const auto& e : view.log_ratios(s)) rho[static_cast<std::size_t>(e.token)] = e.log_ratio;
    return rho;
}
} // namespace detail

/// SFT on the ground-truth response minus gamma times the student's expected
/// teacher log-ratio, summed over the generated response's states.
inline LossResult adpa_loss(const TabularPolicy& student, const AdvantageView& view,
                            const TokenMdp& mdp, const TokenSeq& x, const TokenSeq& y,
                            const TokenSeq& y_hat, double gamma, AdpaOptions opts = {}) {
    if (y.empty() || y_hat.empty()) throw std::invalid_argument("adpa_loss: empty response");
    LossResult res = sft_loss_and_grad(student, mdp, x, y);
    if (gamma == 0.0) return res;
    const double w = opts.length_normalize ? gamma / static_cast<double>(y_hat.size()) : gamma;
    State s = initial_state(x);
    for (int a : y_hat) {
        StateKey key = state_key(s);
        std::vector<double> p = softmax(student.logits_for(key));
        std::vector<double> rho = detail::scattered_log_ratios(view, s);
        double expect = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) expect += p[i] * rho[i];
        res.value -= w * expect;
        // d/dz_j of sum_a p_a rho_a = p_j (rho_j - E_p[rho])
        auto& g = res.grad.row(key);
        for (std::size_t j = 0; j < p.size(); ++j) g[j] -= w * p[j] * (rho[j] - expect);
        s = transition(mdp, s, a);
    }
    return res;
}

/// The same distillation gradient written as the score-function expectation
/// E_{a~pi}[grad log pi(a|s) * ratio(s,a)]; agrees entrywise with the direct
/// differentiation inside adpa_loss.
inline GradientAccumulator adpa_distill_grad_policy_form(const TabularPolicy& student,
                                                         const AdvantageView& view,
                                                         const TokenMdp& mdp, const TokenSeq& x,
                                                         const TokenSeq& y_hat, double gamma,
                                                         AdpaOptions opts = {}) {
    if (y_hat.empty())
        throw std::invalid_argument("adpa_distill_grad_policy_form: empty response");
    GradientAccumulator grad(student.vocab_size());
    const double w = opts.length_normalize ? gamma / static_cast<double>(y_hat.size()) : gamma;
    State s = initial_state(x);
    for (int tok : y_hat) {
        StateKey key = state_key(s);
        std::vector<double> p = softmax(student.logits_for(key));
        std::vector<double> rho = detail::scattered_log_ratios(view, s);
        auto& g = grad.row(key);
        // exact expectation over the action set: each action contributes
        // p_a * rho_a * (onehot_a - p)
        for (std::size_t a = 0; a < p.size(); ++a) {
            double weight = p[a] * rho[a];
            if (weight == 0.0) continue;
            for (std::size_t j = 0; j < p.size(); ++j) g[j] += w * weight * p[j];
            g[a] -= w * weight;
        }
        s = transition(mdp, s, tok);
    }
    return grad;
}

/// SFT plus mean cross-entropy toward the one-hot argmax of the advantage at
/// each generated state (ties to the lowest token index).
inline LossResult q_argmax_kd_loss(const TabularPolicy& student, const AdvantageView& view,
                                   const TokenMdp& mdp, const TokenSeq& x, const TokenSeq& y,
                                   const TokenSeq& y_hat, double gamma) {
    if (y.empty() || y_hat.empty())
        throw std::invalid_argument("q_argmax_kd_loss: empty response");
    LossResult res = sft_loss_and_grad(student, mdp, x, y);
    if (gamma == 0.0) return res;
    const double w = gamma / static_cast<double>(y_hat.size());
    State s = initial_state(x);
    for (int tok : y_hat) {
        StateKey key = state_key(s);
        auto entries = view.log_ratios(s);
        int target = entries.front().token;
        double best = view.beta() * entries.front().log_ratio;
        for (const auto& e : entries) {
            double a = view.beta() * e.log_ratio;
            if (a > best) { // entries are token-sorted, '>' keeps the lowest tied token
                best = a;
                target = e.token;
            }
        }
        std::vector<double> logp = log_softmax(student.logits_for(key));
        res.value -= w * logp[static_cast<std::size_t>(target)];
        auto& g = res.grad.row(key);
        for (std::size_t j = 0; j < logp.size(); ++j) g[j] += w * std::exp(logp[j]);
        g[static_cast<std::size_t>(target)] -= w;
        s = transition(mdp, s, tok);
    }
    return res;
}

/// SFT plus mean KL from softmax(advantage) to the student at each generated
/// state. With a truncated cache the target softmax spans the cached support.
inline LossResult q_softmax_kd_loss(const TabularPolicy& student, const AdvantageView& view,
                                    const TokenMdp& mdp, const TokenSeq& x, const TokenSeq& y,
                                    const TokenSeq& y_hat, double gamma) {
    if (y.empty() || y_hat.empty())
        throw std::invalid_argument("q_softmax_kd_loss: empty response");
    LossResult res = sft_loss_and_grad(student, mdp, x, y);
    if (gamma == 0.0) return res;
    const double w = gamma / static_cast<double>(y_hat.size());
    State s = initial_state(x);
    for (int tok : y_hat) {
        StateKey key = state_key(s);
        auto entries = view.log_ratios(s);
        std::vector<double> adv(entries.size());
        for (std::size_t i = 0; i < entries.size(); ++i) adv[i] = view.beta() * entries[i].log_ratio;
        std::vector<double> q = softmax(adv);
        std::vector<double> logp = log_softmax(student.logits_for(key));
        double kl = 0.0;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (q[i] > 0.0)
                kl += q[i] * (std::log(q[i]) - logp[static_cast<std::size_t>(entries[i].token)]);
        }
        res.value += w * kl;
        auto& g = res.grad.row(key);
        for (std::size_t j = 0; j < logp.size(); ++j) g[j] += w * std::exp(logp[j]);
        for (std::size_t i = 0; i < entries.size(); ++i)
            g[static_cast<std::size_t>(entries[i].token)] -= w * q[i];
        s = transition(mdp, s, tok);
    }
    return res;
}

} // namespace alignlab
