#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignlab/errors.hpp"
#include "alignlab/math.hpp"
#include "alignlab/mdp.hpp"
#include "alignlab/policy.hpp"

namespace alignlab {

struct AdvantageEntry {
    int token;
    double log_ratio; // log pi_dpo - log pi_ref (beta applied at query time)
};

/// Truncated per-state log-probability differences between the two teachers.
/// Per state: the DPO teacher's top-k tokens each carry a value; a token
/// outside the reference's top-k substitutes the reference's lowest in-set
/// probability; reference-only tokens are omitted. Entries sorted by token.
struct TopKAdvantageCache {
    int k = 0;
    int vocab_size = 0;
    std::string dpo_hash;
    std::string ref_hash;
    bool prob_space_subtraction = false;
    std::map<StateKey, std::vector<AdvantageEntry>> entries;
};

namespace detail {
/// Token indices of the k largest probabilities; ties prefer lower tokens.
inline std::vector<int> top_k_tokens(const std::vector<double>& probs, int k) {
    std::vector<int> idx(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) idx[i] = static_cast<int>(i);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return probs[static_cast<std::size_t>(a)] >
                                                probs[static_cast<std::size_t>(b)]; });
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}
} // namespace detail

inline TopKAdvantageCache build_advantage_cache(const TabularPolicy& dpo,
                                                const TabularPolicy& ref,
                                                const std::vector<State>& states, int k,
                                                bool prob_space_subtraction = false) {
    if (k < 1) throw std::invalid_argument("build_advantage_cache: k >= 1");
    TopKAdvantageCache cache;
    cache.vocab_size = dpo.vocab_size();
    cache.k = std::min(k, cache.vocab_size); // k past the vocabulary is exact anyway
    cache.prob_space_subtraction = prob_space_subtraction;
    for (const State& s : states) {
        StateKey key = state_key(s);
        if (cache.entries.count(key)) continue;
        std::vector<double> p_dpo = dpo.action_distribution(s);
        std::vector<double> p_ref = ref.action_distribution(s);
        std::vector<int> dpo_top = detail::top_k_tokens(p_dpo, cache.k);
        std::vector<int> ref_top = detail::top_k_tokens(p_ref, cache.k);
        double ref_floor = p_ref[static_cast<std::size_t>(ref_top.back())];
        std::vector<bool> in_ref(p_ref.size(), false);
        for (int t : ref_top) in_ref[static_cast<std::size_t>(t)] = true;

        std::vector<AdvantageEntry> row;
        row.reserve(dpo_top.size());
        for (int t : dpo_top) {
            double lp_dpo = std::log(p_dpo[static_cast<std::size_t>(t)]);
            double value;
            if (in_ref[static_cast<std::size_t>(t)]) {
                value = lp_dpo - std::log(p_ref[static_cast<std::size_t>(t)]);
            } else if (prob_space_subtraction) {
                value = lp_dpo - ref_floor;
            } else {
                value = lp_dpo - std::log(ref_floor);
            }
            row.push_back(AdvantageEntry{t, value});
        }
        std::sort(row.begin(), row.end(),
                  [](const AdvantageEntry& a, const AdvantageEntry& b) { return a.token < b.token; });
        cache.entries.emplace(std::move(key), std::move(row));
    }
    return cache;
}

/// Per-state preference signal served to the distillation losses. Exact
/// backing computes beta*(log pi_dpo - log pi_ref) from the two teachers;
/// cache backing replays precomputed truncated entries; the dpo_only backing
/// drops the reference teacher and serves log pi_dpo (ablation).
class AdvantageView {
public:
    static AdvantageView exact(const TabularPolicy* dpo, const TabularPolicy* ref,
                               double beta) {
        AdvantageView v;
        v.kind_ = Kind::exact;
        v.dpo_ = dpo;
        v.ref_ = ref;
        v.beta_ = beta;
        return v;
    }

    static AdvantageView dpo_only(const TabularPolicy* dpo, double beta) {
        AdvantageView v;
        v.kind_ = Kind::dpo_only;
        v.dpo_ = dpo;
        v.beta_ = beta;
        return v;
    }

    static AdvantageView cached(const TopKAdvantageCache* cache, double beta) {
        AdvantageView v;
        v.kind_ = Kind::cached;
        v.cache_ = cache;
        v.beta_ = beta;
        return v;
    }

    double beta() const { return beta_; }
    int vocab_size() const {
        return kind_ == Kind::cached ? cache_->vocab_size : dpo_->vocab_size();
    }
    bool full_support() const {
        return kind_ != Kind::cached || cache_->k >= cache_->vocab_size;
    }

    /// Supported (token, log-ratio) pairs at a state, sorted by token.
    std::vector<AdvantageEntry> log_ratios(const State& s) const {
        switch (kind_) {
            case Kind::exact: {
                std::vector<double> ld = dpo_->action_log_distribution(s);
                std::vector<double> lr = ref_->action_log_distribution(s);
                std::vector<AdvantageEntry> out(ld.size());
                for (std::size_t i = 0; i < ld.size(); ++i)
                    out[i] = AdvantageEntry{static_cast<int>(i), ld[i] - lr[i]};
                return out;
            }
            case Kind::dpo_only: {
                std::vector<double> ld = dpo_->action_log_distribution(s);
                std::vector<AdvantageEntry> out(ld.size());
                for (std::size_t i = 0; i < ld.size(); ++i)
                    out[i] = AdvantageEntry{static_cast<int>(i), ld[i]};
                return out;
            }
            case Kind::cached: {
                auto it = cache_->entries.find(state_key(s));
                if (it == cache_->entries.end())
                    throw CacheMissError("AdvantageView: no cached entries for state " +
                                         state_key(s));
                return it->second;
            }
        }
        return {};
    }

    /// Dense per-action advantage beta*log_ratio. Requires full support
    /// (exact backing or an untruncated cache).
    std::vector<double> advantage(const State& s) const {
        if (!full_support())
            throw std::logic_error("AdvantageView::advantage: truncated cache has partial "
                                   "support; use log_ratios()");
        std::vector<double> out(static_cast<std::size_t>(vocab_size()), 0.0);
        for (const auto& e : log_ratios(s)) out[static_cast<std::size_t>(e.token)] = beta_ * e.log_ratio;
        return out;
    }

private:
    enum class Kind { exact, dpo_only, cached };
    Kind kind_ = Kind::exact;
    const TabularPolicy* dpo_ = nullptr;
    const TabularPolicy* ref_ = nullptr;
    const TopKAdvantageCache* cache_ = nullptr;
    double beta_ = 1.0;
};

} // namespace alignlab
