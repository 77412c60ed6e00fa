#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "alignlab/errors.hpp"
#include "alignlab/policy.hpp"

namespace alignlab {

enum class OptimizerKind { gd, adam };

inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
    if (s == "gd") return OptimizerKind::gd;
    if (s == "adam") return OptimizerKind::adam;
    throw ConfigError("optimizer.kind: unknown value '" + s + "'");
}

/// Full-batch descent on tabular logits. Plain GD is the default; Adam is
/// available with the usual beta1=0.9, beta2=0.999 moments.
class Optimizer {
public:
    explicit Optimizer(OptimizerKind kind = OptimizerKind::gd, double lr = 0.1)
        : kind_(kind), lr_(lr) {}

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

    void apply(TabularPolicy& policy, const GradientAccumulator& grad) {
        if (kind_ == OptimizerKind::gd) {
            for (const auto& [key, g] : grad.rows) {
                auto& logits = policy.mutable_logits(key);
                for (std::size_t i = 0; i < g.size(); ++i) logits[i] -= lr_ * g[i];
            }
            return;
        }
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, step_);
        const double bc2 = 1.0 - std::pow(beta2_, step_);
        for (const auto& [key, g] : grad.rows) {
            auto& logits = policy.mutable_logits(key);
            auto& mrow = m_[key];
            auto& vrow = v_[key];
            if (mrow.size() != g.size()) mrow.assign(g.size(), 0.0);
            if (vrow.size() != g.size()) vrow.assign(g.size(), 0.0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                mrow[i] = beta1_ * mrow[i] + (1.0 - beta1_) * g[i];
                vrow[i] = beta2_ * vrow[i] + (1.0 - beta2_) * g[i] * g[i];
                logits[i] -= lr_ * (mrow[i] / bc1) / (std::sqrt(vrow[i] / bc2) + eps_);
            }
        }
    }

private:
    OptimizerKind kind_;
    double lr_;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    int step_ = 0;
    std::map<StateKey, std::vector<double>> m_, v_;
};

} // namespace alignlab
